//! Run configuration: named presets expanding to full hyper-parameter sets,
//! plus a TOML/JSON config file format that can override any field.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bilateral::BilateralConfig;
use crate::error::{Error, Result};
use crate::estimator::TrainConfig;
use crate::synth::SynthConfig;

/// Named hyper-parameter bundles. `pwcc_v1` is the plain variant; `pwcc_v2`
/// adds stronger smoothness regularization and label smoothing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    PwccV1,
    PwccV2,
    Custom,
}

impl std::str::FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pwcc_v1" => Ok(Preset::PwccV1),
            "pwcc_v2" => Ok(Preset::PwccV2),
            "custom" => Ok(Preset::Custom),
            other => Err(Error::Config(format!(
                "unknown preset '{other}' (expected pwcc_v1, pwcc_v2, or custom)"
            ))),
        }
    }
}

impl std::fmt::Display for Preset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Preset::PwccV1 => "pwcc_v1",
            Preset::PwccV2 => "pwcc_v2",
            Preset::Custom => "custom",
        };
        write!(f, "{s}")
    }
}

impl Preset {
    /// Applies the preset's training hyper-parameters on top of a base
    /// config; `Custom` leaves the base untouched.
    pub fn apply(self, base: &mut TrainConfig) {
        match self {
            Preset::PwccV1 => {
                base.lambda_tv = 2e-4;
                base.lr = 5e-4;
                base.label_smooth = false;
            }
            Preset::PwccV2 => {
                base.lambda_tv = 2e-3;
                base.lr = 1e-4;
                base.label_smooth = true;
            }
            Preset::Custom => {}
        }
    }

    /// Whether bilateral post-filtering is on by default for this preset.
    pub fn filtering(self) -> bool {
        match self {
            Preset::PwccV1 | Preset::PwccV2 => true,
            Preset::Custom => false,
        }
    }
}

fn default_preset() -> Preset {
    Preset::Custom
}

/// Top-level config file accepted by the CLI (TOML or JSON, by extension).
/// Sections are optional; command-line flags override file values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default = "default_preset")]
    pub preset: Preset,
    #[serde(default)]
    pub synth: Option<SynthConfig>,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub filter: Option<BilateralConfig>,
    /// Apply bilateral post-filtering to predicted maps during eval/infer.
    #[serde(default)]
    pub filtering: Option<bool>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            preset: Preset::Custom,
            synth: None,
            train: None,
            filter: None,
            filtering: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::io(path, source))?;
        let is_json = path
            .extension()
            .map(|e| e.eq_ignore_ascii_case("json"))
            .unwrap_or(false);
        if is_json {
            serde_json::from_str(&text).map_err(|source| Error::Json {
                path: path.to_path_buf(),
                source,
            })
        } else {
            toml::from_str(&text)
                .map_err(|source| Error::format(path, format!("invalid TOML: {source}")))
        }
    }

    /// Final training config: file values (or defaults), with the preset's
    /// hyper-parameters applied on top.
    pub fn resolved_train(&self) -> TrainConfig {
        let mut cfg = self.train.clone().unwrap_or_default();
        self.preset.apply(&mut cfg);
        cfg
    }

    pub fn resolved_filter(&self) -> BilateralConfig {
        self.filter.clone().unwrap_or_default()
    }

    pub fn resolved_filtering(&self) -> bool {
        self.filtering.unwrap_or_else(|| self.preset.filtering())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn preset_v1_values() {
        let mut cfg = TrainConfig::default();
        Preset::PwccV1.apply(&mut cfg);
        assert_eq!(cfg.lambda_tv, 2e-4);
        assert_eq!(cfg.lr, 5e-4);
        assert!(!cfg.label_smooth);
        assert!(Preset::PwccV1.filtering());
    }

    #[test]
    fn preset_v2_values() {
        let mut cfg = TrainConfig::default();
        Preset::PwccV2.apply(&mut cfg);
        assert_eq!(cfg.lambda_tv, 2e-3);
        assert_eq!(cfg.lr, 1e-4);
        assert!(cfg.label_smooth);
        assert!(Preset::PwccV2.filtering());
    }

    #[test]
    fn custom_preset_leaves_overrides_alone() {
        let mut cfg = TrainConfig {
            lambda_tv: 0.5,
            lr: 0.1,
            label_smooth: true,
            ..TrainConfig::default()
        };
        Preset::Custom.apply(&mut cfg);
        assert_eq!(cfg.lambda_tv, 0.5);
        assert_eq!(cfg.lr, 0.1);
        assert!(cfg.label_smooth);
        assert!(!Preset::Custom.filtering());
    }

    #[test]
    fn parse_preset_names() {
        assert_eq!("pwcc_v1".parse::<Preset>().unwrap(), Preset::PwccV1);
        assert_eq!("pwcc_v2".parse::<Preset>().unwrap(), Preset::PwccV2);
        assert!("v3".parse::<Preset>().is_err());
        assert_eq!(Preset::PwccV2.to_string(), "pwcc_v2");
    }

    #[test]
    fn load_toml_and_json() {
        let dir = tempdir().unwrap();
        let toml_path = dir.path().join("run.toml");
        std::fs::write(
            &toml_path,
            "preset = \"pwcc_v2\"\n\n[train]\nepochs = 10\nseed = 7\n",
        )
        .unwrap();
        let cfg = RunConfig::load(&toml_path).unwrap();
        assert_eq!(cfg.preset, Preset::PwccV2);
        let train = cfg.resolved_train();
        assert_eq!(train.epochs, 10);
        assert_eq!(train.seed, 7);
        assert_eq!(train.lambda_tv, 2e-3);

        let json_path = dir.path().join("run.json");
        std::fs::write(
            &json_path,
            "{\"preset\": \"pwcc_v1\", \"train\": {\"epochs\": 4}}",
        )
        .unwrap();
        let cfg = RunConfig::load(&json_path).unwrap();
        assert_eq!(cfg.preset, Preset::PwccV1);
        assert_eq!(cfg.resolved_train().epochs, 4);
        assert!(cfg.resolved_filtering());
    }

    #[test]
    fn load_rejects_bad_files() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.toml");
        std::fs::write(&path, "preset = 3").unwrap();
        assert!(RunConfig::load(&path).is_err());
        assert!(RunConfig::load(dir.path().join("missing.toml")).is_err());
    }
}
