//! Two-illuminant scene synthesis with exact ground-truth illumination maps,
//! label smoothing of the mixing weight, and the seeded dataset generator
//! that feeds training and evaluation.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::{
    self, apply_white_balance, IlluminantChroma, IlluminationMap, LinearImage,
};

/// H×W field of illuminant-a mixing weights, each in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaMap {
    width: usize,
    height: usize,
    alpha: Vec<f64>,
}

impl AlphaMap {
    pub fn new(width: usize, height: usize, alpha: Vec<f64>) -> Result<Self> {
        if alpha.len() != width * height {
            return Err(Error::Shape(format!(
                "alpha map length {} does not match {}x{}",
                alpha.len(),
                width,
                height
            )));
        }
        if let Some(i) = alpha
            .iter()
            .position(|v| !v.is_finite() || *v < 0.0 || *v > 1.0)
        {
            return Err(Error::InvalidInput(format!(
                "alpha {} outside [0, 1] at pixel ({}, {})",
                alpha[i],
                i % width,
                i / width
            )));
        }
        Ok(Self {
            width,
            height,
            alpha,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            alpha: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.alpha
    }

    pub fn value(&self, x: usize, y: usize) -> f64 {
        self.alpha[y * self.width + x]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
}

/// Shape of a synthetic mixing-weight field.
#[derive(Debug, Clone, PartialEq)]
pub enum AlphaKind {
    Constant { value: f64 },
    /// Spans exactly 0 at one border to 1 at the opposite border.
    LinearGradient { axis: Axis },
    /// Center and radius in coordinates relative to the image size.
    Radial { cx: f64, cy: f64, radius: f64 },
    /// Two seeded sites; each pixel takes α ∈ {0, 1} by nearest site.
    Voronoi2,
}

pub fn make_alpha_map(kind: &AlphaKind, width: usize, height: usize, seed: u64) -> Result<AlphaMap> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidArgument(
            "alpha map dimensions must be at least 1".to_string(),
        ));
    }
    match *kind {
        AlphaKind::Constant { value } => {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::InvalidArgument(format!(
                    "constant alpha {value} outside [0, 1]"
                )));
            }
            Ok(AlphaMap::filled(width, height, value))
        }
        AlphaKind::LinearGradient { axis } => {
            let mut alpha = vec![0.0; width * height];
            for y in 0..height {
                for x in 0..width {
                    let (pos, span) = match axis {
                        Axis::X => (x, width),
                        Axis::Y => (y, height),
                    };
                    alpha[y * width + x] = if span > 1 {
                        pos as f64 / (span - 1) as f64
                    } else {
                        0.0
                    };
                }
            }
            AlphaMap::new(width, height, alpha)
        }
        AlphaKind::Radial { cx, cy, radius } => {
            for (name, v) in [("cx", cx), ("cy", cy), ("radius", radius)] {
                if !(0.0..=1.0).contains(&v) || (name == "radius" && v == 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "radial parameter {name}={v} outside its valid range"
                    )));
                }
            }
            let ccx = cx * (width - 1) as f64;
            let ccy = cy * (height - 1) as f64;
            let r = radius * width.max(height) as f64;
            let mut alpha = vec![0.0; width * height];
            for y in 0..height {
                for x in 0..width {
                    let d = ((x as f64 - ccx).powi(2) + (y as f64 - ccy).powi(2)).sqrt();
                    alpha[y * width + x] = (1.0 - d / r).clamp(0.0, 1.0);
                }
            }
            AlphaMap::new(width, height, alpha)
        }
        AlphaKind::Voronoi2 => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sites: [(f64, f64); 2] = [
                (
                    rng.gen::<f64>() * width as f64,
                    rng.gen::<f64>() * height as f64,
                ),
                (
                    rng.gen::<f64>() * width as f64,
                    rng.gen::<f64>() * height as f64,
                ),
            ];
            let mut alpha = vec![0.0; width * height];
            for y in 0..height {
                for x in 0..width {
                    let px = x as f64 + 0.5;
                    let py = y as f64 + 0.5;
                    let d0 = (px - sites[0].0).powi(2) + (py - sites[0].1).powi(2);
                    let d1 = (px - sites[1].0).powi(2) + (py - sites[1].1).powi(2);
                    alpha[y * width + x] = if d0 <= d1 { 1.0 } else { 0.0 };
                }
            }
            AlphaMap::new(width, height, alpha)
        }
    }
}

/// One generated scene: the mixed-illuminant observation, the white-balanced
/// base, and the exact ground truth that links them.
#[derive(Debug, Clone)]
pub struct SceneSample {
    pub input: LinearImage,
    pub gt_image: LinearImage,
    pub gt_map: IlluminationMap,
    pub alpha: AlphaMap,
    pub illum_a: IlluminantChroma,
    pub illum_b: IlluminantChroma,
    pub seed: u64,
}

/// Mixes two illuminant chromaticities with the given weight field:
/// gt_map = α·l_a + (1−α)·l_b, input = gt_map ⊙ base. Since both
/// chromaticities are G-normalized the mixed map has e2 = 1 at every pixel.
pub fn synthesize(
    base: &LinearImage,
    illum_a: IlluminantChroma,
    illum_b: IlluminantChroma,
    alpha: &AlphaMap,
) -> Result<SceneSample> {
    if base.width() != alpha.width() || base.height() != alpha.height() {
        return Err(Error::Shape(format!(
            "base {}x{} vs alpha {}x{}",
            base.width(),
            base.height(),
            alpha.width(),
            alpha.height()
        )));
    }
    let la = illum_a.rgb();
    let lb = illum_b.rgb();
    let mut gains = Vec::with_capacity(base.width() * base.height() * 3);
    for &a in alpha.values() {
        for c in 0..3 {
            gains.push(a * la[c] + (1.0 - a) * lb[c]);
        }
    }
    let gt_map = IlluminationMap::new(base.width(), base.height(), gains)?.g_normalized();
    let input = apply_white_balance(base, &gt_map)?;
    Ok(SceneSample {
        input,
        gt_image: base.clone(),
        gt_map,
        alpha: alpha.clone(),
        illum_a,
        illum_b,
        seed: 0,
    })
}

/// Adds per-pixel Gaussian noise with σ = α/w_n and re-clamps to [0, 1].
/// Deterministic for a given seed; the training loop draws a fresh seed per
/// batch.
pub fn smooth_alpha(alpha: &AlphaMap, w_n: f64, seed: u64) -> Result<AlphaMap> {
    if !(w_n > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "smoothing constant must be positive, got {w_n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let smoothed = alpha
        .values()
        .iter()
        .map(|&a| {
            let z: f64 = rng.sample(StandardNormal);
            (a + (a / w_n) * z).clamp(0.0, 1.0)
        })
        .collect();
    AlphaMap::new(alpha.width(), alpha.height(), smoothed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlphaKindName {
    Constant,
    Linear,
    Radial,
    Voronoi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaseSource {
    /// Self-contained multi-scale noise plus colored patches.
    Procedural,
    /// A folder of 16-bit linear PNGs, cycled in sorted order.
    Folder { path: PathBuf },
}

fn default_size() -> usize {
    64
}
fn default_split() -> [f64; 3] {
    [0.75, 0.2, 0.05]
}
fn default_illum_min() -> f64 {
    0.4
}
fn default_illum_max() -> f64 {
    1.6
}
fn default_alpha_kinds() -> Vec<AlphaKindName> {
    vec![
        AlphaKindName::Constant,
        AlphaKindName::Linear,
        AlphaKindName::Radial,
        AlphaKindName::Voronoi,
    ]
}
fn default_base_source() -> BaseSource {
    BaseSource::Procedural
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub count: usize,
    #[serde(default = "default_size")]
    pub width: usize,
    #[serde(default = "default_size")]
    pub height: usize,
    pub seed: u64,
    #[serde(default = "default_split")]
    pub split: [f64; 3],
    #[serde(default = "default_illum_min")]
    pub illum_min: f64,
    #[serde(default = "default_illum_max")]
    pub illum_max: f64,
    #[serde(default = "default_alpha_kinds")]
    pub alpha_kinds: Vec<AlphaKindName>,
    #[serde(default = "default_base_source")]
    pub base_source: BaseSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Val => write!(f, "val"),
            Split::Test => write!(f, "test"),
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub id: String,
    pub split: Split,
    pub input_png: String,
    pub gt_png: String,
    pub gt_map_pwcc: String,
    pub alpha_pwcc: String,
    pub illum_a: [f64; 3],
    pub illum_b: [f64; 3],
}

pub const MANIFEST_VERSION: u32 = 1;

/// Index of a generated dataset; all file paths are relative to the
/// manifest's own directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub seed: u64,
    pub samples: Vec<SampleEntry>,
}

impl DatasetManifest {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut bytes = serde_json::to_vec_pretty(self).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        bytes.push(b'\n');
        std::fs::write(path, bytes).map_err(|source| Error::io(path, source))
    }

    /// Returns the manifest plus its base directory for resolving paths.
    pub fn load(path: impl AsRef<Path>) -> Result<(Self, PathBuf)> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|source| Error::io(path, source))?;
        let manifest: DatasetManifest =
            serde_json::from_slice(&bytes).map_err(|source| Error::Json {
                path: path.to_path_buf(),
                source,
            })?;
        if manifest.version != MANIFEST_VERSION {
            return Err(Error::format(
                path,
                format!(
                    "unsupported manifest version {} (expected {})",
                    manifest.version, MANIFEST_VERSION
                ),
            ));
        }
        let base = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Ok((manifest, base))
    }

    pub fn samples_in(&self, split: Split) -> impl Iterator<Item = &SampleEntry> {
        self.samples.iter().filter(move |s| s.split == split)
    }
}

/// SplitMix64 step; used to derive independent per-sample seeds.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

pub fn derive_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

/// Largest-remainder split sizing with train-first priority. Any split with
/// a nonzero ratio is kept non-empty by borrowing one sample from the
/// lowest-priority split that can spare one.
pub fn split_counts(count: usize, ratios: [f64; 3]) -> Result<[usize; 3]> {
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) {
        return Err(Error::Config(format!("invalid split ratios {ratios:?}")));
    }
    let total: f64 = ratios.iter().sum();
    if total <= 0.0 {
        return Err(Error::Config("split ratios sum to zero".to_string()));
    }
    let quotas: Vec<f64> = ratios.iter().map(|r| count as f64 * r / total).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut leftover = count - counts.iter().sum::<usize>();
    // distribute by largest fractional part; ties go to the earlier split
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if leftover == 0 {
            break;
        }
        counts[i] += 1;
        leftover -= 1;
    }
    // keep every used split non-empty
    for i in 0..3 {
        if ratios[i] > 0.0 && counts[i] == 0 {
            if let Some(donor) = (0..3).rev().find(|&j| j != i && counts[j] >= 2) {
                counts[donor] -= 1;
                counts[i] += 1;
            }
        }
    }
    Ok([counts[0], counts[1], counts[2]])
}

fn value_noise(width: usize, height: usize, cells: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let gw = cells + 1;
    let grid: Vec<f64> = (0..gw * gw).map(|_| rng.gen::<f64>()).collect();
    let mut out = vec![0.0; width * height];
    for y in 0..height {
        let fy = if height > 1 {
            y as f64 / (height - 1) as f64 * cells as f64
        } else {
            0.0
        };
        let gy = (fy.floor() as usize).min(cells - 1);
        let wy = fy - gy as f64;
        for x in 0..width {
            let fx = if width > 1 {
                x as f64 / (width - 1) as f64 * cells as f64
            } else {
                0.0
            };
            let gx = (fx.floor() as usize).min(cells - 1);
            let wx = fx - gx as f64;
            let p00 = grid[gy * gw + gx];
            let p01 = grid[gy * gw + gx + 1];
            let p10 = grid[(gy + 1) * gw + gx];
            let p11 = grid[(gy + 1) * gw + gx + 1];
            let top = p00 + (p01 - p00) * wx;
            let bot = p10 + (p11 - p10) * wx;
            out[y * width + x] = top + (bot - top) * wy.min(1.0);
        }
    }
    out
}

/// Procedural base scene: multi-scale luminance noise, mild smooth chroma
/// variation, and a few sharp-edged colored patches. Mean chroma stays close
/// to gray so the illuminant signal dominates the global statistics.
fn procedural_base(width: usize, height: usize, rng: &mut ChaCha8Rng) -> LinearImage {
    let coarse = value_noise(width, height, 4.min(width.max(2) - 1).max(1), rng);
    let mid = value_noise(width, height, 8, rng);
    let fine = value_noise(width, height, 16, rng);
    let chroma_r = value_noise(width, height, 4, rng);
    let chroma_b = value_noise(width, height, 4, rng);

    let mut r_fac = vec![0.0; width * height];
    let mut b_fac = vec![0.0; width * height];
    for i in 0..width * height {
        r_fac[i] = (0.16 * (chroma_r[i] - 0.5)).exp();
        b_fac[i] = (0.16 * (chroma_b[i] - 0.5)).exp();
    }

    // sharp-edged colored rectangles
    let patches = rng.gen_range(1..=4);
    for _ in 0..patches {
        let pw = rng.gen_range(width.max(8) / 8..=width.max(2) / 2);
        let ph = rng.gen_range(height.max(8) / 8..=height.max(2) / 2);
        let x0 = rng.gen_range(0..width.saturating_sub(pw).max(1));
        let y0 = rng.gen_range(0..height.saturating_sub(ph).max(1));
        let tint_r = rng.gen_range(0.75..1.3);
        let tint_b = rng.gen_range(0.75..1.3);
        for y in y0..(y0 + ph).min(height) {
            for x in x0..(x0 + pw).min(width) {
                r_fac[y * width + x] *= tint_r;
                b_fac[y * width + x] *= tint_b;
            }
        }
    }

    let mut data = Vec::with_capacity(width * height * 3);
    for i in 0..width * height {
        let lum = 0.15 + 0.7 * (0.5 * coarse[i] + 0.3 * mid[i] + 0.2 * fine[i]);
        data.push((lum * r_fac[i]).clamp(1e-3, 1.0));
        data.push(lum.clamp(1e-3, 1.0));
        data.push((lum * b_fac[i]).clamp(1e-3, 1.0));
    }
    LinearImage::new(width, height, data).expect("procedural base is finite and non-negative")
}

fn random_alpha_kind(name: AlphaKindName, rng: &mut ChaCha8Rng) -> AlphaKind {
    match name {
        AlphaKindName::Constant => AlphaKind::Constant {
            value: rng.gen::<f64>(),
        },
        AlphaKindName::Linear => AlphaKind::LinearGradient {
            axis: if rng.gen::<bool>() { Axis::X } else { Axis::Y },
        },
        AlphaKindName::Radial => AlphaKind::Radial {
            cx: rng.gen::<f64>(),
            cy: rng.gen::<f64>(),
            radius: 0.3 + 0.7 * rng.gen::<f64>(),
        },
        AlphaKindName::Voronoi => AlphaKind::Voronoi2,
    }
}

/// Rescales a sample so the observed image fits in [0, 1]; scaling base and
/// input by the same factor preserves input = gt_map ⊙ gt_image exactly.
fn normalize_exposure(sample: &mut SceneSample) {
    let m = sample.input.max_value();
    if m > 1.0 {
        let s = 1.0 / m;
        sample.input = sample.input.scaled(s);
        sample.gt_image = sample.gt_image.scaled(s);
    }
}

/// Generates one fully deterministic sample from the master seed and index.
pub fn generate_sample(config: &SynthConfig, index: usize, base: LinearImage) -> Result<SceneSample> {
    let seed = derive_seed(config.seed, index as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lo = config.illum_min;
    let hi = config.illum_max;
    let illum_a = IlluminantChroma::new([rng.gen_range(lo..=hi), 1.0, rng.gen_range(lo..=hi)])?;
    let illum_b = IlluminantChroma::new([rng.gen_range(lo..=hi), 1.0, rng.gen_range(lo..=hi)])?;
    let kind_name = config.alpha_kinds[rng.gen_range(0..config.alpha_kinds.len())];
    let kind = random_alpha_kind(kind_name, &mut rng);
    let alpha_seed = rng.gen::<u64>();
    let alpha = make_alpha_map(&kind, config.width, config.height, alpha_seed)?;
    let mut sample = synthesize(&base, illum_a, illum_b, &alpha)?;
    sample.seed = seed;
    normalize_exposure(&mut sample);
    Ok(sample)
}

/// Produces a procedural base for sample `index` (the base uses its own
/// stream so alpha/illuminant draws stay aligned across base sources).
pub fn procedural_base_for(config: &SynthConfig, index: usize) -> LinearImage {
    let seed = derive_seed(config.seed ^ 0xBA5E_BA5E_BA5E_BA5E, index as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    procedural_base(config.width, config.height, &mut rng)
}

fn validate_config(config: &SynthConfig) -> Result<()> {
    if config.count == 0 {
        return Err(Error::Config(
            "dataset count must be at least 1 (empty manifest)".to_string(),
        ));
    }
    if config.width == 0 || config.height == 0 {
        return Err(Error::Config("image dimensions must be at least 1".to_string()));
    }
    if !(config.illum_min > 0.0 && config.illum_max >= config.illum_min) {
        return Err(Error::Config(format!(
            "invalid illuminant range [{}, {}]",
            config.illum_min, config.illum_max
        )));
    }
    if config.alpha_kinds.is_empty() {
        return Err(Error::Config("alpha_kinds must not be empty".to_string()));
    }
    Ok(())
}

/// Writes PNG inputs and ground truths, PWCC maps, and the manifest into
/// `out_dir`; fully reproducible from the master seed.
pub fn generate_dataset(config: &SynthConfig, out_dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    let out_dir = out_dir.as_ref();
    validate_config(config)?;
    std::fs::create_dir_all(out_dir).map_err(|source| Error::io(out_dir, source))?;

    let base_files: Option<Vec<PathBuf>> = match &config.base_source {
        BaseSource::Procedural => None,
        BaseSource::Folder { path } => {
            let mut files: Vec<PathBuf> = std::fs::read_dir(path)
                .map_err(|source| Error::io(path, source))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|e| e == "png"))
                .collect();
            files.sort();
            if files.is_empty() {
                return Err(Error::Config(format!(
                    "base image folder {} contains no PNG files",
                    path.display()
                )));
            }
            Some(files)
        }
    };

    let counts = split_counts(config.count, config.split)?;
    let split_of = |i: usize| {
        if i < counts[0] {
            Split::Train
        } else if i < counts[0] + counts[1] {
            Split::Val
        } else {
            Split::Test
        }
    };

    let entries: Result<Vec<SampleEntry>> = (0..config.count)
        .into_par_iter()
        .map(|i| {
            let base = match &base_files {
                None => procedural_base_for(config, i),
                Some(files) => {
                    let img = io::read_image(&files[i % files.len()])?;
                    imagecore::resize_bilinear(&img, config.width, config.height)?
                }
            };
            let sample = generate_sample(config, i, base)?;
            let id = format!("sample_{i:04}");
            let input_png = format!("{id}_input.png");
            let gt_png = format!("{id}_gt.png");
            let gt_map_pwcc = format!("{id}_gtmap.pwcc");
            let alpha_pwcc = format!("{id}_alpha.pwcc");
            io::write_image(out_dir.join(&input_png), &sample.input)?;
            io::write_image(out_dir.join(&gt_png), &sample.gt_image)?;
            io::write_illumination_map(out_dir.join(&gt_map_pwcc), &sample.gt_map)?;
            io::write_alpha_map(out_dir.join(&alpha_pwcc), &sample.alpha)?;
            Ok(SampleEntry {
                id,
                split: split_of(i),
                input_png,
                gt_png,
                gt_map_pwcc,
                alpha_pwcc,
                illum_a: sample.illum_a.rgb(),
                illum_b: sample.illum_b.rgb(),
            })
        })
        .collect();

    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        seed: config.seed,
        samples: entries?,
    };
    manifest.save(out_dir.join("manifest.json"))?;
    Ok(manifest)
}

use crate::imagecore::io;
