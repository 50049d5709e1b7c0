//! Recovery angular error and its dataset-level statistics (mean, median,
//! worst 25%, best 25%), plus the harness that scores a method over a
//! manifest split.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines;
use crate::bilateral::{self, BilateralConfig};
use crate::error::{Error, Result};
use crate::estimator::{self, EstimatorParams};
use crate::imagecore::{self, io, IlluminationMap, LinearImage};
use crate::synth::{DatasetManifest, Split};

/// Dataset-level error statistics in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub method: String,
    pub split: String,
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub worst25: f64,
    pub best25: f64,
    pub per_image: Vec<PerImageError>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerImageError {
    pub id: String,
    pub error_deg: f64,
}

/// Per-pixel angle between ground-truth and predicted gain vectors, in
/// degrees; the cosine argument is clamped to [−1, 1] so collinear vectors
/// never produce NaN.
pub fn angular_error_map(gt: &IlluminationMap, pred: &IlluminationMap) -> Result<Vec<f64>> {
    if gt.width() != pred.width() || gt.height() != pred.height() {
        return Err(Error::Shape(format!(
            "angular error operands {}x{} vs {}x{}",
            gt.width(),
            gt.height(),
            pred.width(),
            pred.height()
        )));
    }
    let mut out = Vec::with_capacity(gt.width() * gt.height());
    for (i, (a, b)) in gt
        .gains()
        .chunks_exact(3)
        .zip(pred.gains().chunks_exact(3))
        .enumerate()
    {
        let dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
        let na = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
        let nb = (b[0] * b[0] + b[1] * b[1] + b[2] * b[2]).sqrt();
        if na == 0.0 || nb == 0.0 {
            return Err(Error::InvalidInput(format!(
                "zero-norm gain vector at pixel ({}, {})",
                i % gt.width(),
                i / gt.width()
            )));
        }
        // identical vectors are exactly collinear; skip the cosine, whose
        // rounding would otherwise report a spurious ~1e-6 degree error
        if a == b {
            out.push(0.0);
            continue;
        }
        let cos = (dot / (na * nb)).clamp(-1.0, 1.0);
        out.push(cos.acos().to_degrees());
    }
    Ok(out)
}

/// Mean of the per-pixel angular error field.
pub fn image_error(gt: &IlluminationMap, pred: &IlluminationMap) -> Result<f64> {
    let field = angular_error_map(gt, pred)?;
    Ok(field.iter().sum::<f64>() / field.len() as f64)
}

/// Aggregates per-image errors into the reported statistics. The worst/best
/// 25% use the ⌈n/4⌉ largest/smallest errors; ties are broken by id order.
pub fn summarize(errors: &[(String, f64)]) -> Result<ErrorSummary> {
    if errors.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot summarize an empty error list".to_string(),
        ));
    }
    let mut sorted: Vec<&(String, f64)> = errors.iter().collect();
    sorted.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
    let n = sorted.len();
    let mean = sorted.iter().map(|e| e.1).sum::<f64>() / n as f64;
    let median = if n % 2 == 1 {
        sorted[n / 2].1
    } else {
        (sorted[n / 2 - 1].1 + sorted[n / 2].1) / 2.0
    };
    let k = n.div_ceil(4);
    let best25 = sorted[..k].iter().map(|e| e.1).sum::<f64>() / k as f64;
    let worst25 = sorted[n - k..].iter().map(|e| e.1).sum::<f64>() / k as f64;
    Ok(ErrorSummary {
        method: String::new(),
        split: String::new(),
        n,
        mean,
        median,
        worst25,
        best25,
        per_image: errors
            .iter()
            .map(|(id, e)| PerImageError {
                id: id.clone(),
                error_deg: *e,
            })
            .collect(),
    })
}

/// The prediction source being scored.
pub enum EvalMethod<'a> {
    /// Predicts the ground truth itself; a built-in self check.
    Oracle,
    GrayWorld,
    WhitePatch,
    Trained(&'a EstimatorParams),
}

impl EvalMethod<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            EvalMethod::Oracle => "oracle",
            EvalMethod::GrayWorld => "gray_world",
            EvalMethod::WhitePatch => "white_patch",
            EvalMethod::Trained(_) => "trained",
        }
    }
}

/// Runs inference on an image whose dimensions may not fit the estimator
/// (which needs a square side divisible by 4), resampling in and out as
/// needed.
pub fn infer_flexible(
    params: &EstimatorParams,
    img: &LinearImage,
    epsilon: f64,
) -> Result<IlluminationMap> {
    let (w, h) = (img.width(), img.height());
    if w == h && w % 4 == 0 {
        return estimator::infer(params, img, epsilon);
    }
    let side = (w.max(h).max(4) + 3) / 4 * 4;
    let resized = imagecore::resize_bilinear(img, side, side)?;
    let map = estimator::infer(params, &resized, epsilon)?;
    imagecore::resize_map_bilinear(&map, w, h)
}

/// Scores `method` over every sample of `split`, optionally bilateral
/// post-filtering the predicted maps first.
pub fn evaluate_method(
    manifest: &DatasetManifest,
    base_dir: &Path,
    split: Split,
    method: &EvalMethod<'_>,
    postfilter: Option<&BilateralConfig>,
    epsilon: f64,
) -> Result<ErrorSummary> {
    let samples: Vec<_> = manifest.samples_in(split).collect();
    if samples.is_empty() {
        return Err(Error::Config(format!("split '{split}' is empty")));
    }
    let errors: Result<Vec<(String, f64)>> = samples
        .par_iter()
        .map(|entry| {
            let with_ctx = |e: Error| match e {
                Error::Shape(msg) => Error::Shape(format!("sample {}: {msg}", entry.id)),
                other => other,
            };
            let gt = io::read_illumination_map(base_dir.join(&entry.gt_map_pwcc))?;
            let mut pred = match method {
                EvalMethod::Oracle => gt.clone(),
                EvalMethod::GrayWorld => {
                    let input = io::read_image(base_dir.join(&entry.input_png))?;
                    baselines::gray_world(&input)?
                }
                EvalMethod::WhitePatch => {
                    let input = io::read_image(base_dir.join(&entry.input_png))?;
                    baselines::white_patch(&input)?
                }
                EvalMethod::Trained(params) => {
                    let input = io::read_image(base_dir.join(&entry.input_png))?;
                    infer_flexible(params, &input, epsilon)?
                }
            };
            if let Some(cfg) = postfilter {
                pred = bilateral::apply_postfilter(&pred, cfg)?;
            }
            let err = image_error(&gt, &pred).map_err(with_ctx)?;
            Ok((entry.id.clone(), err))
        })
        .collect();
    let mut summary = summarize(&errors?)?;
    summary.method = method.name().to_string();
    summary.split = split.to_string();
    Ok(summary)
}

/// Aligned plain-text table with one row per summary.
pub fn format_table(summaries: &[ErrorSummary]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<14} {:>8} {:>8} {:>8} {:>8}\n",
        "Method", "Mean", "Median", "W.25%", "B.25%"
    ));
    for s in summaries {
        out.push_str(&format!(
            "{:<14} {:>8.3} {:>8.3} {:>8.3} {:>8.3}\n",
            s.method, s.mean, s.median, s.worst25, s.best25
        ));
    }
    out
}
