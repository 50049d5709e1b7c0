//! Training objective: mean-squared data term, anisotropic total-variation
//! smoothness term, and their weighted combination, each with analytic
//! gradients with respect to the predicted uv map.
//!
//! Both terms are normalized by pixel count so the TV weight presets
//! transfer across image sizes. Reductions run in row-major order, so the
//! values are bit-reproducible call to call.

use crate::error::{Error, Result};
use crate::imagecore::{ChromaImage, IlluminationMap};

/// Per-call loss breakdown; `total = l2 + lambda_tv * tv` in that exact
/// arithmetic order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub l2: f64,
    pub tv: f64,
    pub total: f64,
    pub lambda_tv: f64,
}

/// Mean squared error over all H×W×2 entries, gradient 2(pred − target)/N.
pub fn l2_loss(pred: &ChromaImage, target: &ChromaImage) -> Result<(f64, ChromaImage)> {
    if pred.width() != target.width() || pred.height() != target.height() {
        return Err(Error::Shape(format!(
            "l2 operands {}x{} vs {}x{}",
            pred.width(),
            pred.height(),
            target.width(),
            target.height()
        )));
    }
    let n = (pred.width() * pred.height() * 2) as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; pred.data().len()];
    for (i, (&p, &t)) in pred.data().iter().zip(target.data()).enumerate() {
        let d = p - t;
        value += d * d;
        grad[i] = 2.0 * d / n;
    }
    Ok((
        value / n,
        ChromaImage::new(pred.width(), pred.height(), grad)?,
    ))
}

/// Anisotropic TV over an arbitrary channel count: sum of absolute forward
/// differences (no wraparound), normalized by H·W. The subgradient of |·|
/// at zero is taken as 0.
fn tv_raw(data: &[f64], width: usize, height: usize, channels: usize) -> (f64, Vec<f64>) {
    let norm = (width * height) as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; data.len()];
    let idx = |x: usize, y: usize, c: usize| (y * width + x) * channels + c;
    for y in 0..height {
        for x in 0..width {
            for c in 0..channels {
                let here = data[idx(x, y, c)];
                if x + 1 < width {
                    let d = here - data[idx(x + 1, y, c)];
                    value += d.abs();
                    let s = if d > 0.0 {
                        1.0
                    } else if d < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    grad[idx(x, y, c)] += s / norm;
                    grad[idx(x + 1, y, c)] -= s / norm;
                }
                if y + 1 < height {
                    let d = here - data[idx(x, y + 1, c)];
                    value += d.abs();
                    let s = if d > 0.0 {
                        1.0
                    } else if d < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    grad[idx(x, y, c)] += s / norm;
                    grad[idx(x, y + 1, c)] -= s / norm;
                }
            }
        }
    }
    (value / norm, grad)
}

/// TV of a predicted uv map.
pub fn tv_loss(pred: &ChromaImage) -> Result<(f64, ChromaImage)> {
    let (value, grad) = tv_raw(pred.data(), pred.width(), pred.height(), 2);
    Ok((
        value,
        ChromaImage::new(pred.width(), pred.height(), grad)?,
    ))
}

/// TV value of a gain map's uv representation; used to quantify how smooth
/// a predicted illumination map is.
pub fn tv_of_map(map: &IlluminationMap, epsilon: f64) -> Result<f64> {
    let chroma = map.to_log_chroma(epsilon)?;
    Ok(tv_loss(&chroma)?.0)
}

/// L2 + λ_TV · TV with the combined analytic gradient.
pub fn combined_loss(
    pred: &ChromaImage,
    target: &ChromaImage,
    lambda_tv: f64,
) -> Result<(LossReport, ChromaImage)> {
    if lambda_tv < 0.0 || !lambda_tv.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "lambda_tv must be non-negative, got {lambda_tv}"
        )));
    }
    let (l2, l2_grad) = l2_loss(pred, target)?;
    let (tv, tv_grad) = tv_loss(pred)?;
    let total = l2 + lambda_tv * tv;
    let grad: Vec<f64> = l2_grad
        .data()
        .iter()
        .zip(tv_grad.data())
        .map(|(a, b)| a + lambda_tv * b)
        .collect();
    Ok((
        LossReport {
            l2,
            tv,
            total,
            lambda_tv,
        },
        ChromaImage::new(pred.width(), pred.height(), grad)?,
    ))
}
