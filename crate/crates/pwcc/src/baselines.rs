//! Classical single-illuminant estimators used as comparison rows:
//! Gray World (channel means) and White Patch (channel maxima). Both assume
//! one global illuminant and therefore produce constant gain maps.

use crate::error::{Error, Result};
use crate::imagecore::{IlluminationMap, LinearImage};

fn channel_means(img: &LinearImage) -> [f64; 3] {
    let mut sums = [0.0f64; 3];
    for px in img.data().chunks_exact(3) {
        sums[0] += px[0];
        sums[1] += px[1];
        sums[2] += px[2];
    }
    let n = (img.width() * img.height()) as f64;
    [sums[0] / n, sums[1] / n, sums[2] / n]
}

fn channel_maxima(img: &LinearImage) -> [f64; 3] {
    let mut maxima = [0.0f64; 3];
    for px in img.data().chunks_exact(3) {
        for c in 0..3 {
            maxima[c] = maxima[c].max(px[c]);
        }
    }
    maxima
}

/// Estimates the illuminant as the per-channel mean and returns the constant
/// G-anchored gain map (μ_G/μ_R, 1, μ_G/μ_B).
pub fn gray_world(img: &LinearImage) -> Result<IlluminationMap> {
    let means = channel_means(img);
    if means.iter().any(|&m| m <= 1e-8) {
        return Err(Error::EstimationFailure(format!(
            "gray world: degenerate channel means {means:?}"
        )));
    }
    let gains = [means[1] / means[0], 1.0, means[1] / means[2]];
    Ok(IlluminationMap::filled(img.width(), img.height(), gains))
}

/// Estimates the illuminant as the per-channel maximum (Max-RGB) and returns
/// the constant G-anchored gain map.
pub fn white_patch(img: &LinearImage) -> Result<IlluminationMap> {
    let maxima = channel_maxima(img);
    if maxima.iter().any(|&m| m <= 0.0) {
        return Err(Error::EstimationFailure(format!(
            "white patch: zero channel maximum {maxima:?}"
        )));
    }
    let gains = [maxima[1] / maxima[0], 1.0, maxima[1] / maxima[2]];
    Ok(IlluminationMap::filled(img.width(), img.height(), gains))
}
