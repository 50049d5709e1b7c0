//! Edge-preserving bilateral post-filter for estimated illumination maps
//! (or white-balanced images): a spatial Gaussian crossed with a range
//! Gaussian over the window, weights renormalized per pixel.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imagecore::{IlluminationMap, LinearImage};

/// How the range weight treats the three channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RangeMode {
    /// One weight per pixel pair from the Euclidean RGB distance; avoids
    /// channel decorrelation artifacts.
    JointRgb,
    /// Independent weight per channel from |ΔI_c|.
    PerChannel,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct BilateralConfig {
    /// Spatial standard deviation in pixels.
    pub sigma_s: f64,
    /// Range standard deviation in normalized intensity units.
    pub sigma_r: f64,
    /// Window width in pixels; must be odd.
    pub diameter: usize,
    pub range_mode: RangeMode,
}

impl Default for BilateralConfig {
    /// σ_s = 75 px, σ_r = 75/255 (the 8-bit value 75 rescaled to the
    /// normalized intensity range), 9-pixel window.
    fn default() -> Self {
        Self {
            sigma_s: 75.0,
            sigma_r: 75.0 / 255.0,
            diameter: 9,
            range_mode: RangeMode::JointRgb,
        }
    }
}

impl BilateralConfig {

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_s > 0.0) || !(self.sigma_r > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "bilateral sigmas must be positive, got sigma_s={}, sigma_r={}",
                self.sigma_s, self.sigma_r
            )));
        }
        if self.diameter == 0 || self.diameter % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "bilateral diameter must be odd and >= 1, got {}",
                self.diameter
            )));
        }
        Ok(())
    }
}

/// Filters a row-major H×W×3 buffer. Border pixels use the clipped window;
/// weights renormalize, so a constant image passes through unchanged.
pub fn filter_rgb_raw(
    data: &[f64],
    width: usize,
    height: usize,
    cfg: &BilateralConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if data.len() != width * height * 3 {
        return Err(Error::Shape(format!(
            "bilateral input length {} does not match {}x{}x3",
            data.len(),
            width,
            height
        )));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(
            "non-finite value in bilateral filter input".to_string(),
        ));
    }
    let radius = (cfg.diameter / 2) as isize;
    let inv_2ss = 1.0 / (2.0 * cfg.sigma_s * cfg.sigma_s);
    let inv_2sr = 1.0 / (2.0 * cfg.sigma_r * cfg.sigma_r);

    // spatial kernel depends only on the offset; precompute the table
    let d = cfg.diameter;
    let mut spatial = vec![0.0; d * d];
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            let dist2 = (dx * dx + dy * dy) as f64;
            spatial[((dy + radius) as usize) * d + (dx + radius) as usize] =
                (-dist2 * inv_2ss).exp();
        }
    }

    let mut out = vec![0.0; data.len()];
    out.par_chunks_mut(width * 3)
        .enumerate()
        .for_each(|(y, row)| {
            let y = y as isize;
            for x in 0..width as isize {
                let ci = ((y as usize) * width + x as usize) * 3;
                let center = [data[ci], data[ci + 1], data[ci + 2]];
                match cfg.range_mode {
                    RangeMode::JointRgb => {
                        let mut acc = [0.0f64; 3];
                        let mut wsum = 0.0f64;
                        for dy in -radius..=radius {
                            let qy = y + dy;
                            if qy < 0 || qy >= height as isize {
                                continue;
                            }
                            for dx in -radius..=radius {
                                let qx = x + dx;
                                if qx < 0 || qx >= width as isize {
                                    continue;
                                }
                                let qi = ((qy as usize) * width + qx as usize) * 3;
                                let q = [data[qi], data[qi + 1], data[qi + 2]];
                                let dr = q[0] - center[0];
                                let dg = q[1] - center[1];
                                let db = q[2] - center[2];
                                let range2 = dr * dr + dg * dg + db * db;
                                let w = spatial
                                    [((dy + radius) as usize) * d + (dx + radius) as usize]
                                    * (-range2 * inv_2sr).exp();
                                acc[0] += w * q[0];
                                acc[1] += w * q[1];
                                acc[2] += w * q[2];
                                wsum += w;
                            }
                        }
                        for c in 0..3 {
                            row[(x as usize) * 3 + c] = acc[c] / wsum;
                        }
                    }
                    RangeMode::PerChannel => {
                        let mut acc = [0.0f64; 3];
                        let mut wsum = [0.0f64; 3];
                        for dy in -radius..=radius {
                            let qy = y + dy;
                            if qy < 0 || qy >= height as isize {
                                continue;
                            }
                            for dx in -radius..=radius {
                                let qx = x + dx;
                                if qx < 0 || qx >= width as isize {
                                    continue;
                                }
                                let qi = ((qy as usize) * width + qx as usize) * 3;
                                let ws = spatial
                                    [((dy + radius) as usize) * d + (dx + radius) as usize];
                                for c in 0..3 {
                                    let q = data[qi + c];
                                    let dv = q - center[c];
                                    let w = ws * (-(dv * dv) * inv_2sr).exp();
                                    acc[c] += w * q;
                                    wsum[c] += w;
                                }
                            }
                        }
                        for c in 0..3 {
                            row[(x as usize) * 3 + c] = acc[c] / wsum[c];
                        }
                    }
                }
            }
        });
    Ok(out)
}

pub fn bilateral_filter(img: &LinearImage, cfg: &BilateralConfig) -> Result<LinearImage> {
    let out = filter_rgb_raw(img.data(), img.width(), img.height(), cfg)?;
    LinearImage::new(img.width(), img.height(), out)
}

/// Filters the G-anchored gain map channel-wise, then re-anchors e2 to 1.
pub fn apply_postfilter(map: &IlluminationMap, cfg: &BilateralConfig) -> Result<IlluminationMap> {
    let out = filter_rgb_raw(map.gains(), map.width(), map.height(), cfg)?;
    Ok(IlluminationMap::new(map.width(), map.height(), out)?.g_normalized())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn lcg(seed: u64, n: usize) -> Vec<f64> {
        let mut s = seed;
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (s >> 11) as f64 / (1u64 << 53) as f64
            })
            .collect()
    }

    /// Naive double-loop reference, written independently of the optimized
    /// routine (no precomputed tables, joint RGB weights).
    pub(crate) fn brute_force_joint(
        data: &[f64],
        width: usize,
        height: usize,
        cfg: &BilateralConfig,
    ) -> Vec<f64> {
        let r = (cfg.diameter / 2) as isize;
        let mut out = vec![0.0; data.len()];
        for py in 0..height as isize {
            for px in 0..width as isize {
                let ci = ((py as usize) * width + px as usize) * 3;
                let mut num = [0.0; 3];
                let mut den = 0.0;
                for qy in (py - r)..=(py + r) {
                    for qx in (px - r)..=(px + r) {
                        if qy < 0 || qy >= height as isize || qx < 0 || qx >= width as isize {
                            continue;
                        }
                        let qi = ((qy as usize) * width + qx as usize) * 3;
                        let spatial_d2 =
                            ((px - qx) * (px - qx) + (py - qy) * (py - qy)) as f64;
                        let gs = (-spatial_d2 / (2.0 * cfg.sigma_s * cfg.sigma_s)).exp();
                        let mut range_d2 = 0.0;
                        for c in 0..3 {
                            let dv = data[ci + c] - data[qi + c];
                            range_d2 += dv * dv;
                        }
                        let gr = (-range_d2 / (2.0 * cfg.sigma_r * cfg.sigma_r)).exp();
                        for c in 0..3 {
                            num[c] += gs * gr * data[qi + c];
                        }
                        den += gs * gr;
                    }
                }
                for c in 0..3 {
                    out[ci + c] = num[c] / den;
                }
            }
        }
        out
    }

    #[test]
    fn constant_image_unchanged() {
        let img = LinearImage::filled(8, 6, [0.3, 0.5, 0.7]);
        let out = bilateral_filter(&img, &BilateralConfig::default()).unwrap();
        for (a, b) in out.data().iter().zip(img.data()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn huge_sigma_r_reduces_to_gaussian_blur() {
        // With σ_r → ∞ the range kernel is 1, leaving a clipped-window
        // spatial Gaussian; compare against an independent blur.
        let data = lcg(3, 9 * 9 * 3);
        let cfg = BilateralConfig {
            sigma_s: 1.5,
            sigma_r: 1e6,
            diameter: 7,
            range_mode: RangeMode::JointRgb,
        };
        let out = filter_rgb_raw(&data, 9, 9, &cfg).unwrap();
        // plain spatial Gaussian oracle
        let r = 3isize;
        for py in 0..9isize {
            for px in 0..9isize {
                for c in 0..3 {
                    let mut num = 0.0;
                    let mut den = 0.0;
                    for qy in (py - r)..=(py + r) {
                        for qx in (px - r)..=(px + r) {
                            if qy < 0 || qy >= 9 || qx < 0 || qx >= 9 {
                                continue;
                            }
                            let d2 = ((px - qx).pow(2) + (py - qy).pow(2)) as f64;
                            let w = (-d2 / (2.0 * 1.5 * 1.5)).exp();
                            num += w * data[((qy * 9 + qx) * 3) as usize + c];
                            den += w;
                        }
                    }
                    let expect = num / den;
                    let got = out[((py * 9 + px) * 3) as usize + c];
                    assert_abs_diff_eq!(got, expect, epsilon = 1e-4);
                }
            }
        }
    }

    #[test]
    fn matches_brute_force_reference() {
        let data = lcg(17, 9 * 9 * 3);
        let cfg = BilateralConfig {
            sigma_s: 2.0,
            sigma_r: 0.25,
            diameter: 9,
            range_mode: RangeMode::JointRgb,
        };
        let fast = filter_rgb_raw(&data, 9, 9, &cfg).unwrap();
        let slow = brute_force_joint(&data, 9, 9, &cfg);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn output_within_window_min_max() {
        let data = lcg(29, 16 * 16 * 3);
        let cfg = BilateralConfig {
            sigma_s: 3.0,
            sigma_r: 0.2,
            diameter: 5,
            range_mode: RangeMode::JointRgb,
        };
        let out = filter_rgb_raw(&data, 16, 16, &cfg).unwrap();
        let r = 2isize;
        for py in 0..16isize {
            for px in 0..16isize {
                for c in 0..3 {
                    let mut lo = f64::INFINITY;
                    let mut hi = f64::NEG_INFINITY;
                    for qy in (py - r).max(0)..=(py + r).min(15) {
                        for qx in (px - r).max(0)..=(px + r).min(15) {
                            let v = data[((qy * 16 + qx) * 3) as usize + c];
                            lo = lo.min(v);
                            hi = hi.max(v);
                        }
                    }
                    let v = out[((py * 16 + px) * 3) as usize + c];
                    assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
                }
            }
        }
    }

    #[test]
    fn rejects_even_diameter() {
        let img = LinearImage::filled(4, 4, [0.5; 3]);
        let cfg = BilateralConfig {
            diameter: 8,
            ..BilateralConfig::default()
        };
        assert!(matches!(
            bilateral_filter(&img, &cfg),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn postfilter_reanchors_g_and_keeps_uniform_maps() {
        let map = IlluminationMap::filled(6, 6, [1.3, 1.0, 0.8]);
        let out = apply_postfilter(&map, &BilateralConfig::default()).unwrap();
        for (a, b) in out.gains().iter().zip(map.gains()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        for g in out.gains().chunks_exact(3) {
            assert_eq!(g[1], 1.0);
        }
    }

    #[test]
    fn step_edge_position_preserved() {
        // two-region map with a sharp vertical edge at x = 8
        let (w, h) = (16usize, 8usize);
        let mut gains = vec![0.0; w * h * 3];
        for y in 0..h {
            for x in 0..w {
                let v: [f64; 3] = if x < 8 { [0.6, 1.0, 1.4] } else { [1.6, 1.0, 0.5] };
                gains[(y * w + x) * 3..(y * w + x) * 3 + 3].copy_from_slice(&v);
            }
        }
        let map = IlluminationMap::new(w, h, gains).unwrap();
        let cfg = BilateralConfig {
            sigma_s: 3.0,
            sigma_r: 0.1,
            diameter: 9,
            range_mode: RangeMode::JointRgb,
        };
        let out = apply_postfilter(&map, &cfg).unwrap();
        // edge position = argmax over x of |gain(x+1) - gain(x)| on R
        let edge_of = |m: &IlluminationMap| {
            let mut best = (0usize, 0.0f64);
            for x in 0..w - 1 {
                let d = (m.gain(x + 1, 4)[0] - m.gain(x, 4)[0]).abs();
                if d > best.1 {
                    best = (x, d);
                }
            }
            best.0
        };
        assert_eq!(edge_of(&map), edge_of(&out));
    }

    #[test]
    fn edge_preserved_better_than_gaussian() {
        // step of height 1 ≫ σ_r: pixels ≥ 2 from the edge must move less
        // than under a pure spatial Gaussian of the same σ_s
        let (w, h) = (16usize, 8usize);
        let mut data = vec![0.0; w * h * 3];
        for y in 0..h {
            for x in 0..w {
                let v = if x < 8 { 0.1 } else { 1.1 };
                for c in 0..3 {
                    data[(y * w + x) * 3 + c] = v;
                }
            }
        }
        let cfg = BilateralConfig {
            sigma_s: 2.0,
            sigma_r: 0.05,
            diameter: 9,
            range_mode: RangeMode::JointRgb,
        };
        let bf = filter_rgb_raw(&data, w, h, &cfg).unwrap();
        let blur_cfg = BilateralConfig {
            sigma_r: 1e9,
            ..cfg
        };
        let blur = filter_rgb_raw(&data, w, h, &blur_cfg).unwrap();
        // pixels 2-4 columns from the edge: far enough that the bilateral
        // filter should barely move them, close enough that the window still
        // reaches across the edge (so plain blur does move them)
        for y in 0..h {
            for x in [4usize, 5, 10, 11] {
                {
                    let i = (y * w + x) * 3;
                    let bf_change = (bf[i] - data[i]).abs();
                    let blur_change = (blur[i] - data[i]).abs();
                    assert!(
                        bf_change < blur_change,
                        "x={x}: bilateral moved {bf_change}, blur {blur_change}"
                    );
                }
            }
        }
    }
}
