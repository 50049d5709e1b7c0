//! Core image types, color-space transforms, white-balance application and
//! bilinear resampling.
//!
//! Everything here is a pure function over immutable inputs. Images are
//! row-major, channel-interleaved `f64` buffers; file formats quantize on
//! write (see [`io`]).

pub mod io;

use crate::error::{Error, Result};

/// Default `epsilon` for the log-chrominance transform. Small enough not to
/// bias mid-tone chromaticities, large enough to keep black pixels finite.
pub const DEFAULT_EPSILON: f64 = 1e-6;

/// H×W×3 linear-light RGB image (channel order R, G, B).
#[derive(Debug, Clone, PartialEq)]
pub struct LinearImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

/// H×W×2 log-chrominance (u, v) image or gain map.
#[derive(Debug, Clone, PartialEq)]
pub struct ChromaImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

/// H×W×3 per-pixel diagonal white-balance gain map.
#[derive(Debug, Clone, PartialEq)]
pub struct IlluminationMap {
    width: usize,
    height: usize,
    gains: Vec<f64>,
}

/// Chromaticity of a single light source, stored G-normalized (g = 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IlluminantChroma {
    rgb: [f64; 3],
}

impl LinearImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::Shape(format!(
                "linear image data length {} does not match {}x{}x3",
                data.len(),
                width,
                height
            )));
        }
        for (i, &v) in data.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidInput(format!(
                    "linear image value {v} at pixel ({}, {}) channel {}",
                    (i / 3) % width,
                    i / (3 * width),
                    i % 3
                )));
            }
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Multiplies every value by `factor` (exposure change).
    pub fn scaled(&self, factor: f64) -> LinearImage {
        LinearImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().cloned().fold(0.0, f64::max)
    }
}

impl ChromaImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * 2 {
            return Err(Error::Shape(format!(
                "chroma image data length {} does not match {}x{}x2",
                data.len(),
                width,
                height
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite chroma value at pixel ({}, {})",
                (i / 2) % width,
                i / (2 * width)
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height * 2],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn uv(&self, x: usize, y: usize) -> [f64; 2] {
        let i = (y * self.width + x) * 2;
        [self.data[i], self.data[i + 1]]
    }
}

impl IlluminationMap {
    pub fn new(width: usize, height: usize, gains: Vec<f64>) -> Result<Self> {
        if gains.len() != width * height * 3 {
            return Err(Error::Shape(format!(
                "illumination map data length {} does not match {}x{}x3",
                gains.len(),
                width,
                height
            )));
        }
        if let Some(i) = gains.iter().position(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::InvalidInput(format!(
                "non-positive gain at pixel ({}, {})",
                (i / 3) % width,
                i / (3 * width)
            )));
        }
        Ok(Self {
            width,
            height,
            gains,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut gains = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            gains.extend_from_slice(&rgb);
        }
        Self {
            width,
            height,
            gains,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn gains(&self) -> &[f64] {
        &self.gains
    }

    pub fn gain(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.gains[i], self.gains[i + 1], self.gains[i + 2]]
    }

    /// Per-pixel multiplicative inverse of the map.
    pub fn reciprocal(&self) -> IlluminationMap {
        IlluminationMap {
            width: self.width,
            height: self.height,
            gains: self.gains.iter().map(|g| 1.0 / g).collect(),
        }
    }

    /// Divides each pixel by its own G gain so e2 becomes exactly 1.
    pub fn g_normalized(&self) -> IlluminationMap {
        let mut gains = self.gains.clone();
        for px in gains.chunks_exact_mut(3) {
            let g = px[1];
            px[0] /= g;
            px[1] = 1.0;
            px[2] /= g;
        }
        IlluminationMap {
            width: self.width,
            height: self.height,
            gains,
        }
    }

    /// Log-chrominance of the gain field (same formula as for images).
    pub fn to_log_chroma(&self, epsilon: f64) -> Result<ChromaImage> {
        log_chroma_of(self.width, self.height, &self.gains, epsilon)
    }
}

impl IlluminantChroma {
    /// G-normalizes on construction; all components must be positive.
    pub fn new(rgb: [f64; 3]) -> Result<Self> {
        if rgb.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "illuminant chromaticity must be positive, got {rgb:?}"
            )));
        }
        Ok(Self {
            rgb: [rgb[0] / rgb[1], 1.0, rgb[2] / rgb[1]],
        })
    }

    pub fn rgb(&self) -> [f64; 3] {
        self.rgb
    }
}

fn log_chroma_of(width: usize, height: usize, data: &[f64], epsilon: f64) -> Result<ChromaImage> {
    if epsilon <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let mut out = Vec::with_capacity(width * height * 2);
    for (i, px) in data.chunks_exact(3).enumerate() {
        let (r, g, b) = (px[0], px[1], px[2]);
        if !(r.is_finite() && g.is_finite() && b.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite value at pixel ({}, {})",
                i % width,
                i / width
            )));
        }
        out.push(((r + epsilon) / (g + epsilon)).ln());
        out.push(((b + epsilon) / (g + epsilon)).ln());
    }
    ChromaImage::new(width, height, out)
}

/// u = ln((R+ε)/(G+ε)), v = ln((B+ε)/(G+ε)) per pixel.
pub fn to_log_chroma(img: &LinearImage, epsilon: f64) -> Result<ChromaImage> {
    log_chroma_of(img.width, img.height, &img.data, epsilon)
}

/// Back-transform to RGB gains: (exp(u), 1, exp(v)). The G channel is
/// anchored to 1 because the absolute scale is lost in uv space.
pub fn from_log_chroma(chroma: &ChromaImage) -> Result<IlluminationMap> {
    let mut gains = Vec::with_capacity(chroma.width * chroma.height * 3);
    for uv in chroma.data.chunks_exact(2) {
        if !(uv[0].is_finite() && uv[1].is_finite()) {
            return Err(Error::InvalidInput(
                "non-finite chroma value".to_string(),
            ));
        }
        gains.push(uv[0].exp());
        gains.push(1.0);
        gains.push(uv[1].exp());
    }
    IlluminationMap::new(chroma.width, chroma.height, gains)
}

/// Element-wise von Kries transform: output = gain ⊙ image per pixel.
/// Values are not clamped here; clamping happens at encoding time only.
pub fn apply_white_balance(img: &LinearImage, map: &IlluminationMap) -> Result<LinearImage> {
    if img.width != map.width || img.height != map.height {
        return Err(Error::Shape(format!(
            "image {}x{} vs map {}x{}",
            img.width, img.height, map.width, map.height
        )));
    }
    let data = img
        .data
        .iter()
        .zip(map.gains.iter())
        .map(|(v, g)| v * g)
        .collect();
    Ok(LinearImage {
        width: img.width,
        height: img.height,
        data,
    })
}

/// Bilinear resample with half-pixel-centered coordinates; exact pass-through
/// when the dimensions are unchanged. Works on any channel count.
pub fn resize_bilinear_raw(
    data: &[f64],
    width: usize,
    height: usize,
    channels: usize,
    new_w: usize,
    new_h: usize,
) -> Result<Vec<f64>> {
    if new_w == 0 || new_h == 0 {
        return Err(Error::InvalidArgument(
            "resize target dimensions must be at least 1".to_string(),
        ));
    }
    if data.len() != width * height * channels {
        return Err(Error::Shape(format!(
            "resize input length {} does not match {}x{}x{}",
            data.len(),
            width,
            height,
            channels
        )));
    }
    if new_w == width && new_h == height {
        return Ok(data.to_vec());
    }
    let mut out = vec![0.0; new_w * new_h * channels];
    let sx = width as f64 / new_w as f64;
    let sy = height as f64 / new_h as f64;
    for oy in 0..new_h {
        let fy = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, (height - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(height - 1);
        let wy = fy - y0 as f64;
        for ox in 0..new_w {
            let fx = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, (width - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(width - 1);
            let wx = fx - x0 as f64;
            let base = (oy * new_w + ox) * channels;
            for c in 0..channels {
                let p00 = data[(y0 * width + x0) * channels + c];
                let p01 = data[(y0 * width + x1) * channels + c];
                let p10 = data[(y1 * width + x0) * channels + c];
                let p11 = data[(y1 * width + x1) * channels + c];
                let top = p00 + (p01 - p00) * wx;
                let bot = p10 + (p11 - p10) * wx;
                out[base + c] = top + (bot - top) * wy;
            }
        }
    }
    Ok(out)
}

pub fn resize_bilinear(img: &LinearImage, new_w: usize, new_h: usize) -> Result<LinearImage> {
    let data = resize_bilinear_raw(&img.data, img.width, img.height, 3, new_w, new_h)?;
    Ok(LinearImage {
        width: new_w,
        height: new_h,
        data,
    })
}

pub fn resize_map_bilinear(
    map: &IlluminationMap,
    new_w: usize,
    new_h: usize,
) -> Result<IlluminationMap> {
    let gains = resize_bilinear_raw(&map.gains, map.width, map.height, 3, new_w, new_h)?;
    IlluminationMap::new(new_w, new_h, gains)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use proptest::prelude::*;

    #[test]
    fn log_chroma_of_gray_pixels_is_zero() {
        for g in [0.0, 0.25, 1.0] {
            let img = LinearImage::filled(2, 2, [g, g, g]);
            let chroma = to_log_chroma(&img, 1e-6).unwrap();
            assert!(chroma.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn log_chroma_of_two_one_one() {
        let img = LinearImage::filled(1, 1, [2.0, 1.0, 1.0]);
        let chroma = to_log_chroma(&img, 1e-6).unwrap();
        let [u, v] = chroma.uv(0, 0);
        assert_abs_diff_eq!(u, 0.693147, epsilon = 1e-5);
        assert_abs_diff_eq!(v, 0.0, epsilon = 1e-5);
    }

    #[test]
    fn log_chroma_rejects_bad_epsilon() {
        let img = LinearImage::filled(1, 1, [1.0, 1.0, 1.0]);
        assert!(matches!(
            to_log_chroma(&img, 0.0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn from_log_chroma_identity_and_exp() {
        let zero = ChromaImage::zeros(2, 2);
        let map = from_log_chroma(&zero).unwrap();
        assert!(map.gains().iter().all(|&g| g == 1.0));

        let ln2 = 2.0f64.ln();
        let chroma = ChromaImage::new(1, 1, vec![ln2, -ln2]).unwrap();
        let map = from_log_chroma(&chroma).unwrap();
        let [e1, e2, e3] = map.gain(0, 0);
        assert_abs_diff_eq!(e1, 2.0, epsilon = 1e-9);
        assert_eq!(e2, 1.0);
        assert_abs_diff_eq!(e3, 0.5, epsilon = 1e-9);
    }

    #[test]
    fn round_trip_recovers_g_normalized_chromaticity() {
        // Oracle: G-normalized chromaticity computed directly, compared
        // against the through-uv reconstruction.
        let mut rng_state = 0x1234_5678_u64;
        let mut next = move || {
            rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1);
            1e-3 + (rng_state >> 11) as f64 / (1u64 << 53) as f64
        };
        let data: Vec<f64> = (0..4 * 4 * 3).map(|_| next()).collect();
        let img = LinearImage::new(4, 4, data).unwrap();
        let eps = 1e-6;
        let map = from_log_chroma(&to_log_chroma(&img, eps).unwrap()).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                let [r, g, b] = img.pixel(x, y);
                let [e1, e2, e3] = map.gain(x, y);
                // the regularized ratio is the exact target; it converges to
                // r/g as eps -> 0
                assert_relative_eq!(e1, (r + eps) / (g + eps), max_relative = 1e-12);
                assert_eq!(e2, 1.0);
                assert_relative_eq!(e3, (b + eps) / (g + eps), max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn gain_map_round_trip_is_g_normalization() {
        let map = IlluminationMap::new(
            2,
            1,
            vec![0.8, 2.0, 1.2, 1.5, 0.5, 0.25],
        )
        .unwrap();
        let back = from_log_chroma(&map.to_log_chroma(1e-9).unwrap()).unwrap();
        let expect = map.g_normalized();
        for (a, b) in back.gains().iter().zip(expect.gains()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-6);
        }
    }

    #[test]
    fn white_balance_identity_and_scalar() {
        let img = LinearImage::filled(3, 2, [0.25, 0.5, 0.5]);
        let ones = IlluminationMap::filled(3, 2, [1.0, 1.0, 1.0]);
        assert_eq!(apply_white_balance(&img, &ones).unwrap(), img);

        let gains = IlluminationMap::filled(3, 2, [2.0, 1.0, 1.0]);
        let out = apply_white_balance(&img, &gains).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn white_balance_reciprocal_inverts() {
        let img = LinearImage::new(2, 1, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let map = IlluminationMap::new(2, 1, vec![1.3, 0.7, 2.0, 0.5, 1.1, 0.9]).unwrap();
        let wb = apply_white_balance(&img, &map).unwrap();
        let back = apply_white_balance(&wb, &map.reciprocal()).unwrap();
        for (a, b) in back.data().iter().zip(img.data()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-6);
        }
    }

    #[test]
    fn white_balance_shape_mismatch() {
        let img = LinearImage::filled(2, 2, [0.5; 3]);
        let map = IlluminationMap::filled(3, 2, [1.0; 3]);
        assert!(matches!(
            apply_white_balance(&img, &map),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn resize_identity_is_bit_exact() {
        let img = LinearImage::new(2, 2, (0..12).map(|i| i as f64 / 11.0).collect()).unwrap();
        let out = resize_bilinear(&img, 2, 2).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn resize_constant_stays_constant() {
        let img = LinearImage::filled(3, 5, [0.3, 0.6, 0.9]);
        let out = resize_bilinear(&img, 7, 2).unwrap();
        for px in out.data().chunks_exact(3) {
            assert_abs_diff_eq!(px[0], 0.3, epsilon = 1e-12);
            assert_abs_diff_eq!(px[1], 0.6, epsilon = 1e-12);
            assert_abs_diff_eq!(px[2], 0.9, epsilon = 1e-12);
        }
    }

    #[test]
    fn resize_matches_direct_formula() {
        // 2x1 row [0, 1] upsampled to 4x1; oracle evaluates the half-pixel
        // bilinear formula by hand: centers at 0.5,1.5,2.5,3.5 of 4 map to
        // source coords 0.5*x_scale-0.5 with x_scale = 0.5.
        let img = LinearImage::new(2, 1, vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        let out = resize_bilinear(&img, 4, 1).unwrap();
        let expect = [0.0, 0.25, 0.75, 1.0];
        for (x, e) in expect.iter().enumerate() {
            assert_abs_diff_eq!(out.pixel(x, 0)[0], *e, epsilon = 1e-6);
        }
    }

    #[test]
    fn resize_zero_dimension_rejected() {
        let img = LinearImage::filled(2, 2, [0.5; 3]);
        assert!(matches!(
            resize_bilinear(&img, 0, 2),
            Err(Error::InvalidArgument(_))
        ));
    }

    proptest! {
        #[test]
        fn white_balance_is_linear_in_image(
            scale in 0.0f64..4.0,
            seed in 0u64..1000,
        ) {
            let mut s = seed.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(1);
            let mut next = move || {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (s >> 11) as f64 / (1u64 << 53) as f64
            };
            let img = LinearImage::new(3, 3, (0..27).map(|_| next()).collect()).unwrap();
            let map = IlluminationMap::new(3, 3, (0..27).map(|_| next() + 0.1).collect()).unwrap();
            let lhs = apply_white_balance(&img.scaled(scale), &map).unwrap();
            let rhs = apply_white_balance(&img, &map).unwrap().scaled(scale);
            for (a, b) in lhs.data().iter().zip(rhs.data()) {
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
            }
        }
    }
}
