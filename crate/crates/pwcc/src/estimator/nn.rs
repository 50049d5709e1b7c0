//! Minimal CPU tensor ops for the estimator: 3×3 / 1×1 convolutions with
//! analytic backward passes, ReLU, nearest-neighbor upsampling, and channel
//! concatenation. Buffers are row-major H×W×C f64; the channel axis is
//! innermost so the hot dot products run over contiguous memory.

use crate::error::{Error, Result};
use crate::imagecore::ChromaImage;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(h: usize, w: usize, c: usize) -> Self {
        Self {
            h,
            w,
            c,
            data: vec![0.0; h * w * c],
        }
    }

    pub fn from_chroma(img: &ChromaImage) -> Self {
        Self {
            h: img.height(),
            w: img.width(),
            c: 2,
            data: img.data().to_vec(),
        }
    }

    pub fn into_chroma(self) -> Result<ChromaImage> {
        if self.c != 2 {
            return Err(Error::Internal(format!(
                "expected 2-channel tensor, got {}",
                self.c
            )));
        }
        ChromaImage::new(self.w, self.h, self.data)
    }
}

/// One convolution layer. Weights are laid out `[out_c][ky][kx][in_c]` so
/// the innermost loop strides match the input's channel-interleaved layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub in_c: usize,
    pub out_c: usize,
    pub kernel: usize,
    pub stride: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl ConvLayer {
    pub fn zeros(in_c: usize, out_c: usize, kernel: usize, stride: usize) -> Self {
        Self {
            in_c,
            out_c,
            kernel,
            stride,
            weights: vec![0.0; out_c * kernel * kernel * in_c],
            biases: vec![0.0; out_c],
        }
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }

    fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        match self.kernel {
            1 => (h, w),
            // 3x3 with pad 1
            _ => ((h - 1) / self.stride + 1, (w - 1) / self.stride + 1),
        }
    }
}

/// Forward convolution (pad 1 for 3×3 kernels, no padding needed for 1×1).
pub fn conv_forward(l: &ConvLayer, x: &Tensor) -> Tensor {
    debug_assert_eq!(l.in_c, x.c);
    let (oh, ow) = l.out_dims(x.h, x.w);
    let mut out = Tensor::zeros(oh, ow, l.out_c);
    let (ic, oc, k) = (l.in_c, l.out_c, l.kernel);
    let pad = (k / 2) as isize;
    let ktaps = k * k;
    for oy in 0..oh {
        let iy0 = (oy * l.stride) as isize - pad;
        for ox in 0..ow {
            let ix0 = (ox * l.stride) as isize - pad;
            let obase = (oy * ow + ox) * oc;
            let opix = &mut out.data[obase..obase + oc];
            opix.copy_from_slice(&l.biases);
            for ky in 0..k {
                let iy = iy0 + ky as isize;
                if iy < 0 || iy >= x.h as isize {
                    continue;
                }
                for kx in 0..k {
                    let ix = ix0 + kx as isize;
                    if ix < 0 || ix >= x.w as isize {
                        continue;
                    }
                    let ibase = ((iy as usize) * x.w + ix as usize) * ic;
                    let xp = &x.data[ibase..ibase + ic];
                    let wtap = (ky * k + kx) * ic;
                    for (o, acc) in opix.iter_mut().enumerate() {
                        let ws = &l.weights[o * ktaps * ic + wtap..][..ic];
                        let mut sum = 0.0;
                        for i in 0..ic {
                            sum += ws[i] * xp[i];
                        }
                        *acc += sum;
                    }
                }
            }
        }
    }
    out
}

/// Backward convolution: gradients with respect to weights, biases and the
/// layer input, given the gradient at the layer output.
pub fn conv_backward(
    l: &ConvLayer,
    x: &Tensor,
    dout: &Tensor,
) -> (Vec<f64>, Vec<f64>, Tensor) {
    debug_assert_eq!(l.in_c, x.c);
    debug_assert_eq!(l.out_c, dout.c);
    let (ic, oc, k) = (l.in_c, l.out_c, l.kernel);
    let pad = (k / 2) as isize;
    let ktaps = k * k;
    let mut dw = vec![0.0; l.weights.len()];
    let mut db = vec![0.0; l.biases.len()];
    let mut dx = Tensor::zeros(x.h, x.w, x.c);
    for oy in 0..dout.h {
        let iy0 = (oy * l.stride) as isize - pad;
        for ox in 0..dout.w {
            let ix0 = (ox * l.stride) as isize - pad;
            let obase = (oy * dout.w + ox) * oc;
            let g = &dout.data[obase..obase + oc];
            for (o, &go) in g.iter().enumerate() {
                db[o] += go;
            }
            for ky in 0..k {
                let iy = iy0 + ky as isize;
                if iy < 0 || iy >= x.h as isize {
                    continue;
                }
                for kx in 0..k {
                    let ix = ix0 + kx as isize;
                    if ix < 0 || ix >= x.w as isize {
                        continue;
                    }
                    let ibase = ((iy as usize) * x.w + ix as usize) * ic;
                    let xp = &x.data[ibase..ibase + ic];
                    let dxp = &mut dx.data[ibase..ibase + ic];
                    let wtap = (ky * k + kx) * ic;
                    for (o, &go) in g.iter().enumerate() {
                        let wrow = o * ktaps * ic + wtap;
                        let ws = &l.weights[wrow..wrow + ic];
                        let dws = &mut dw[wrow..wrow + ic];
                        for i in 0..ic {
                            dws[i] += go * xp[i];
                            dxp[i] += go * ws[i];
                        }
                    }
                }
            }
        }
    }
    (dw, db, dx)
}

pub fn relu_inplace(t: &mut Tensor) {
    for v in &mut t.data {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Masks `grad` by the post-activation sign: entries where the activation is
/// zero (or negative) receive zero gradient.
pub fn relu_backward_inplace(grad: &mut Tensor, activation: &Tensor) {
    for (g, &a) in grad.data.iter_mut().zip(&activation.data) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Nearest-neighbor ×2 upsampling.
pub fn upsample2(x: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(x.h * 2, x.w * 2, x.c);
    for oy in 0..out.h {
        let sy = oy / 2;
        for ox in 0..out.w {
            let sx = ox / 2;
            let src = (sy * x.w + sx) * x.c;
            let dst = (oy * out.w + ox) * x.c;
            out.data[dst..dst + x.c].copy_from_slice(&x.data[src..src + x.c]);
        }
    }
    out
}

/// Backward of [`upsample2`]: sums each 2×2 block of output gradients.
pub fn upsample2_backward(dout: &Tensor) -> Tensor {
    let (h, w) = (dout.h / 2, dout.w / 2);
    let mut dx = Tensor::zeros(h, w, dout.c);
    for oy in 0..dout.h {
        let sy = oy / 2;
        for ox in 0..dout.w {
            let sx = ox / 2;
            let src = (oy * dout.w + ox) * dout.c;
            let dst = (sy * w + sx) * dout.c;
            for c in 0..dout.c {
                dx.data[dst + c] += dout.data[src + c];
            }
        }
    }
    dx
}

/// Channel concatenation: output pixel = [a-channels, b-channels].
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Tensor {
    debug_assert_eq!((a.h, a.w), (b.h, b.w));
    let mut out = Tensor::zeros(a.h, a.w, a.c + b.c);
    for p in 0..a.h * a.w {
        let dst = p * out.c;
        out.data[dst..dst + a.c].copy_from_slice(&a.data[p * a.c..p * a.c + a.c]);
        out.data[dst + a.c..dst + a.c + b.c].copy_from_slice(&b.data[p * b.c..p * b.c + b.c]);
    }
    out
}

/// Splits a concatenated gradient back into the two channel groups.
pub fn split_channels(d: &Tensor, c_first: usize) -> (Tensor, Tensor) {
    let c_second = d.c - c_first;
    let mut da = Tensor::zeros(d.h, d.w, c_first);
    let mut db = Tensor::zeros(d.h, d.w, c_second);
    for p in 0..d.h * d.w {
        let src = p * d.c;
        da.data[p * c_first..(p + 1) * c_first].copy_from_slice(&d.data[src..src + c_first]);
        db.data[p * c_second..(p + 1) * c_second]
            .copy_from_slice(&d.data[src + c_first..src + d.c]);
    }
    (da, db)
}
