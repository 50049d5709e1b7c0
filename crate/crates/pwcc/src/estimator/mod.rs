//! Compact encoder-decoder illumination estimator: a 7-layer mini U-Net
//! mapping the input's uv representation to a pixel-wise uv gain map, with
//! hand-rolled forward/backward passes, SGD training, and a bit-exact
//! parameter file format.

pub mod nn;
mod train;

pub use train::{train, EpochRecord, TrainConfig, TrainingLog};

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imagecore::{self, ChromaImage, IlluminationMap, LinearImage};
use nn::{ConvLayer, Tensor};

/// (in_channels, out_channels, kernel, stride) per layer. Layers 2 and 3
/// downsample; layers 5 and 6 run after ×2 nearest upsampling with skip
/// concatenation from the matching encoder stage; layer 7 is the linear
/// 1×1 output head.
pub const ARCHITECTURE: [(usize, usize, usize, usize); 7] = [
    (2, 8, 3, 1),
    (8, 16, 3, 2),
    (16, 32, 3, 2),
    (32, 32, 3, 1),
    (32 + 16, 16, 3, 1),
    (16 + 8, 8, 3, 1),
    (8, 2, 1, 1),
];

const PARAMS_MAGIC: &[u8; 4] = b"PWCM";
const PARAMS_VERSION: u32 = 1;

/// All weights and biases of the estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorParams {
    pub layers: Vec<ConvLayer>,
}

/// Per-layer weight/bias gradients, same shapes as [`EstimatorParams`].
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl EstimatorParams {
    pub fn zeros() -> Self {
        Self {
            layers: ARCHITECTURE
                .iter()
                .map(|&(ic, oc, k, s)| ConvLayer::zeros(ic, oc, k, s))
                .collect(),
        }
    }

    pub fn total_params(&self) -> usize {
        self.layers.iter().map(ConvLayer::param_count).sum()
    }

    /// Flat parameter accessors (weights then biases per layer, in layer
    /// order); used by the finite-difference checks.
    pub fn get_param(&self, mut idx: usize) -> f64 {
        for l in &self.layers {
            if idx < l.weights.len() {
                return l.weights[idx];
            }
            idx -= l.weights.len();
            if idx < l.biases.len() {
                return l.biases[idx];
            }
            idx -= l.biases.len();
        }
        panic!("parameter index out of range");
    }

    pub fn set_param(&mut self, mut idx: usize, value: f64) {
        for l in &mut self.layers {
            if idx < l.weights.len() {
                l.weights[idx] = value;
                return;
            }
            idx -= l.weights.len();
            if idx < l.biases.len() {
                l.biases[idx] = value;
                return;
            }
            idx -= l.biases.len();
        }
        panic!("parameter index out of range");
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|v| v.is_finite()))
    }
}

impl ParamGrads {
    pub fn zeros_like(params: &EstimatorParams) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.biases.len()]))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &ParamGrads) {
        for ((dw, db), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            for (a, b) in dw.iter_mut().zip(ow) {
                *a += b;
            }
            for (a, b) in db.iter_mut().zip(ob) {
                *a += b;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for (dw, db) in &mut self.layers {
            for v in dw.iter_mut().chain(db.iter_mut()) {
                *v *= factor;
            }
        }
    }
}

/// Uniform init scaled by 1/√(fan_in) per layer, biases zero. Values are
/// drawn in f32 so a freshly initialized model round-trips the parameter
/// file bit-exactly.
pub fn init_params(seed: u64) -> EstimatorParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = EstimatorParams::zeros();
    for l in &mut params.layers {
        // uniform bounds proportional to 1/sqrt(fan_in) (std sqrt(2/fan_in)),
        // which keeps activation variance roughly constant through the ReLUs
        let fan_in = (l.kernel * l.kernel * l.in_c) as f64;
        let scale = (6.0 / fan_in).sqrt();
        for w in &mut l.weights {
            let u: f32 = rng.gen();
            *w = ((2.0 * u - 1.0) * scale as f32) as f64;
        }
        // biases stay zero
    }
    params
}

/// Intermediate activations kept for the backward pass.
pub struct ForwardCache {
    a0: Tensor,
    a1: Tensor,
    a2: Tensor,
    a3: Tensor,
    a4: Tensor,
    a5: Tensor,
    a6: Tensor,
    c1: Tensor,
    c2: Tensor,
}

fn check_input_dims(width: usize, height: usize) -> Result<()> {
    if width != height || width == 0 || width % 4 != 0 {
        return Err(Error::Shape(format!(
            "estimator input must be square with side divisible by 4, got {width}x{height}"
        )));
    }
    Ok(())
}

/// Runs the network on a uv image; the prediction has the same dimensions.
pub fn forward(
    params: &EstimatorParams,
    input: &ChromaImage,
) -> Result<(ChromaImage, ForwardCache)> {
    check_input_dims(input.width(), input.height())?;
    let l = &params.layers;
    if l.len() != ARCHITECTURE.len() {
        return Err(Error::Internal(format!(
            "expected {} layers, got {}",
            ARCHITECTURE.len(),
            l.len()
        )));
    }
    let a0 = Tensor::from_chroma(input);
    let mut a1 = nn::conv_forward(&l[0], &a0);
    nn::relu_inplace(&mut a1);
    let mut a2 = nn::conv_forward(&l[1], &a1);
    nn::relu_inplace(&mut a2);
    let mut a3 = nn::conv_forward(&l[2], &a2);
    nn::relu_inplace(&mut a3);
    let mut a4 = nn::conv_forward(&l[3], &a3);
    nn::relu_inplace(&mut a4);
    let u1 = nn::upsample2(&a4);
    let c1 = nn::concat_channels(&u1, &a2);
    let mut a5 = nn::conv_forward(&l[4], &c1);
    nn::relu_inplace(&mut a5);
    let u2 = nn::upsample2(&a5);
    let c2 = nn::concat_channels(&u2, &a1);
    let mut a6 = nn::conv_forward(&l[5], &c2);
    nn::relu_inplace(&mut a6);
    let out = nn::conv_forward(&l[6], &a6);
    let pred = out.clone().into_chroma()?;
    Ok((
        pred,
        ForwardCache {
            a0,
            a1,
            a2,
            a3,
            a4,
            a5,
            a6,
            c1,
            c2,
        },
    ))
}

/// Backpropagates the output gradient through the cached forward pass.
pub fn backward(
    params: &EstimatorParams,
    cache: &ForwardCache,
    grad_out: &ChromaImage,
) -> Result<ParamGrads> {
    if grad_out.width() != cache.a0.w || grad_out.height() != cache.a0.h {
        return Err(Error::Internal(format!(
            "output gradient {}x{} does not match cached input {}x{}",
            grad_out.width(),
            grad_out.height(),
            cache.a0.w,
            cache.a0.h
        )));
    }
    let l = &params.layers;
    if l.len() != ARCHITECTURE.len()
        || l.iter()
            .zip(ARCHITECTURE)
            .any(|(layer, (ic, oc, k, s))| {
                (layer.in_c, layer.out_c, layer.kernel, layer.stride) != (ic, oc, k, s)
            })
    {
        return Err(Error::Internal(
            "parameter shapes do not match the fixed architecture".to_string(),
        ));
    }

    let dout = Tensor::from_chroma(grad_out);
    // output head (linear)
    let (dw7, db7, mut da6) = nn::conv_backward(&l[6], &cache.a6, &dout);
    nn::relu_backward_inplace(&mut da6, &cache.a6);
    // decoder stage 2
    let (dw6, db6, dc2) = nn::conv_backward(&l[5], &cache.c2, &da6);
    let (du2, da1_skip) = nn::split_channels(&dc2, l[5].in_c - l[0].out_c);
    let mut da5 = nn::upsample2_backward(&du2);
    nn::relu_backward_inplace(&mut da5, &cache.a5);
    // decoder stage 1
    let (dw5, db5, dc1) = nn::conv_backward(&l[4], &cache.c1, &da5);
    let (du1, da2_skip) = nn::split_channels(&dc1, l[4].in_c - l[1].out_c);
    let mut da4 = nn::upsample2_backward(&du1);
    nn::relu_backward_inplace(&mut da4, &cache.a4);
    // bottleneck
    let (dw4, db4, mut da3) = nn::conv_backward(&l[3], &cache.a3, &da4);
    nn::relu_backward_inplace(&mut da3, &cache.a3);
    // encoder stage 3
    let (dw3, db3, mut da2) = nn::conv_backward(&l[2], &cache.a2, &da3);
    for (g, s) in da2.data.iter_mut().zip(&da2_skip.data) {
        *g += s;
    }
    nn::relu_backward_inplace(&mut da2, &cache.a2);
    // encoder stage 2
    let (dw2, db2, mut da1) = nn::conv_backward(&l[1], &cache.a1, &da2);
    for (g, s) in da1.data.iter_mut().zip(&da1_skip.data) {
        *g += s;
    }
    nn::relu_backward_inplace(&mut da1, &cache.a1);
    // encoder stage 1
    let (dw1, db1, _) = nn::conv_backward(&l[0], &cache.a0, &da1);

    Ok(ParamGrads {
        layers: vec![
            (dw1, db1),
            (dw2, db2),
            (dw3, db3),
            (dw4, db4),
            (dw5, db5),
            (dw6, db6),
            (dw7, db7),
        ],
    })
}

/// Full inference path: uv transform, network, back to an RGB gain map
/// (G-anchored by construction).
pub fn infer(
    params: &EstimatorParams,
    img: &LinearImage,
    epsilon: f64,
) -> Result<IlluminationMap> {
    check_input_dims(img.width(), img.height())?;
    let input = imagecore::to_log_chroma(img, epsilon)?;
    let (pred, _) = forward(params, &input)?;
    imagecore::from_log_chroma(&pred)
}

/// Writes the "PWCM" container: magic, version, block count, then per
/// parameter block its rank, u32 dims, and f32 little-endian payload.
/// Each conv layer contributes a weight block [oc, k, k, ic] and a bias
/// block [oc].
pub fn save_params(path: impl AsRef<Path>, params: &EstimatorParams) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|source| Error::io(path, source))?;
    let mut w = BufWriter::new(file);
    let io_err = |source| Error::io(path, source);
    w.write_all(PARAMS_MAGIC).map_err(io_err)?;
    w.write_all(&PARAMS_VERSION.to_le_bytes()).map_err(io_err)?;
    let block_count = (params.layers.len() * 2) as u32;
    w.write_all(&block_count.to_le_bytes()).map_err(io_err)?;
    for l in &params.layers {
        // weights
        w.write_all(&4u32.to_le_bytes()).map_err(io_err)?;
        for dim in [l.out_c, l.kernel, l.kernel, l.in_c] {
            w.write_all(&(dim as u32).to_le_bytes()).map_err(io_err)?;
        }
        for v in &l.weights {
            w.write_all(&(*v as f32).to_le_bytes()).map_err(io_err)?;
        }
        // biases
        w.write_all(&1u32.to_le_bytes()).map_err(io_err)?;
        w.write_all(&(l.out_c as u32).to_le_bytes()).map_err(io_err)?;
        for v in &l.biases {
            w.write_all(&(*v as f32).to_le_bytes()).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

pub fn load_params(path: impl AsRef<Path>) -> Result<EstimatorParams> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| Error::io(path, source))?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::format(path, "truncated header"))?;
    if &magic != PARAMS_MAGIC {
        return Err(Error::format(
            path,
            format!("bad magic {magic:?}, expected \"PWCM\""),
        ));
    }
    let mut buf = [0u8; 4];
    let mut read_u32 = |r: &mut BufReader<File>| -> Result<u32> {
        r.read_exact(&mut buf)
            .map_err(|_| Error::format(path, "truncated file"))?;
        Ok(u32::from_le_bytes(buf))
    };
    let version = read_u32(&mut r)?;
    if version != PARAMS_VERSION {
        return Err(Error::format(
            path,
            format!("unsupported version {version} (expected {PARAMS_VERSION})"),
        ));
    }
    let block_count = read_u32(&mut r)? as usize;
    if block_count != ARCHITECTURE.len() * 2 {
        return Err(Error::format(
            path,
            format!(
                "expected {} parameter blocks, found {block_count}",
                ARCHITECTURE.len() * 2
            ),
        ));
    }
    let mut read_block = |r: &mut BufReader<File>, expect_dims: &[usize]| -> Result<Vec<f64>> {
        let rank = read_u32(r)? as usize;
        if rank != expect_dims.len() {
            return Err(Error::format(
                path,
                format!("block rank {rank} does not match expected {}", expect_dims.len()),
            ));
        }
        let mut count = 1usize;
        for &expect in expect_dims {
            let dim = read_u32(r)? as usize;
            if dim != expect {
                return Err(Error::format(
                    path,
                    format!("block dimension {dim} does not match expected {expect}"),
                ));
            }
            count *= dim;
        }
        let mut payload = vec![0u8; count * 4];
        r.read_exact(&mut payload)
            .map_err(|_| Error::format(path, "truncated payload"))?;
        Ok(payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect())
    };

    let mut params = EstimatorParams::zeros();
    for l in &mut params.layers {
        l.weights = read_block(&mut r, &[l.out_c, l.kernel, l.kernel, l.in_c])?;
        l.biases = read_block(&mut r, &[l.out_c])?;
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing).map_err(|source| Error::io(path, source))? != 0 {
        return Err(Error::format(path, "trailing bytes after parameter blocks"));
    }
    if !params.all_finite() {
        return Err(Error::format(path, "non-finite parameter value"));
    }
    Ok(params)
}
