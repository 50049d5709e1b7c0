//! File I/O: 16-bit linear PNG interchange and the lossless "PWCC" float-map
//! container used for illumination and alpha maps (which exceed [0, 1]).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageReader, Rgb};

use crate::error::{Error, Result};
use crate::imagecore::{IlluminationMap, LinearImage};
use crate::synth::AlphaMap;

const FLOAT_MAP_MAGIC: &[u8; 4] = b"PWCC";

/// Raw float map as stored on disk: `channels` ∈ {1, 2, 3}, row-major,
/// channel-interleaved f32.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatMap {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl FloatMap {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if !(1..=3).contains(&channels) {
            return Err(Error::InvalidArgument(format!(
                "float map channel count must be 1..=3, got {channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::Shape(format!(
                "float map data length {} does not match {}x{}x{}",
                data.len(),
                width,
                height,
                channels
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn from_f64(width: usize, height: usize, channels: usize, data: &[f64]) -> Result<Self> {
        Self::new(
            width,
            height,
            channels,
            data.iter().map(|&v| v as f32).collect(),
        )
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }
}

/// Writes a 16-bit RGB PNG; values are clamped to [0, 1] and quantized as
/// round(v * 65535).
pub fn write_image(path: impl AsRef<Path>, img: &LinearImage) -> Result<()> {
    let path = path.as_ref();
    let mut buf = ImageBuffer::<Rgb<u16>, Vec<u16>>::new(img.width() as u32, img.height() as u32);
    for (i, px) in buf.pixels_mut().enumerate() {
        let base = i * 3;
        for c in 0..3 {
            px.0[c] = (img.data()[base + c].clamp(0.0, 1.0) * 65535.0).round() as u16;
        }
    }
    buf.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads a 16-bit RGB PNG written by [`write_image`]; decodes as v / 65535.
pub fn read_image(path: impl AsRef<Path>) -> Result<LinearImage> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
        ));
    }
    let reader = ImageReader::open(path).map_err(|source| Error::io(path, source))?;
    let decoded = reader.decode().map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let rgb16 = match decoded {
        DynamicImage::ImageRgb16(buf) => buf,
        other => {
            return Err(Error::format(
                path,
                format!(
                    "expected 16-bit RGB PNG, got {:?}",
                    other.color()
                ),
            ))
        }
    };
    let (w, h) = (rgb16.width() as usize, rgb16.height() as usize);
    let data = rgb16
        .into_raw()
        .into_iter()
        .map(|v| v as f64 / 65535.0)
        .collect();
    LinearImage::new(w, h, data)
}

/// Writes the bit-exact "PWCC" float-map container:
/// magic, u32le width/height/channels, then f32le payload.
pub fn write_float_map(path: impl AsRef<Path>, map: &FloatMap) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|source| Error::io(path, source))?;
    let mut w = BufWriter::new(file);
    let io_err = |source| Error::io(path, source);
    w.write_all(FLOAT_MAP_MAGIC).map_err(io_err)?;
    w.write_all(&(map.width as u32).to_le_bytes()).map_err(io_err)?;
    w.write_all(&(map.height as u32).to_le_bytes()).map_err(io_err)?;
    w.write_all(&(map.channels as u32).to_le_bytes()).map_err(io_err)?;
    for v in &map.data {
        w.write_all(&v.to_le_bytes()).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn read_float_map(path: impl AsRef<Path>) -> Result<FloatMap> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| Error::io(path, source))?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::format(path, "truncated header"))?;
    if &magic != FLOAT_MAP_MAGIC {
        return Err(Error::format(
            path,
            format!("bad magic {:?}, expected \"PWCC\"", magic),
        ));
    }
    let mut u32buf = [0u8; 4];
    let mut read_u32 = |r: &mut BufReader<File>| -> Result<u32> {
        r.read_exact(&mut u32buf)
            .map_err(|_| Error::format(path, "truncated header"))?;
        Ok(u32::from_le_bytes(u32buf))
    };
    let width = read_u32(&mut r)? as usize;
    let height = read_u32(&mut r)? as usize;
    let channels = read_u32(&mut r)? as usize;
    if !(1..=3).contains(&channels) {
        return Err(Error::format(
            path,
            format!("channel count {channels} outside 1..=3"),
        ));
    }
    let count = width * height * channels;
    let mut payload = vec![0u8; count * 4];
    r.read_exact(&mut payload)
        .map_err(|_| Error::format(path, "truncated payload"))?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing).map_err(|source| Error::io(path, source))? != 0 {
        return Err(Error::format(path, "trailing bytes after payload"));
    }
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    FloatMap::new(width, height, channels, data)
}

pub fn write_illumination_map(path: impl AsRef<Path>, map: &IlluminationMap) -> Result<()> {
    let fm = FloatMap::from_f64(map.width(), map.height(), 3, map.gains())?;
    write_float_map(path, &fm)
}

pub fn read_illumination_map(path: impl AsRef<Path>) -> Result<IlluminationMap> {
    let path = path.as_ref();
    let fm = read_float_map(path)?;
    if fm.channels != 3 {
        return Err(Error::format(
            path,
            format!("expected 3-channel map, got {}", fm.channels),
        ));
    }
    IlluminationMap::new(fm.width, fm.height, fm.to_f64())
}

pub fn write_alpha_map(path: impl AsRef<Path>, alpha: &AlphaMap) -> Result<()> {
    let fm = FloatMap::from_f64(alpha.width(), alpha.height(), 1, alpha.values())?;
    write_float_map(path, &fm)
}

pub fn read_alpha_map(path: impl AsRef<Path>) -> Result<AlphaMap> {
    let path = path.as_ref();
    let fm = read_float_map(path)?;
    if fm.channels != 1 {
        return Err(Error::format(
            path,
            format!("expected 1-channel map, got {}", fm.channels),
        ));
    }
    AlphaMap::new(fm.width, fm.height, fm.to_f64())
}
