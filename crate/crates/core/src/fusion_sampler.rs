//! Aligned pyramid feature fusion: differentiable bilinear sampling of
//! multi-scale feature maps at projected point coordinates, and the quantized
//! nearest-cell baseline it replaces.
//!
//! The sampling kernel is
//! `Σₙ Σₘ U[n,m,:] · max(0, 1−|Px−m|) · max(0, 1−|Py−n|)` over the full map;
//! only the 2×2 cells around `(Px, Py)` have nonzero weight, so the
//! implementation restricts to that support (results are identical, a test
//! checks equality against the full sum).

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Coordinates closer than this to an integer sit on a kink of the kernel and
/// have no well-defined derivative.
pub const KINK_EPS: f64 = 1e-3;

#[derive(Debug, Error, PartialEq)]
pub enum SamplerError {
    #[error("feature map dimensions must be positive")]
    EmptyMap,
    #[error("feature map contains non-finite values")]
    NonFinite,
    #[error("stride must be >= 1, got {0}")]
    BadStride(u32),
    #[error("pyramid strides must be strictly increasing")]
    StridesNotIncreasing,
    #[error("data length {got} does not match H*W*C = {want}")]
    DataLength { got: usize, want: usize },
    #[error("coordinate ({0}, {1}) is within {KINK_EPS} of a kernel kink")]
    AtKink(f64, f64),
}

/// H×W×C grid of 32-bit features with a pixel stride (pixels per cell).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    height: u32,
    width: u32,
    channels: u32,
    stride: u32,
    data: Vec<f32>,
}

impl FeatureMap {
    /// `data` is row-major `[n][m][c]`.
    pub fn new(
        height: u32,
        width: u32,
        channels: u32,
        stride: u32,
        data: Vec<f32>,
    ) -> Result<Self, SamplerError> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(SamplerError::EmptyMap);
        }
        if stride == 0 {
            return Err(SamplerError::BadStride(stride));
        }
        let want = (height as usize) * (width as usize) * (channels as usize);
        if data.len() != want {
            return Err(SamplerError::DataLength {
                got: data.len(),
                want,
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(SamplerError::NonFinite);
        }
        Ok(Self {
            height,
            width,
            channels,
            stride,
            data,
        })
    }

    pub fn height(&self) -> u32 {
        self.height
    }
    pub fn width(&self) -> u32 {
        self.width
    }
    pub fn channels(&self) -> u32 {
        self.channels
    }
    pub fn stride(&self) -> u32 {
        self.stride
    }
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Cell value at row `n`, column `m`, channel `c`.
    pub fn at(&self, n: u32, m: u32, c: u32) -> f32 {
        let idx = ((n as usize) * (self.width as usize) + m as usize) * (self.channels as usize)
            + c as usize;
        self.data[idx]
    }
}

/// Ordered multi-scale maps with strictly increasing strides.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePyramid {
    levels: Vec<FeatureMap>,
}

impl FeaturePyramid {
    pub fn new(levels: Vec<FeatureMap>) -> Result<Self, SamplerError> {
        if !levels.windows(2).all(|w| w[0].stride < w[1].stride) {
            return Err(SamplerError::StridesNotIncreasing);
        }
        Ok(Self { levels })
    }

    pub fn levels(&self) -> &[FeatureMap] {
        &self.levels
    }
}

fn hat(d: f64) -> f64 {
    (1.0 - d.abs()).max(0.0)
}

/// Bilinear sample at continuous cell coordinates `(px, py)`; `px` indexes
/// width (m), `py` height (n). Out-of-range coordinates yield zeros because
/// the kernel weights vanish there.
pub fn bilinear_sample(map: &FeatureMap, px: f64, py: f64) -> Vec<f32> {
    let mut acc = vec![0.0f64; map.channels as usize];
    let m0 = px.floor() as i64;
    let n0 = py.floor() as i64;
    for n in n0..=n0 + 1 {
        if n < 0 || n >= map.height as i64 {
            continue;
        }
        let wy = hat(py - n as f64);
        if wy == 0.0 {
            continue;
        }
        for m in m0..=m0 + 1 {
            if m < 0 || m >= map.width as i64 {
                continue;
            }
            let w = hat(px - m as f64) * wy;
            if w == 0.0 {
                continue;
            }
            for c in 0..map.channels {
                acc[c as usize] += w * map.at(n as u32, m as u32, c) as f64;
            }
        }
    }
    acc.into_iter().map(|v| v as f32).collect()
}

/// Analytic partial derivatives of [`bilinear_sample`] with respect to the
/// sample coordinates. Kink points (within [`KINK_EPS`] of an integer) are
/// rejected.
pub fn bilinear_sample_grad(
    map: &FeatureMap,
    px: f64,
    py: f64,
) -> Result<(Vec<f32>, Vec<f32>), SamplerError> {
    if (px - px.round()).abs() < KINK_EPS || (py - py.round()).abs() < KINK_EPS {
        return Err(SamplerError::AtKink(px, py));
    }
    let c = map.channels as usize;
    let mut dx = vec![0.0f64; c];
    let mut dy = vec![0.0f64; c];
    let m0 = px.floor() as i64;
    let n0 = py.floor() as i64;
    for n in n0..=n0 + 1 {
        if n < 0 || n >= map.height as i64 {
            continue;
        }
        let ddy = py - n as f64;
        let wy = hat(ddy);
        let gy = if ddy.abs() < 1.0 { -ddy.signum() } else { 0.0 };
        for m in m0..=m0 + 1 {
            if m < 0 || m >= map.width as i64 {
                continue;
            }
            let ddx = px - m as f64;
            let wx = hat(ddx);
            let gx = if ddx.abs() < 1.0 { -ddx.signum() } else { 0.0 };
            for ch in 0..map.channels {
                let u = map.at(n as u32, m as u32, ch) as f64;
                dx[ch as usize] += u * gx * wy;
                dy[ch as usize] += u * wx * gy;
            }
        }
    }
    Ok((
        dx.into_iter().map(|v| v as f32).collect(),
        dy.into_iter().map(|v| v as f32).collect(),
    ))
}

/// Sample every pyramid level at `(u/stride, v/stride)` and concatenate the
/// per-level feature vectors in level order.
pub fn pyramid_sample(pyr: &FeaturePyramid, u: f64, v: f64) -> Vec<f32> {
    let mut out = Vec::new();
    for level in pyr.levels() {
        let s = level.stride as f64;
        out.extend(bilinear_sample(level, u / s, v / s));
    }
    out
}

/// Nearest-cell lookup at `(round(py), round(px))`, clamped to the grid — the
/// misaligned baseline.
pub fn quantized_sample(map: &FeatureMap, px: f64, py: f64) -> Vec<f32> {
    let m = (px.round() as i64).clamp(0, map.width as i64 - 1) as u32;
    let n = (py.round() as i64).clamp(0, map.height as i64 - 1) as u32;
    (0..map.channels).map(|c| map.at(n, m, c)).collect()
}

/// Reference implementation summing over the full H×W grid; test oracle for
/// the 2×2-support fast path.
pub fn bilinear_sample_full_sum(map: &FeatureMap, px: f64, py: f64) -> Vec<f32> {
    let mut acc = vec![0.0f64; map.channels as usize];
    for n in 0..map.height {
        for m in 0..map.width {
            let w = hat(px - m as f64) * hat(py - n as f64);
            for c in 0..map.channels {
                acc[c as usize] += w * map.at(n, m, c) as f64;
            }
        }
    }
    acc.into_iter().map(|v| v as f32).collect()
}

/// Binary container: header `(H, W, C, stride)` as little-endian u32, then
/// row-major little-endian f32 data.
pub fn write_feature_map(map: &FeatureMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + map.data.len() * 4);
    for v in [map.height, map.width, map.channels, map.stride] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in &map.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

#[derive(Debug, Error, PartialEq)]
pub enum FeatureMapReadError {
    #[error("container shorter than the 16-byte header")]
    ShortHeader,
    #[error("payload length {got} bytes does not match H*W*C = {want} floats")]
    PayloadLength { got: usize, want: usize },
    #[error(transparent)]
    Invalid(#[from] SamplerError),
}

pub fn read_feature_map(bytes: &[u8]) -> Result<FeatureMap, FeatureMapReadError> {
    if bytes.len() < 16 {
        return Err(FeatureMapReadError::ShortHeader);
    }
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let (h, w, c, stride) = (u32_at(0), u32_at(4), u32_at(8), u32_at(12));
    let want = (h as usize) * (w as usize) * (c as usize);
    let payload = &bytes[16..];
    if payload.len() != want * 4 {
        return Err(FeatureMapReadError::PayloadLength {
            got: payload.len(),
            want,
        });
    }
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok(FeatureMap::new(h, w, c, stride, data)?)
}
