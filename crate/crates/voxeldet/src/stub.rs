//! Deterministic stand-in for the learned feature extractor.
//!
//! Produces reproducible feature maps from an integer hash (splitmix64) so
//! outputs are bit-identical across platforms, and checks the multi-scale
//! shape contract of the voxel grid.

use crate::voxel::{FeatureMap2D, GridError, VoxelGridSpec};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum StubError {
    #[error("feature map dimensions must be >= 1, got {0}x{1}")]
    BadDims(usize, usize),
    #[error("channel count must be >= 1")]
    BadChannels,
    #[error("grid {0}x{1}x{2} is not divisible by 4")]
    IndivisibleGrid(usize, usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeaturePattern {
    /// Position-hashed noise in [0, 1).
    SeededRandom,
    /// Channels 0 and 1 store the cell's own (u, v) indices; remaining
    /// channels carry position-hashed noise. Makes projection correctness an
    /// exact assertion: a voxel's channels 0-1 must equal (floor u, floor v)
    /// of its own projection.
    CoordinateEncoding,
    /// Exactly one cell per channel holds 1.0, the rest are zero.
    OneHot,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StubSpec {
    pub seed: u64,
    pub channels: usize,
    pub pattern: FeaturePattern,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn cell_hash(seed: u64, u: u64, v: u64, c: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed ^ u) ^ v) ^ c)
}

/// Top 24 bits mapped to [0, 1); every value is exactly representable in f32.
fn unit_f32(bits: u64) -> f32 {
    (bits >> 40) as f32 * (1.0 / 16_777_216.0)
}

/// Builds a deterministic feature map. Identical `(spec, width, height,
/// stride)` always yield bitwise identical maps.
pub fn make_features(
    spec: &StubSpec,
    width: usize,
    height: usize,
    stride: u32,
) -> Result<FeatureMap2D, StubError> {
    if width < 1 || height < 1 {
        return Err(StubError::BadDims(width, height));
    }
    if spec.channels < 1 {
        return Err(StubError::BadChannels);
    }
    let channels = spec.channels;
    let mut data = vec![0.0f32; width * height * channels];
    match spec.pattern {
        FeaturePattern::SeededRandom => {
            for v in 0..height {
                for u in 0..width {
                    for c in 0..channels {
                        data[(v * width + u) * channels + c] =
                            unit_f32(cell_hash(spec.seed, u as u64, v as u64, c as u64));
                    }
                }
            }
        }
        FeaturePattern::CoordinateEncoding => {
            for v in 0..height {
                for u in 0..width {
                    let base = (v * width + u) * channels;
                    data[base] = u as f32;
                    if channels > 1 {
                        data[base + 1] = v as f32;
                    }
                    for c in 2..channels {
                        data[base + c] =
                            unit_f32(cell_hash(spec.seed, u as u64, v as u64, c as u64));
                    }
                }
            }
        }
        FeaturePattern::OneHot => {
            for c in 0..channels {
                let h = cell_hash(spec.seed, 0, 0, c as u64);
                let u = (h % width as u64) as usize;
                let v = ((h >> 32) % height as u64) as usize;
                data[(v * width + u) * channels + c] = 1.0;
            }
        }
    }
    Ok(FeatureMap2D::new(width, height, channels, stride, data)
        .expect("stub map is valid by construction"))
}

/// The three multi-scale output shapes `(nx', ny', nz', c2)` for strides 4,
/// 2, 1. Errors when the grid is not divisible by 4.
pub fn check_multiscale_shapes(
    spec: &VoxelGridSpec,
    c2: usize,
) -> Result<[[usize; 4]; 3], StubError> {
    if ![spec.nx, spec.ny, spec.nz]
        .iter()
        .all(|n| n.is_multiple_of(4))
    {
        return Err(StubError::IndivisibleGrid(spec.nx, spec.ny, spec.nz));
    }
    Ok([
        [spec.nx / 4, spec.ny / 4, spec.nz / 4, c2],
        [spec.nx / 2, spec.ny / 2, spec.nz / 2, c2],
        [spec.nx, spec.ny, spec.nz, c2],
    ])
}

impl From<StubError> for GridError {
    fn from(e: StubError) -> Self {
        GridError::Format(e.to_string())
    }
}
