//! Dense voxel volume construction from posed 2D feature maps.
//!
//! Each camera view contributes a per-view volume: every voxel center is
//! projected through the view's pinhole model onto its feature map, voxels
//! landing inside the map with positive depth copy the feature vector of the
//! nearest cell (`floor(u)`, `floor(v)`), everything else stays zero. A
//! binary mask records which voxels were hit. [`aggregate`] then averages the
//! per-view volumes across valid voxels and keeps the summed hit counts.
//!
//! Storage layout (fixed, also used by the binary container): voxels are
//! linearized with `ix` fastest, then `iy`, then `iz`; channel values of one
//! voxel are contiguous. Feature maps are row-major with `u` fastest, also
//! channel-minor.

use crate::geometry::{project_point, CameraExtrinsics, CameraIntrinsics};
use crate::math::Vec3;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, thiserror::Error)]
pub enum GridError {
    #[error("axis {axis} limits are not ordered: [{min}, {max}]")]
    BadRange { axis: char, min: f64, max: f64 },
    #[error("voxel size must be positive and finite, got {0}")]
    BadVoxelSize(f64),
    #[error("axis {axis} range {range} is not an integer multiple of voxel size {s}")]
    NotMultiple { axis: char, range: f64, s: f64 },
    #[error("voxel index ({0}, {1}, {2}) out of bounds for {3}x{4}x{5} grid")]
    IndexOutOfBounds(usize, usize, usize, usize, usize, usize),
    #[error("feature data length {got} does not match width*height*channels = {expected}")]
    FeatureDataLen { expected: usize, got: usize },
    #[error("feature stride must be >= 1")]
    BadStride,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("cannot aggregate an empty volume list")]
    EmptyAggregate,
    #[error("volumes disagree in grid spec or channel count")]
    SpecMismatch,
    #[error("aggregated mask count exceeds u32 range")]
    MaskOverflow,
    #[error("volume container: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Axis-aligned voxelization of a bounded region: `n * s` spans each axis
/// range exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoxelGridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub z_min: f64,
    pub z_max: f64,
    /// Voxel edge length in meters.
    pub s: f64,
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

/// Tolerance on `n * s - range` for an already-constructed spec.
const SPEC_TOL: f64 = 1e-9;

/// Integer counts for axis limits and voxel size; errors when a range is not
/// an integer multiple of `s` within `1e-6 * s`.
pub fn derive_counts(
    limits: [f64; 6],
    s: f64,
) -> Result<(usize, usize, usize), GridError> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(GridError::BadVoxelSize(s));
    }
    let mut counts = [0usize; 3];
    for (i, axis) in ['x', 'y', 'z'].into_iter().enumerate() {
        let (min, max) = (limits[2 * i], limits[2 * i + 1]);
        if !(min.is_finite() && max.is_finite() && min < max) {
            return Err(GridError::BadRange { axis, min, max });
        }
        let range = max - min;
        let n = (range / s).round();
        if n < 1.0 || (n * s - range).abs() > 1e-6 * s {
            return Err(GridError::NotMultiple { axis, range, s });
        }
        counts[i] = n as usize;
    }
    Ok((counts[0], counts[1], counts[2]))
}

impl VoxelGridSpec {
    pub fn new(limits: [f64; 6], s: f64) -> Result<Self, GridError> {
        let (nx, ny, nz) = derive_counts(limits, s)?;
        Ok(Self {
            x_min: limits[0],
            x_max: limits[1],
            y_min: limits[2],
            y_max: limits[3],
            z_min: limits[4],
            z_max: limits[5],
            s,
            nx,
            ny,
            nz,
        })
    }

    pub fn limits(&self) -> [f64; 6] {
        [
            self.x_min, self.x_max, self.y_min, self.y_max, self.z_min, self.z_max,
        ]
    }

    pub fn voxel_count(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    /// Checks the `n * s = range` constraint of an externally produced spec.
    pub fn validate(&self) -> Result<(), GridError> {
        let (nx, ny, nz) = derive_counts(self.limits(), self.s)?;
        if (nx, ny, nz) != (self.nx, self.ny, self.nz) {
            return Err(GridError::SpecMismatch);
        }
        for (i, axis) in ['x', 'y', 'z'].into_iter().enumerate() {
            let range = self.limits()[2 * i + 1] - self.limits()[2 * i];
            let n = [self.nx, self.ny, self.nz][i] as f64;
            if (n * self.s - range).abs() > SPEC_TOL {
                return Err(GridError::NotMultiple {
                    axis,
                    range,
                    s: self.s,
                });
            }
        }
        Ok(())
    }

    /// World coordinates of the center of voxel `(ix, iy, iz)`.
    pub fn voxel_center(&self, ix: usize, iy: usize, iz: usize) -> Result<Vec3, GridError> {
        if ix >= self.nx || iy >= self.ny || iz >= self.nz {
            return Err(GridError::IndexOutOfBounds(
                ix, iy, iz, self.nx, self.ny, self.nz,
            ));
        }
        Ok(self.center_unchecked(ix, iy, iz))
    }

    #[inline]
    fn center_unchecked(&self, ix: usize, iy: usize, iz: usize) -> Vec3 {
        [
            self.x_min + (ix as f64 + 0.5) * self.s,
            self.y_min + (iy as f64 + 0.5) * self.s,
            self.z_min + (iz as f64 + 0.5) * self.s,
        ]
    }

    /// Linear voxel index: `ix` fastest, then `iy`, then `iz`.
    #[inline]
    pub fn voxel_index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (iz * self.ny + iy) * self.nx + ix
    }
}

/// Dense row-major 2D feature map at `stride`-times-reduced resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap2D {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub stride: u32,
    /// `width * height * channels` values; cell `(u, v)` starts at
    /// `(v * width + u) * channels`.
    pub data: Vec<f32>,
}

impl FeatureMap2D {
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        stride: u32,
        data: Vec<f32>,
    ) -> Result<Self, GridError> {
        if stride < 1 {
            return Err(GridError::BadStride);
        }
        let expected = width * height * channels;
        if data.len() != expected {
            return Err(GridError::FeatureDataLen {
                expected,
                got: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(GridError::NonFinite("feature data"));
        }
        Ok(Self {
            width,
            height,
            channels,
            stride,
            data,
        })
    }

    pub fn validate(&self) -> Result<(), GridError> {
        Self::new(
            self.width,
            self.height,
            self.channels,
            self.stride,
            self.data.clone(),
        )
        .map(|_| ())
    }

    /// Channel slice of cell `(u, v)`.
    #[inline]
    pub fn at(&self, u: usize, v: usize) -> &[f32] {
        let start = (v * self.width + u) * self.channels;
        &self.data[start..start + self.channels]
    }
}

/// One posed input of a multi-view set.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraView {
    pub intrinsics: CameraIntrinsics,
    pub extrinsics: CameraExtrinsics,
    pub features: FeatureMap2D,
}

/// Dense voxel volume with per-voxel feature vectors and hit counts.
///
/// Invariant: wherever `mask` is zero the channel values are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelVolume {
    pub spec: VoxelGridSpec,
    pub channels: usize,
    /// `voxel_count * channels` values, voxel-major channel-minor.
    pub data: Vec<f32>,
    /// Per-voxel hit counts, voxel order.
    pub mask: Vec<u32>,
}

impl VoxelVolume {
    pub fn zeros(spec: VoxelGridSpec, channels: usize) -> Self {
        let n = spec.voxel_count();
        Self {
            spec,
            channels,
            data: vec![0.0; n * channels],
            mask: vec![0; n],
        }
    }

    /// Channel slice of one voxel.
    pub fn value(&self, ix: usize, iy: usize, iz: usize) -> &[f32] {
        let idx = self.spec.voxel_index(ix, iy, iz) * self.channels;
        &self.data[idx..idx + self.channels]
    }

    pub fn count(&self, ix: usize, iy: usize, iz: usize) -> u32 {
        self.mask[self.spec.voxel_index(ix, iy, iz)]
    }
}

/// Fills one x-row of a per-view volume: the `nx` voxels at `(iy, iz)`.
fn fill_row(
    view: &CameraView,
    spec: &VoxelGridSpec,
    iy: usize,
    iz: usize,
    mask_row: &mut [u32],
    data_row: &mut [f32],
) {
    let feats = &view.features;
    let channels = feats.channels;
    for ix in 0..spec.nx {
        let center = spec.center_unchecked(ix, iy, iz);
        let (u, v, depth) = project_point(
            &view.intrinsics,
            &view.extrinsics,
            center,
            feats.stride,
        );
        if depth <= 0.0 {
            continue;
        }
        let (cu, cv) = (u.floor(), v.floor());
        if cu < 0.0 || cv < 0.0 || cu >= feats.width as f64 || cv >= feats.height as f64 {
            continue;
        }
        mask_row[ix] = 1;
        let src = feats.at(cu as usize, cv as usize);
        data_row[ix * channels..(ix + 1) * channels].copy_from_slice(src);
    }
}

/// Projects one view into a fresh volume (binary mask). See the module docs
/// for the sampling rule.
pub fn project_view(view: &CameraView, spec: &VoxelGridSpec) -> Result<VoxelVolume, GridError> {
    #[cfg(feature = "parallel")]
    {
        project_view_par(view, spec)
    }
    #[cfg(not(feature = "parallel"))]
    {
        project_view_seq(view, spec)
    }
}

/// Sequential [`project_view`]; bitwise identical output.
pub fn project_view_seq(
    view: &CameraView,
    spec: &VoxelGridSpec,
) -> Result<VoxelVolume, GridError> {
    spec.validate()?;
    let mut out = VoxelVolume::zeros(*spec, view.features.channels);
    let nx = spec.nx;
    let channels = out.channels;
    for iz in 0..spec.nz {
        for iy in 0..spec.ny {
            let row = (iz * spec.ny + iy) * nx;
            fill_row(
                view,
                spec,
                iy,
                iz,
                &mut out.mask[row..row + nx],
                &mut out.data[row * channels..(row + nx) * channels],
            );
        }
    }
    Ok(out)
}

/// Rayon [`project_view`], parallel over x-rows; bitwise identical output.
#[cfg(feature = "parallel")]
pub fn project_view_par(
    view: &CameraView,
    spec: &VoxelGridSpec,
) -> Result<VoxelVolume, GridError> {
    spec.validate()?;
    let mut out = VoxelVolume::zeros(*spec, view.features.channels);
    let nx = spec.nx;
    let ny = spec.ny;
    let channels = out.channels;
    out.mask
        .par_chunks_mut(nx)
        .zip(out.data.par_chunks_mut(nx * channels))
        .enumerate()
        .for_each(|(row, (mask_row, data_row))| {
            fill_row(view, spec, row % ny, row / ny, mask_row, data_row);
        });
    Ok(out)
}

/// Averages per-view volumes: per voxel, `sum(mask_t * value_t) /
/// max(sum(mask_t), 1)`, with the output mask keeping the raw count sum.
///
/// Summation runs in a canonical content-derived order, so any permutation of
/// the input list produces bitwise identical output.
pub fn aggregate(volumes: &[VoxelVolume]) -> Result<VoxelVolume, GridError> {
    let order = aggregate_checks(volumes)?;
    let mut out = VoxelVolume::zeros(volumes[0].spec, volumes[0].channels);
    let nx = out.spec.nx;
    let channels = out.channels;

    #[cfg(feature = "parallel")]
    {
        out.mask
            .par_chunks_mut(nx)
            .zip(out.data.par_chunks_mut(nx * channels))
            .enumerate()
            .try_for_each(|(row, (mask_row, data_row))| {
                reduce_row(volumes, &order, row * nx, mask_row, data_row, channels)
            })?;
    }
    #[cfg(not(feature = "parallel"))]
    {
        let rows = out.spec.ny * out.spec.nz;
        for row in 0..rows {
            reduce_row(
                volumes,
                &order,
                row * nx,
                &mut out.mask[row * nx..(row + 1) * nx],
                &mut out.data[row * nx * channels..(row + 1) * nx * channels],
                channels,
            )?;
        }
    }
    Ok(out)
}

/// Sequential [`aggregate`]; bitwise identical output.
pub fn aggregate_seq(volumes: &[VoxelVolume]) -> Result<VoxelVolume, GridError> {
    let order = aggregate_checks(volumes)?;
    let mut out = VoxelVolume::zeros(volumes[0].spec, volumes[0].channels);
    let nx = out.spec.nx;
    let channels = out.channels;
    let rows = out.spec.ny * out.spec.nz;
    for row in 0..rows {
        reduce_row(
            volumes,
            &order,
            row * nx,
            &mut out.mask[row * nx..(row + 1) * nx],
            &mut out.data[row * nx * channels..(row + 1) * nx * channels],
            channels,
        )?;
    }
    Ok(out)
}

fn aggregate_checks(volumes: &[VoxelVolume]) -> Result<Vec<usize>, GridError> {
    let first = volumes.first().ok_or(GridError::EmptyAggregate)?;
    for v in volumes {
        if v.spec != first.spec || v.channels != first.channels {
            return Err(GridError::SpecMismatch);
        }
    }
    Ok(canonical_order(volumes))
}

fn reduce_row(
    volumes: &[VoxelVolume],
    order: &[usize],
    base: usize,
    mask_row: &mut [u32],
    data_row: &mut [f32],
    channels: usize,
) -> Result<(), GridError> {
    for flat in 0..mask_row.len() {
        let voxel = base + flat;
        let mut count: u64 = 0;
        for &vi in order {
            count += u64::from(volumes[vi].mask[voxel]);
        }
        mask_row[flat] = u32::try_from(count).map_err(|_| GridError::MaskOverflow)?;
        if count == 0 {
            continue;
        }
        let denom = count as f64;
        for c in 0..channels {
            let mut sum = 0.0f64;
            for &vi in order {
                let weight = volumes[vi].mask[voxel];
                if weight > 0 {
                    sum += f64::from(weight) * f64::from(volumes[vi].data[voxel * channels + c]);
                }
            }
            data_row[flat * channels + c] = (sum / denom) as f32;
        }
    }
    Ok(())
}

/// Indices of `volumes` sorted by a content-derived key (hash, then full
/// lexicographic comparison on collisions). Bit-identical volumes compare
/// equal, which is harmless: their contributions commute exactly.
fn canonical_order(volumes: &[VoxelVolume]) -> Vec<usize> {
    let hashes: Vec<u64> = volumes.iter().map(content_hash).collect();
    let mut order: Vec<usize> = (0..volumes.len()).collect();
    order.sort_by(|&a, &b| {
        hashes[a].cmp(&hashes[b]).then_with(|| {
            volumes[a].mask.cmp(&volumes[b].mask).then_with(|| {
                volumes[a]
                    .data
                    .iter()
                    .map(|v| v.to_bits())
                    .cmp(volumes[b].data.iter().map(|v| v.to_bits()))
            })
        })
    });
    order
}

fn content_hash(v: &VoxelVolume) -> u64 {
    // FNV-1a over mask counts and data bits.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |word: u32| {
        for byte in word.to_le_bytes() {
            h ^= u64::from(byte);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    for &m in &v.mask {
        eat(m);
    }
    for &d in &v.data {
        eat(d.to_bits());
    }
    h
}

// ---------------------------------------------------------------------------
// Binary container
// ---------------------------------------------------------------------------

/// Magic bytes of the volume container.
pub const VOLUME_MAGIC: [u8; 4] = *b"VVOL";
/// Container format version.
pub const VOLUME_VERSION: u32 = 1;

impl VoxelVolume {
    /// Writes the flat little-endian container: magic, version, `nx ny nz
    /// channels` (u32), six axis limits and `s` (f64), mask counts (u32,
    /// voxel order), then data (f32, voxel-major channel-minor).
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), GridError> {
        w.write_all(&VOLUME_MAGIC)?;
        w.write_all(&VOLUME_VERSION.to_le_bytes())?;
        for n in [self.spec.nx, self.spec.ny, self.spec.nz, self.channels] {
            let n = u32::try_from(n).map_err(|_| GridError::MaskOverflow)?;
            w.write_all(&n.to_le_bytes())?;
        }
        for lim in self.spec.limits() {
            w.write_all(&lim.to_le_bytes())?;
        }
        w.write_all(&self.spec.s.to_le_bytes())?;
        for &m in &self.mask {
            w.write_all(&m.to_le_bytes())?;
        }
        for &d in &self.data {
            w.write_all(&d.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads and validates a container written by [`VoxelVolume::write_to`].
    pub fn read_from<R: Read>(mut r: R) -> Result<Self, GridError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if magic != VOLUME_MAGIC {
            return Err(GridError::Format(format!("bad magic {magic:02x?}")));
        }
        let version = read_u32(&mut r)?;
        if version != VOLUME_VERSION {
            return Err(GridError::Format(format!("unsupported version {version}")));
        }
        let nx = read_u32(&mut r)? as usize;
        let ny = read_u32(&mut r)? as usize;
        let nz = read_u32(&mut r)? as usize;
        let channels = read_u32(&mut r)? as usize;
        let mut limits = [0.0; 6];
        for lim in &mut limits {
            *lim = read_f64(&mut r)?;
        }
        let s = read_f64(&mut r)?;
        let spec = VoxelGridSpec {
            x_min: limits[0],
            x_max: limits[1],
            y_min: limits[2],
            y_max: limits[3],
            z_min: limits[4],
            z_max: limits[5],
            s,
            nx,
            ny,
            nz,
        };
        spec.validate()
            .map_err(|e| GridError::Format(format!("invalid grid spec: {e}")))?;
        let n = spec.voxel_count();
        let mut mask = vec![0u32; n];
        for m in &mut mask {
            *m = read_u32(&mut r)?;
        }
        let mut data = vec![0f32; n * channels];
        for d in &mut data {
            *d = read_f32(&mut r)?;
        }
        for (voxel, &m) in mask.iter().enumerate() {
            let values = &data[voxel * channels..(voxel + 1) * channels];
            if values.iter().any(|v| !v.is_finite()) {
                return Err(GridError::Format("non-finite voxel value".into()));
            }
            if m == 0 && values.iter().any(|&v| v != 0.0) {
                return Err(GridError::Format(
                    "nonzero values in a zero-count voxel".into(),
                ));
            }
        }
        Ok(Self {
            spec,
            channels,
            data,
            mask,
        })
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, GridError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_f32<R: Read>(r: &mut R) -> Result<f32, GridError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(f32::from_le_bytes(buf))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64, GridError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}
