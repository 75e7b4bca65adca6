//! Box regression codecs and target assignment for both detection heads.
//!
//! The BEV anchor head regresses a 7-tuple of normalized deltas against prior
//! boxes placed on every BEV cell; translation terms are normalized by the
//! anchor's BEV diagonal, extents are log ratios, and the angle is the sine
//! of the residual with a separate direction bit resolving the half circle.
//!
//! The anchor-free head regresses, per 3D location, the six distances to the
//! target box faces (measured in the box's yaw-aligned frame) plus the yaw
//! itself, with a centerness score in [0, 1] that is 1 at the center and 0 on
//! any face. Positive locations come from center sampling: the 3x3x3 block of
//! same-level cells around the cell containing the object center, kept only
//! where the location lies inside the box.

use crate::geometry::{iou_bev, Box3D, GeometryError};
use crate::math::wrap_angle;
use crate::voxel::VoxelGridSpec;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CodecError {
    #[error("grid {0}x{1}x{2} is not divisible by 4")]
    IndivisibleGrid(usize, usize, usize),
    #[error("iou thresholds must satisfy 0 <= neg <= pos <= 1, got pos={pos}, neg={neg}")]
    BadThresholds { pos: f64, neg: f64 },
    #[error("delta theta must lie in [-1, 1], got {0}")]
    DThetaOutOfRange(f64),
    #[error("non-finite regression delta")]
    NonFinite,
    #[error("implied extent on axis {axis} is not positive: {extent}")]
    NonPositiveExtent { axis: char, extent: f64 },
    #[error("centerness offsets must be non-negative, got {0}")]
    NegativeOffset(f64),
    #[error("level {0} out of range 0..=2")]
    BadLevel(usize),
    #[error("class list length {classes} does not match ground-truth count {gts}")]
    ClassCount { classes: usize, gts: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// A prior box fixed to a BEV cell. All anchors of one set share `z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub w: f64,
    pub l: f64,
    pub h: f64,
    pub theta: f64,
}

impl Anchor {
    pub fn as_box(&self) -> Box3D {
        Box3D {
            x: self.x,
            y: self.y,
            z: self.z,
            w: self.w,
            h: self.h,
            l: self.l,
            theta: wrap_angle(self.theta),
        }
    }

    /// BEV diagonal, the translation normalizer of the 7-tuple encoding.
    pub fn diagonal(&self) -> f64 {
        (self.w * self.w + self.l * self.l).sqrt()
    }
}

/// Prior extents and the shared anchor height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnchorPrior {
    pub w: f64,
    pub l: f64,
    pub h: f64,
    pub z: f64,
}

/// Dimensionless 7-tuple regression target against an anchor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxDelta7 {
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
    pub dw: f64,
    pub dl: f64,
    pub dh: f64,
    pub dtheta: f64,
}

/// One 3D location of the multi-scale anchor-free head.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FcosLocation {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    /// Scale index: 0 is the coarsest (stride 4), 2 the finest (stride 1).
    pub level: usize,
}

/// Six face distances (in the box's yaw-aligned frame, non-negative for
/// locations inside the box), yaw, and centerness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FcosTarget {
    pub dx_min: f64,
    pub dx_max: f64,
    pub dy_min: f64,
    pub dy_max: f64,
    pub dz_min: f64,
    pub dz_max: f64,
    pub theta: f64,
    pub centerness: f64,
    pub class_id: u32,
    pub is_positive: bool,
}

impl FcosTarget {
    fn negative() -> Self {
        Self {
            dx_min: 0.0,
            dx_max: 0.0,
            dy_min: 0.0,
            dy_max: 0.0,
            dz_min: 0.0,
            dz_max: 0.0,
            theta: 0.0,
            centerness: 0.0,
            class_id: 0,
            is_positive: false,
        }
    }

    pub fn offsets(&self) -> [f64; 6] {
        [
            self.dx_min, self.dx_max, self.dy_min, self.dy_max, self.dz_min, self.dz_max,
        ]
    }
}

/// Per-anchor assignment outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnchorAssignment {
    /// Matched to the ground-truth box with this index.
    Positive(usize),
    Negative,
    Ignored,
}

/// One anchor per BEV cell center per rotation; `z` and extents come from the
/// prior. Order: cell-major (`ix` fastest, then `iy`), rotation-minor.
pub fn generate_anchors(
    spec: &VoxelGridSpec,
    prior: AnchorPrior,
    rotations: &[f64],
) -> Vec<Anchor> {
    let mut anchors = Vec::with_capacity(spec.nx * spec.ny * rotations.len());
    for iy in 0..spec.ny {
        for ix in 0..spec.nx {
            let x = spec.x_min + (ix as f64 + 0.5) * spec.s;
            let y = spec.y_min + (iy as f64 + 0.5) * spec.s;
            for &theta in rotations {
                anchors.push(Anchor {
                    x,
                    y,
                    z: prior.z,
                    w: prior.w,
                    l: prior.l,
                    h: prior.h,
                    theta,
                });
            }
        }
    }
    anchors
}

/// Seven-tuple encoding of a ground-truth box against an anchor.
pub fn encode_outdoor(gt: &Box3D, anchor: &Anchor) -> BoxDelta7 {
    let d = anchor.diagonal();
    BoxDelta7 {
        dx: (gt.x - anchor.x) / d,
        dy: (gt.y - anchor.y) / d,
        dz: (gt.z - anchor.z) / d,
        dw: (gt.w / anchor.w).ln(),
        dl: (gt.l / anchor.l).ln(),
        dh: (gt.h / anchor.h).ln(),
        dtheta: (gt.theta - anchor.theta).sin(),
    }
}

/// Direction bit for the angle residual: true iff the residual wrapped to
/// (-pi, pi] falls in [0, pi).
pub fn direction_target(gt_theta: f64, anchor_theta: f64) -> bool {
    let r = wrap_angle(gt_theta - anchor_theta);
    (0.0..PI).contains(&r)
}

/// Inverts [`encode_outdoor`]. The arcsine recovers the residual only up to
/// the half circle; `dir_positive` selects [0, pi) versus [-pi, 0).
pub fn decode_outdoor(
    delta: &BoxDelta7,
    anchor: &Anchor,
    dir_positive: bool,
) -> Result<Box3D, CodecError> {
    let fields = [
        delta.dx, delta.dy, delta.dz, delta.dw, delta.dl, delta.dh, delta.dtheta,
    ];
    if fields.iter().any(|v| !v.is_finite()) {
        return Err(CodecError::NonFinite);
    }
    if !(-1.0..=1.0).contains(&delta.dtheta) {
        return Err(CodecError::DThetaOutOfRange(delta.dtheta));
    }
    let d = anchor.diagonal();
    let principal = delta.dtheta.asin();
    let residual = if dir_positive {
        if principal >= 0.0 {
            principal
        } else {
            principal + PI
        }
    } else if principal < 0.0 {
        principal
    } else {
        principal - PI
    };
    Ok(Box3D::new(
        anchor.x + delta.dx * d,
        anchor.y + delta.dy * d,
        anchor.z + delta.dz * d,
        anchor.w * delta.dw.exp(),
        anchor.h * delta.dh.exp(),
        anchor.l * delta.dl.exp(),
        anchor.theta + residual,
    )?)
}

/// Chunk result: assignments plus the per-gt best `(iou, anchor index)`.
type AssignChunk = (Vec<AnchorAssignment>, Vec<(f64, usize)>);

/// Per-chunk scan used by both assignment paths.
fn assign_chunk(
    anchors: &[Anchor],
    base: usize,
    gts: &[Box3D],
    pos_iou: f64,
    neg_iou: f64,
) -> AssignChunk {
    let mut assignments = Vec::with_capacity(anchors.len());
    let mut best_per_gt = vec![(0.0f64, usize::MAX); gts.len()];
    for (offset, anchor) in anchors.iter().enumerate() {
        let anchor_box = anchor.as_box();
        let mut best = 0.0f64;
        let mut best_gt = usize::MAX;
        for (j, gt) in gts.iter().enumerate() {
            let iou = iou_bev(&anchor_box, gt);
            if iou > best {
                best = iou;
                best_gt = j;
            }
            let slot = &mut best_per_gt[j];
            if iou > slot.0 || (iou == slot.0 && base + offset < slot.1) {
                *slot = (iou, base + offset);
            }
        }
        assignments.push(if best >= pos_iou && best_gt != usize::MAX {
            AnchorAssignment::Positive(best_gt)
        } else if best < neg_iou {
            AnchorAssignment::Negative
        } else {
            AnchorAssignment::Ignored
        });
    }
    (assignments, best_per_gt)
}

/// Assigns every anchor to positive (argmax ground truth), negative, or
/// ignored by rotated BEV IoU thresholds; afterwards the best anchor of each
/// ground truth with nonzero IoU is forced positive (ascending gt order, ties
/// by lowest anchor index).
pub fn assign_anchors(
    anchors: &[Anchor],
    gts: &[Box3D],
    pos_iou: f64,
    neg_iou: f64,
) -> Result<Vec<AnchorAssignment>, CodecError> {
    if !(0.0 <= neg_iou && neg_iou <= pos_iou && pos_iou <= 1.0) {
        return Err(CodecError::BadThresholds {
            pos: pos_iou,
            neg: neg_iou,
        });
    }
    if gts.is_empty() {
        return Ok(vec![AnchorAssignment::Negative; anchors.len()]);
    }

    const CHUNK: usize = 2048;
    #[cfg(feature = "parallel")]
    let chunks: Vec<AssignChunk> = anchors
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(ci, chunk)| assign_chunk(chunk, ci * CHUNK, gts, pos_iou, neg_iou))
        .collect();
    #[cfg(not(feature = "parallel"))]
    let chunks: Vec<AssignChunk> = anchors
        .chunks(CHUNK)
        .enumerate()
        .map(|(ci, chunk)| assign_chunk(chunk, ci * CHUNK, gts, pos_iou, neg_iou))
        .collect();

    let mut assignments = Vec::with_capacity(anchors.len());
    let mut best_per_gt = vec![(0.0f64, usize::MAX); gts.len()];
    for (chunk_assign, chunk_best) in chunks {
        assignments.extend(chunk_assign);
        for (slot, cand) in best_per_gt.iter_mut().zip(chunk_best) {
            if cand.0 > slot.0 || (cand.0 == slot.0 && cand.1 < slot.1) {
                *slot = cand;
            }
        }
    }
    for (j, &(iou, anchor_idx)) in best_per_gt.iter().enumerate() {
        if iou > 0.0 && anchor_idx != usize::MAX {
            assignments[anchor_idx] = AnchorAssignment::Positive(j);
        }
    }
    Ok(assignments)
}

/// Strides of the three scale levels, coarsest first.
pub const LEVEL_STRIDES: [usize; 3] = [4, 2, 1];

/// Per-axis cell counts of one level.
fn level_dims(spec: &VoxelGridSpec, level: usize) -> (usize, usize, usize) {
    let stride = LEVEL_STRIDES[level];
    (spec.nx / stride, spec.ny / stride, spec.nz / stride)
}

/// Edge length of one level's cells.
pub fn level_cell_edge(spec: &VoxelGridSpec, level: usize) -> f64 {
    LEVEL_STRIDES[level] as f64 * spec.s
}

fn check_divisible(spec: &VoxelGridSpec) -> Result<(), CodecError> {
    if ![spec.nx, spec.ny, spec.nz]
        .iter()
        .all(|n| n.is_multiple_of(4))
    {
        return Err(CodecError::IndivisibleGrid(spec.nx, spec.ny, spec.nz));
    }
    Ok(())
}

fn location_at(spec: &VoxelGridSpec, level: usize, ix: usize, iy: usize, iz: usize) -> FcosLocation {
    let edge = level_cell_edge(spec, level);
    FcosLocation {
        x: spec.x_min + (ix as f64 + 0.5) * edge,
        y: spec.y_min + (iy as f64 + 0.5) * edge,
        z: spec.z_min + (iz as f64 + 0.5) * edge,
        level,
    }
}

/// All multi-scale locations: level 0 (stride 4) first, then level 1
/// (stride 2), then level 2 (stride 1); within a level `ix` varies fastest,
/// then `iy`, then `iz`.
pub fn fcos_locations(spec: &VoxelGridSpec) -> Result<Vec<FcosLocation>, CodecError> {
    check_divisible(spec)?;
    let total: usize = (0..3)
        .map(|lvl| {
            let (nx, ny, nz) = level_dims(spec, lvl);
            nx * ny * nz
        })
        .sum();
    let mut out = Vec::with_capacity(total);
    for level in 0..3 {
        let (nx, ny, nz) = level_dims(spec, level);
        for iz in 0..nz {
            for iy in 0..ny {
                for ix in 0..nx {
                    out.push(location_at(spec, level, ix, iy, iz));
                }
            }
        }
    }
    Ok(out)
}

/// Cell triples of the center-sampling block: the 3x3x3 neighborhood of the
/// level cell containing the ground-truth center (clamped to the grid),
/// filtered to cells whose centers lie inside the box.
fn center_sampling_cells(
    gt: &Box3D,
    spec: &VoxelGridSpec,
    level: usize,
) -> Vec<(usize, usize, usize)> {
    let edge = level_cell_edge(spec, level);
    let (nx, ny, nz) = level_dims(spec, level);
    let anchor_cell = |coord: f64, min: f64, n: usize| -> i64 {
        let raw = ((coord - min) / edge).floor() as i64;
        raw.clamp(0, n as i64 - 1)
    };
    let cx = anchor_cell(gt.x, spec.x_min, nx);
    let cy = anchor_cell(gt.y, spec.y_min, ny);
    let cz = anchor_cell(gt.z, spec.z_min, nz);
    let mut cells = Vec::with_capacity(27);
    for dz in -1..=1i64 {
        for dy in -1..=1i64 {
            for dx in -1..=1i64 {
                let (ix, iy, iz) = (cx + dx, cy + dy, cz + dz);
                if ix < 0 || iy < 0 || iz < 0 {
                    continue;
                }
                let (ix, iy, iz) = (ix as usize, iy as usize, iz as usize);
                if ix >= nx || iy >= ny || iz >= nz {
                    continue;
                }
                let loc = location_at(spec, level, ix, iy, iz);
                if gt.contains([loc.x, loc.y, loc.z]) {
                    cells.push((ix, iy, iz));
                }
            }
        }
    }
    cells
}

/// Candidate positive locations (at most 27) for one ground truth at one
/// level. See [`center_sampling_cells`] for the rule.
pub fn center_sampling(
    gt: &Box3D,
    spec: &VoxelGridSpec,
    level: usize,
) -> Result<Vec<FcosLocation>, CodecError> {
    if level > 2 {
        return Err(CodecError::BadLevel(level));
    }
    check_divisible(spec)?;
    Ok(center_sampling_cells(gt, spec, level)
        .into_iter()
        .map(|(ix, iy, iz)| location_at(spec, level, ix, iy, iz))
        .collect())
}

/// Six face distances in the box's yaw-aligned frame plus yaw and centerness.
/// `is_positive` reflects membership of the location in the box; `class_id`
/// is left 0 (assignment fills it in).
pub fn encode_fcos(gt: &Box3D, loc: &FcosLocation) -> FcosTarget {
    let p = gt.to_local([loc.x, loc.y, loc.z]);
    let offsets = [
        p[0] + gt.l * 0.5,
        gt.l * 0.5 - p[0],
        p[1] + gt.w * 0.5,
        gt.w * 0.5 - p[1],
        p[2] + gt.h * 0.5,
        gt.h * 0.5 - p[2],
    ];
    let inside = offsets.iter().all(|&o| o >= 0.0);
    FcosTarget {
        dx_min: offsets[0],
        dx_max: offsets[1],
        dy_min: offsets[2],
        dy_max: offsets[3],
        dz_min: offsets[4],
        dz_max: offsets[5],
        theta: gt.theta,
        centerness: if inside {
            centerness3d(offsets).expect("offsets are non-negative")
        } else {
            0.0
        },
        class_id: 0,
        is_positive: inside,
    }
}

/// Geometric-mean centerness extended to three axes:
/// `sqrt(prod_axis min(near, far) / max(near, far))`. Exactly 1 at the
/// center, 0 on any face.
pub fn centerness3d(offsets: [f64; 6]) -> Result<f64, CodecError> {
    if let Some(&neg) = offsets.iter().find(|&&o| o < 0.0) {
        return Err(CodecError::NegativeOffset(neg));
    }
    let mut product = 1.0;
    for axis in 0..3 {
        let near = offsets[2 * axis];
        let far = offsets[2 * axis + 1];
        let hi = near.max(far);
        if hi == 0.0 {
            return Ok(0.0);
        }
        product *= near.min(far) / hi;
    }
    Ok(product.sqrt().clamp(0.0, 1.0))
}

/// Reconstructs the box from six face distances, the location, and yaw.
pub fn decode_fcos(pred: &FcosTarget, loc: &FcosLocation) -> Result<Box3D, CodecError> {
    let offsets = pred.offsets();
    if offsets.iter().any(|v| !v.is_finite()) || !pred.theta.is_finite() {
        return Err(CodecError::NonFinite);
    }
    let mut extents = [0.0; 3];
    for (axis, ext) in extents.iter_mut().enumerate() {
        *ext = offsets[2 * axis] + offsets[2 * axis + 1];
        if *ext <= 0.0 {
            return Err(CodecError::NonPositiveExtent {
                axis: ['x', 'y', 'z'][axis],
                extent: *ext,
            });
        }
    }
    // Center offset from the location, in the box frame.
    let local = [
        (pred.dx_max - pred.dx_min) * 0.5,
        (pred.dy_max - pred.dy_min) * 0.5,
        (pred.dz_max - pred.dz_min) * 0.5,
    ];
    let (s, c) = pred.theta.sin_cos();
    Ok(Box3D::new(
        loc.x + c * local[0] - s * local[1],
        loc.y + s * local[0] + c * local[1],
        loc.z + local[2],
        extents[1],
        extents[2],
        extents[0],
        pred.theta,
    )?)
}

/// Routes a ground truth to the coarsest level whose cell edge does not
/// exceed half the smallest box extent, clamped to the finest level.
pub fn route_level(gt: &Box3D, spec: &VoxelGridSpec) -> usize {
    let half_min_extent = gt.w.min(gt.l).min(gt.h) * 0.5;
    for level in 0..2 {
        if level_cell_edge(spec, level) <= half_min_extent {
            return level;
        }
    }
    2
}

/// Assigns every multi-scale location a target: positive iff it is a
/// center-sampling candidate of some ground truth at its level, conflicts
/// resolved by the smallest box volume (ties by lowest gt index). Output is
/// aligned with [`fcos_locations`] order.
pub fn assign_fcos(
    gts: &[Box3D],
    class_ids: &[u32],
    spec: &VoxelGridSpec,
) -> Result<Vec<FcosTarget>, CodecError> {
    if class_ids.len() != gts.len() {
        return Err(CodecError::ClassCount {
            classes: class_ids.len(),
            gts: gts.len(),
        });
    }
    let locations = fcos_locations(spec)?;
    let mut level_offsets = [0usize; 3];
    let mut acc = 0;
    for (level, offset) in level_offsets.iter_mut().enumerate() {
        *offset = acc;
        let (nx, ny, nz) = level_dims(spec, level);
        acc += nx * ny * nz;
    }

    let mut assigned: Vec<Option<usize>> = vec![None; locations.len()];
    for (j, gt) in gts.iter().enumerate() {
        let level = route_level(gt, spec);
        let (nx, ny, _) = level_dims(spec, level);
        for (ix, iy, iz) in center_sampling_cells(gt, spec, level) {
            let idx = level_offsets[level] + (iz * ny + iy) * nx + ix;
            match assigned[idx] {
                None => assigned[idx] = Some(j),
                Some(k) => {
                    if gt.volume() < gts[k].volume() {
                        assigned[idx] = Some(j);
                    }
                }
            }
        }
    }

    let mut targets = Vec::with_capacity(locations.len());
    for (idx, loc) in locations.iter().enumerate() {
        match assigned[idx] {
            Some(j) => {
                let mut t = encode_fcos(&gts[j], loc);
                t.class_id = class_ids[j];
                t.is_positive = true;
                targets.push(t);
            }
            None => targets.push(FcosTarget::negative()),
        }
    }
    Ok(targets)
}
