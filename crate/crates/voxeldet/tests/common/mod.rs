//! Shared test oracles: independent brute-force reimplementations that the
//! library outputs are checked against. Everything here deliberately avoids
//! the library code paths it verifies.
#![allow(dead_code)]

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;
use voxeldet::eval::{DetLabel, GroundTruthObject};
use voxeldet::geometry::{iou_bev, Box3D, Polygon2D};
use voxeldet::nms::Detection;
use voxeldet::voxel::{CameraView, VoxelGridSpec, VoxelVolume};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_box(rng: &mut ChaCha8Rng, center_span: f64, max_extent: f64) -> Box3D {
    Box3D::new(
        rng.gen_range(-center_span..center_span),
        rng.gen_range(-center_span..center_span),
        rng.gen_range(-center_span * 0.4..center_span * 0.4),
        rng.gen_range(0.3..max_extent),
        rng.gen_range(0.3..max_extent),
        rng.gen_range(0.3..max_extent),
        rng.gen_range(-PI..PI),
    )
    .unwrap()
}

// ---------------------------------------------------------------------------
// Monte-Carlo geometry oracles
// ---------------------------------------------------------------------------

/// Independent membership test: rotate into the box frame by hand.
pub fn point_in_box(b: &Box3D, p: [f64; 3]) -> bool {
    let dx = p[0] - b.x;
    let dy = p[1] - b.y;
    let dz = p[2] - b.z;
    let (s, c) = b.theta.sin_cos();
    let lx = c * dx + s * dy;
    let ly = -s * dx + c * dy;
    lx.abs() <= b.l * 0.5 && ly.abs() <= b.w * 0.5 && dz.abs() <= b.h * 0.5
}

/// Circumscribed axis-aligned bound of a rotated box footprint plus height.
fn box_aabb(b: &Box3D) -> ([f64; 3], [f64; 3]) {
    let (s, c) = (b.theta.sin().abs(), b.theta.cos().abs());
    let hx = (b.l * c + b.w * s) * 0.5;
    let hy = (b.l * s + b.w * c) * 0.5;
    let hz = b.h * 0.5;
    ([b.x - hx, b.y - hy, b.z - hz], [b.x + hx, b.y + hy, b.z + hz])
}

/// Monte-Carlo IoU of two boxes: uniform samples over the union bound,
/// counting membership ratios.
pub fn mc_iou3d(a: &Box3D, b: &Box3D, samples: usize, seed: u64) -> f64 {
    let (alo, ahi) = box_aabb(a);
    let (blo, bhi) = box_aabb(b);
    let lo = [alo[0].min(blo[0]), alo[1].min(blo[1]), alo[2].min(blo[2])];
    let hi = [ahi[0].max(bhi[0]), ahi[1].max(bhi[1]), ahi[2].max(bhi[2])];
    let mut rng = rng(seed);
    let mut in_union = 0u64;
    let mut in_both = 0u64;
    for _ in 0..samples {
        let p = [
            rng.gen_range(lo[0]..hi[0]),
            rng.gen_range(lo[1]..hi[1]),
            rng.gen_range(lo[2]..hi[2]),
        ];
        let ia = point_in_box(a, p);
        let ib = point_in_box(b, p);
        if ia || ib {
            in_union += 1;
        }
        if ia && ib {
            in_both += 1;
        }
    }
    if in_union == 0 {
        0.0
    } else {
        in_both as f64 / in_union as f64
    }
}

/// Monte-Carlo BEV IoU, same scheme restricted to footprints.
pub fn mc_iou_bev(a: &Box3D, b: &Box3D, samples: usize, seed: u64) -> f64 {
    let flat = |b: &Box3D| Box3D { z: 0.0, h: 1.0, ..*b };
    mc_iou3d(&flat(a), &flat(b), samples, seed)
}

/// Point-in-convex-polygon by half-plane tests on the raw vertex list.
pub fn point_in_polygon(poly: &Polygon2D, p: [f64; 2]) -> bool {
    let verts = poly.vertices();
    let n = verts.len();
    for i in 0..n {
        let a = verts[i];
        let b = verts[(i + 1) % n];
        if (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) < 0.0 {
            return false;
        }
    }
    true
}

/// Monte-Carlo area of a polygon intersection, sampled over the overlap of
/// the two vertex bounding boxes.
pub fn mc_intersection_area(a: &Polygon2D, b: &Polygon2D, samples: usize, seed: u64) -> f64 {
    let bounds = |poly: &Polygon2D| {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for v in poly.vertices() {
            for k in 0..2 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        (lo, hi)
    };
    let (alo, ahi) = bounds(a);
    let (blo, bhi) = bounds(b);
    let lo = [alo[0].max(blo[0]), alo[1].max(blo[1])];
    let hi = [ahi[0].min(bhi[0]), ahi[1].min(bhi[1])];
    if lo[0] >= hi[0] || lo[1] >= hi[1] {
        return 0.0;
    }
    let window = (hi[0] - lo[0]) * (hi[1] - lo[1]);
    let mut rng = rng(seed);
    let mut hits = 0u64;
    for _ in 0..samples {
        let p = [rng.gen_range(lo[0]..hi[0]), rng.gen_range(lo[1]..hi[1])];
        if point_in_polygon(a, p) && point_in_polygon(b, p) {
            hits += 1;
        }
    }
    hits as f64 / samples as f64 * window
}

// ---------------------------------------------------------------------------
// Suppression and matching references
// ---------------------------------------------------------------------------

/// Literal O(n^2) greedy suppression: pop the best remaining detection, drop
/// overlapping same-class detections, repeat.
pub fn nms_reference(dets: &[Detection], threshold: f64) -> Vec<usize> {
    let mut remaining: Vec<usize> = (0..dets.len()).collect();
    let mut kept = Vec::new();
    while !remaining.is_empty() {
        let mut best = remaining[0];
        for &i in &remaining {
            if dets[i].score > dets[best].score {
                best = i;
            }
        }
        kept.push(best);
        remaining.retain(|&i| {
            i != best
                && !(dets[i].class_id == dets[best].class_id
                    && iou_bev(&dets[best].bbox, &dets[i].bbox) >= threshold)
        });
    }
    kept
}

/// Exhaustive transcription of the greedy matcher: descending score, best
/// unmatched non-ignored gt by affinity, ignored gts absorb.
pub fn match_reference<F>(
    dets: &[Detection],
    gts: &[GroundTruthObject],
    threshold: f64,
    affinity: F,
) -> Vec<DetLabel>
where
    F: Fn(&Box3D, &Box3D) -> f64,
{
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    let mut labels = vec![DetLabel::Fp; dets.len()];
    let mut taken = vec![false; gts.len()];
    for &i in &order {
        let mut best: Option<(f64, usize)> = None;
        for (j, gt) in gts.iter().enumerate() {
            if gt.ignore || taken[j] {
                continue;
            }
            let a = affinity(&dets[i].bbox, &gt.bbox);
            if best.is_none_or(|(ba, _)| a > ba) {
                best = Some((a, j));
            }
        }
        if let Some((a, j)) = best {
            if a >= threshold {
                labels[i] = DetLabel::Tp(j);
                taken[j] = true;
                continue;
            }
        }
        if gts
            .iter()
            .any(|gt| gt.ignore && affinity(&dets[i].bbox, &gt.bbox) >= threshold)
        {
            labels[i] = DetLabel::Ignored;
        }
    }
    labels
}

// ---------------------------------------------------------------------------
// Voxel-volume references
// ---------------------------------------------------------------------------

/// Per-voxel brute-force frustum recomputation, transcribing the projection
/// arithmetic directly instead of going through the library volume code.
pub fn brute_force_mask(view: &CameraView, spec: &VoxelGridSpec) -> Vec<u32> {
    let mut mask = vec![0u32; spec.voxel_count()];
    let r = &view.extrinsics.rotation;
    let t = view.extrinsics.translation;
    let k = &view.intrinsics;
    let f = &view.features;
    let stride = f.stride as f64;
    for iz in 0..spec.nz {
        for iy in 0..spec.ny {
            for ix in 0..spec.nx {
                let p = [
                    spec.x_min + (ix as f64 + 0.5) * spec.s,
                    spec.y_min + (iy as f64 + 0.5) * spec.s,
                    spec.z_min + (iz as f64 + 0.5) * spec.s,
                ];
                let qx = r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2] + t[0];
                let qy = r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2] + t[1];
                let qz = r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2] + t[2];
                if qz <= 0.0 {
                    continue;
                }
                let u = (k.fx * qx / qz + k.cx) / stride;
                let v = (k.fy * qy / qz + k.cy) / stride;
                let (cu, cv) = (u.floor(), v.floor());
                if cu >= 0.0 && cv >= 0.0 && cu < f.width as f64 && cv < f.height as f64 {
                    mask[(iz * spec.ny + iy) * spec.nx + ix] = 1;
                }
            }
        }
    }
    mask
}

/// Scalar averaging reference in plain input order.
pub fn aggregate_reference(volumes: &[VoxelVolume]) -> (Vec<u32>, Vec<f32>) {
    let spec = volumes[0].spec;
    let channels = volumes[0].channels;
    let n = spec.voxel_count();
    let mut mask = vec![0u32; n];
    let mut data = vec![0.0f32; n * channels];
    for voxel in 0..n {
        let count: u64 = volumes.iter().map(|v| u64::from(v.mask[voxel])).sum();
        mask[voxel] = count as u32;
        if count == 0 {
            continue;
        }
        for c in 0..channels {
            let mut sum = 0.0f64;
            for v in volumes {
                if v.mask[voxel] > 0 {
                    sum += f64::from(v.mask[voxel]) * f64::from(v.data[voxel * channels + c]);
                }
            }
            data[voxel * channels + c] = (sum / count as f64) as f32;
        }
    }
    (mask, data)
}

// ---------------------------------------------------------------------------
// Hand-integrated precision/recall staircases
// ---------------------------------------------------------------------------

/// `(scored detections, n_gt, AP all-points, AP interp40)`, each integrated
/// by hand from the staircase.
pub type PrCase = (Vec<(f64, bool)>, usize, f64, f64);

pub fn pr_cases() -> Vec<PrCase> {
    vec![
        // Single perfect detection.
        (vec![(0.9, true)], 1, 1.0, 1.0),
        // TP, FP, TP over two gts: envelope 1 up to r=0.5, then 2/3.
        (
            vec![(0.9, true), (0.8, false), (0.7, true)],
            2,
            5.0 / 6.0,
            5.0 / 6.0,
        ),
        // Leading FP: envelope 0.5 everywhere.
        (vec![(0.9, false), (0.8, true)], 1, 0.5, 0.5),
        // Recall tops out at 0.5.
        (vec![(0.9, true)], 2, 0.5, 0.5),
        // Recall steps at thirds: the 1/40 grid cannot represent them, so
        // the two modes split: 2/3 * 1 + 1/3 * 3/4 versus 26 grid points at
        // precision 1 plus 14 at 3/4.
        (
            vec![(0.9, true), (0.8, true), (0.7, false), (0.6, true)],
            3,
            11.0 / 12.0,
            (26.0 + 14.0 * 0.75) / 40.0,
        ),
    ]
}

// ---------------------------------------------------------------------------
// Synthetic scenes
// ---------------------------------------------------------------------------

/// Cameras on a jittered ring around the grid center, all looking inward.
pub fn ring_views(
    spec: &VoxelGridSpec,
    n_views: usize,
    channels: usize,
    seed: u64,
    pattern: voxeldet::stub::FeaturePattern,
) -> Vec<CameraView> {
    use voxeldet::geometry::{CameraExtrinsics, CameraIntrinsics};
    use voxeldet::stub::{make_features, StubSpec};

    let mut rng = rng(seed);
    let cx = (spec.x_min + spec.x_max) * 0.5;
    let cy = (spec.y_min + spec.y_max) * 0.5;
    let cz = (spec.z_min + spec.z_max) * 0.5;
    let radius = (spec.x_max - spec.x_min).max(spec.y_max - spec.y_min);
    (0..n_views)
        .map(|i| {
            let angle = i as f64 / n_views as f64 * std::f64::consts::TAU
                + rng.gen_range(-0.2..0.2);
            let eye = [
                cx + radius * angle.cos(),
                cy + radius * angle.sin(),
                cz + rng.gen_range(-0.5..0.5),
            ];
            let target = [
                cx + rng.gen_range(-0.3..0.3),
                cy + rng.gen_range(-0.3..0.3),
                cz,
            ];
            let width = rng.gen_range(24..48);
            let height = rng.gen_range(18..36);
            let features = make_features(
                &StubSpec {
                    seed: seed ^ (i as u64).wrapping_mul(0x9e3779b97f4a7c15),
                    channels,
                    pattern,
                },
                width,
                height,
                4,
            )
            .unwrap();
            CameraView {
                intrinsics: CameraIntrinsics::new(
                    rng.gen_range(40.0..160.0),
                    rng.gen_range(40.0..160.0),
                    width as f64 * 2.0,
                    height as f64 * 2.0,
                )
                .unwrap(),
                extrinsics: CameraExtrinsics::looking_at(eye, target, [0.0, 0.0, 1.0])
                    .unwrap(),
                features,
            }
        })
        .collect()
}
