//! Detection metrics: greedy matching by IoU or center distance, average
//! precision in two interpolation modes, per-class mAP, true-positive error
//! statistics, and the KITTI difficulty rules.

use crate::geometry::{iou3d, iou_bev, Box3D};
use crate::nms::Detection;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EvalError {
    #[error("tp_errors needs at least one matched pair")]
    NoMatches,
}

/// KITTI annotation difficulty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Moderate,
    Hard,
}

/// An annotated object. `ignore` marks annotations that neither reward nor
/// penalize detections.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthObject {
    #[serde(rename = "box")]
    pub bbox: Box3D,
    pub class_id: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub difficulty: Option<Difficulty>,
    #[serde(default)]
    pub ignore: bool,
}

/// Which overlap measure drives IoU matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IouKind {
    /// Rotated 3D IoU.
    ThreeD,
    /// Rotated ground-plane IoU.
    Bev,
}

/// Recall-interpolation flavor of the average-precision integral.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ApMode {
    /// Mean of the precision envelope at 40 evenly spaced recall points
    /// excluding zero.
    Interp40,
    /// Exact area under the precision envelope.
    AllPoints,
}

/// Angle-difference convention for the orientation error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AngleMode {
    /// Absolute wrapped difference in [0, pi].
    Orientation,
    /// Heading-sensitive difference in [0, 2pi).
    Heading,
}

/// Per-detection outcome of matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DetLabel {
    /// True positive matched to this ground-truth index.
    Tp(usize),
    Fp,
    /// Overlapped only an ignore-flagged annotation; excluded from the PR
    /// curve.
    Ignored,
}

/// Matching outcome: labels aligned with the detection list plus per-gt
/// matched flags.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub labels: Vec<DetLabel>,
    pub gt_matched: Vec<bool>,
}

impl MatchResult {
    /// `(score, is_tp)` pairs of the non-ignored detections, ready for
    /// [`average_precision`].
    pub fn scored(&self, dets: &[Detection]) -> Vec<(f64, bool)> {
        self.labels
            .iter()
            .zip(dets)
            .filter_map(|(label, det)| match label {
                DetLabel::Tp(_) => Some((det.score, true)),
                DetLabel::Fp => Some((det.score, false)),
                DetLabel::Ignored => None,
            })
            .collect()
    }

    /// Matched `(prediction, ground truth)` box pairs.
    pub fn pairs(&self, dets: &[Detection], gts: &[GroundTruthObject]) -> Vec<(Box3D, Box3D)> {
        self.labels
            .iter()
            .zip(dets)
            .filter_map(|(label, det)| match label {
                DetLabel::Tp(j) => Some((det.bbox, gts[*j].bbox)),
                _ => None,
            })
            .collect()
    }
}

/// Score-descending visitation order with ties broken by input index.
fn score_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    order
}

/// Greedy match in descending score: `affinity` scores a (detection, gt)
/// pair, higher is better; a detection becomes a true positive iff its best
/// unmatched non-ignored gt reaches `threshold`. Ignore-flagged gts absorb
/// any number of detections without bookkeeping.
fn greedy_match<F>(
    dets: &[Detection],
    gts: &[GroundTruthObject],
    threshold: f64,
    affinity: F,
) -> MatchResult
where
    F: Fn(&Box3D, &Box3D) -> f64,
{
    let mut labels = vec![DetLabel::Fp; dets.len()];
    let mut gt_matched = vec![false; gts.len()];
    for &i in &score_order(dets) {
        let det = &dets[i];
        let mut best = f64::NEG_INFINITY;
        let mut best_gt = usize::MAX;
        for (j, gt) in gts.iter().enumerate() {
            if gt.ignore || gt_matched[j] {
                continue;
            }
            let a = affinity(&det.bbox, &gt.bbox);
            if a > best {
                best = a;
                best_gt = j;
            }
        }
        if best_gt != usize::MAX && best >= threshold {
            labels[i] = DetLabel::Tp(best_gt);
            gt_matched[best_gt] = true;
            continue;
        }
        let absorbed = gts
            .iter()
            .any(|gt| gt.ignore && affinity(&det.bbox, &gt.bbox) >= threshold);
        labels[i] = if absorbed { DetLabel::Ignored } else { DetLabel::Fp };
    }
    MatchResult { labels, gt_matched }
}

/// IoU matching at a threshold; single-class input (class ids are not
/// consulted).
pub fn match_iou(
    dets: &[Detection],
    gts: &[GroundTruthObject],
    iou_threshold: f64,
    kind: IouKind,
) -> MatchResult {
    match kind {
        IouKind::ThreeD => greedy_match(dets, gts, iou_threshold, iou3d),
        IouKind::Bev => greedy_match(dets, gts, iou_threshold, iou_bev),
    }
}

/// BEV center-distance matching: a detection matches its nearest unmatched
/// gt when the distance is at most `d_threshold` meters.
pub fn match_distance(
    dets: &[Detection],
    gts: &[GroundTruthObject],
    d_threshold: f64,
) -> MatchResult {
    // Negated distance, so "higher is better" and the threshold test
    // `-d >= -d_threshold` is exactly `d <= d_threshold`.
    greedy_match(dets, gts, -d_threshold, |a, b| {
        -((a.x - b.x).hypot(a.y - b.y))
    })
}

/// One precision/recall staircase point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
}

/// Precision-recall staircase with its integrated average precision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    pub ap: f64,
}

/// Builds the PR staircase from `(score, is_tp)` pairs and integrates it.
/// The pairs are sorted by descending score internally (stable for ties), so
/// any strictly monotone rescaling of the scores leaves the result unchanged.
/// `n_gt == 0` yields AP 0 with recall pinned to 0.
pub fn average_precision(scored: &[(f64, bool)], n_gt: usize, mode: ApMode) -> PrCurve {
    let mut scored = scored.to_vec();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut points = Vec::with_capacity(scored.len());
    let mut tp = 0usize;
    let mut fp = 0usize;
    for &(_, is_tp) in &scored {
        if is_tp {
            tp += 1;
        } else {
            fp += 1;
        }
        let recall = if n_gt > 0 { tp as f64 / n_gt as f64 } else { 0.0 };
        points.push(PrPoint {
            recall,
            precision: tp as f64 / (tp + fp) as f64,
        });
    }
    let ap = if n_gt == 0 {
        0.0
    } else {
        integrate(&points, mode)
    };
    PrCurve { points, ap }
}

/// Max precision over all staircase points with recall >= `r`; 0 past the
/// achieved recall range.
fn envelope_at(points: &[PrPoint], r: f64) -> f64 {
    points
        .iter()
        .filter(|p| p.recall >= r)
        .map(|p| p.precision)
        .fold(0.0, f64::max)
}

fn integrate(points: &[PrPoint], mode: ApMode) -> f64 {
    match mode {
        ApMode::Interp40 => {
            let mut acc = 0.0;
            for i in 1..=40 {
                acc += envelope_at(points, i as f64 / 40.0);
            }
            acc / 40.0
        }
        ApMode::AllPoints => {
            let mut acc = 0.0;
            let mut prev_recall = 0.0;
            for (i, p) in points.iter().enumerate() {
                let is_step = p.recall > prev_recall;
                if is_step {
                    // Envelope is constant over (prev_recall, p.recall]; its
                    // value there is the max precision from this point on.
                    let env = points[i..]
                        .iter()
                        .map(|q| q.precision)
                        .fold(0.0, f64::max);
                    acc += (p.recall - prev_recall) * env;
                    prev_recall = p.recall;
                }
            }
            acc
        }
    }
}

/// Mean translation, scale, and orientation errors over matched pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TpErrors {
    /// Mean BEV center distance in meters.
    pub ate: f64,
    /// Mean `1 - IoU` after aligning centers and yaw.
    pub ase: f64,
    /// Mean yaw difference in radians (see [`AngleMode`]).
    pub aoe: f64,
}

/// Computes [`TpErrors`] over matched `(prediction, ground truth)` pairs.
pub fn tp_errors(pairs: &[(Box3D, Box3D)], angle_mode: AngleMode) -> Result<TpErrors, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::NoMatches);
    }
    let n = pairs.len() as f64;
    let mut ate = 0.0;
    let mut ase = 0.0;
    let mut aoe = 0.0;
    for (pred, gt) in pairs {
        ate += (pred.x - gt.x).hypot(pred.y - gt.y);
        let inter = pred.w.min(gt.w) * pred.l.min(gt.l) * pred.h.min(gt.h);
        let union = pred.volume() + gt.volume() - inter;
        ase += 1.0 - inter / union;
        let diff = pred.theta - gt.theta;
        aoe += match angle_mode {
            AngleMode::Orientation => crate::math::wrap_angle(diff).abs(),
            AngleMode::Heading => diff.rem_euclid(std::f64::consts::TAU),
        };
    }
    Ok(TpErrors {
        ate: ate / n,
        ase: ase / n,
        aoe: aoe / n,
    })
}

/// Per-class average precision (all-points mode) and the mean over classes
/// that have at least one non-ignored ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMap {
    pub per_class: Vec<(u32, PrCurve)>,
    pub mean: f64,
}

pub fn map_by_class(
    dets: &[Detection],
    gts: &[GroundTruthObject],
    iou_threshold: f64,
    kind: IouKind,
) -> ClassMap {
    let mut classes: Vec<u32> = gts
        .iter()
        .filter(|g| !g.ignore)
        .map(|g| g.class_id)
        .collect();
    classes.sort_unstable();
    classes.dedup();
    let mut per_class = Vec::with_capacity(classes.len());
    let mut sum = 0.0;
    for &class_id in &classes {
        let class_dets: Vec<Detection> = dets
            .iter()
            .filter(|d| d.class_id == class_id)
            .copied()
            .collect();
        let class_gts: Vec<GroundTruthObject> = gts
            .iter()
            .filter(|g| g.class_id == class_id)
            .copied()
            .collect();
        let n_gt = class_gts.iter().filter(|g| !g.ignore).count();
        let result = match_iou(&class_dets, &class_gts, iou_threshold, kind);
        let curve = average_precision(&result.scored(&class_dets), n_gt, ApMode::AllPoints);
        sum += curve.ap;
        per_class.push((class_id, curve));
    }
    let mean = if classes.is_empty() {
        0.0
    } else {
        sum / classes.len() as f64
    };
    ClassMap { per_class, mean }
}

/// KITTI devkit difficulty thresholds: minimum 2D box height 40/25/25 px,
/// maximum occlusion level 0/1/2, maximum truncation 0.15/0.30/0.50 for
/// easy/moderate/hard. Anything harder is ignored (`None`).
pub fn kitti_difficulty_filter(
    bbox_height_px: f64,
    occlusion: i32,
    truncation: f64,
) -> Option<Difficulty> {
    const MIN_HEIGHT: [f64; 3] = [40.0, 25.0, 25.0];
    const MAX_OCCLUSION: [i32; 3] = [0, 1, 2];
    const MAX_TRUNCATION: [f64; 3] = [0.15, 0.30, 0.50];
    for (i, difficulty) in [Difficulty::Easy, Difficulty::Moderate, Difficulty::Hard]
        .into_iter()
        .enumerate()
    {
        if bbox_height_px >= MIN_HEIGHT[i]
            && occlusion <= MAX_OCCLUSION[i]
            && truncation <= MAX_TRUNCATION[i]
        {
            return Some(difficulty);
        }
    }
    None
}

/// One scored metric row of a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApEntry {
    pub class_id: u32,
    /// Matching rule: "iou3d", "bev", or "distance".
    pub criterion: String,
    pub threshold: f64,
    pub mode: ApMode,
    pub n_gt: usize,
    pub ap: f64,
    pub pr: Vec<PrPoint>,
}

/// The JSON document emitted by evaluation runs: one entry per (class,
/// criterion, threshold, mode) combination, their mean, and TP errors when a
/// distance protocol computed them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub protocol: String,
    pub entries: Vec<ApEntry>,
    pub map: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tp_errors: Option<TpErrors>,
}
