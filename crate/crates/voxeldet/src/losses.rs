//! Loss functions of both detection heads and the extra layout/pose head,
//! with analytic gradients and a finite-difference check harness.
//!
//! Component losses return sums; normalization by the positive count happens
//! once in [`outdoor_total`] / [`indoor_total`]. The rotated-IoU loss is the
//! one loss without an analytic gradient: polygon clipping is piecewise
//! smooth, so its gradient is validated numerically via step-size agreement
//! instead.

use crate::geometry::{iou3d, Box3D};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LossError {
    #[error("probability must lie strictly inside (0, 1), got {0}")]
    ProbOutOfRange(f64),
    #[error("target must lie in [0, 1], got {0}")]
    TargetOutOfRange(f64),
    #[error("smooth-l1 beta must be positive, got {0}")]
    BadBeta(f64),
    #[error("direction target must be 0 or 1, got {0}")]
    BadDirTarget(usize),
    #[error("non-finite input")]
    NonFinite,
}

/// Combination weights of the anchor-head loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeightsOutdoor {
    pub lambda_loc: f64,
    pub lambda_cls: f64,
    pub lambda_dir: f64,
}

impl Default for LossWeightsOutdoor {
    fn default() -> Self {
        Self {
            lambda_loc: 2.0,
            lambda_cls: 1.0,
            lambda_dir: 0.2,
        }
    }
}

/// Combination weights of the extra layout/pose loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeightsExtra {
    pub lambda_layout: f64,
    pub lambda_pose: f64,
}

impl Default for LossWeightsExtra {
    fn default() -> Self {
        Self {
            lambda_layout: 0.1,
            lambda_pose: 1.0,
        }
    }
}

/// Camera pitch and roll in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseAngles {
    pub beta: f64,
    pub gamma: f64,
}

/// Default focal-loss weighting factor.
pub const FOCAL_ALPHA: f64 = 0.25;
/// Default focal-loss focusing exponent.
pub const FOCAL_GAMMA: f64 = 2.0;
/// Default smooth-L1 quadratic-to-linear transition point.
pub const SMOOTH_L1_BETA: f64 = 1.0 / 9.0;

/// Focal loss `-alpha_t (1 - p_t)^gamma ln(p_t)` for a binary target, with
/// its derivative with respect to `p`. Errors at `p` in {0, 1} exactly.
pub fn focal_loss(p: f64, y: bool, alpha: f64, gamma: f64) -> Result<(f64, f64), LossError> {
    if !p.is_finite() || !alpha.is_finite() || !gamma.is_finite() {
        return Err(LossError::NonFinite);
    }
    if p <= 0.0 || p >= 1.0 {
        return Err(LossError::ProbOutOfRange(p));
    }
    let (pt, alpha_t, dpt_dp) = if y {
        (p, alpha, 1.0)
    } else {
        (1.0 - p, 1.0 - alpha, -1.0)
    };
    let one_minus = 1.0 - pt;
    let loss = -alpha_t * one_minus.powf(gamma) * pt.ln();
    let dloss_dpt =
        alpha_t * gamma * one_minus.powf(gamma - 1.0) * pt.ln() - alpha_t * one_minus.powf(gamma) / pt;
    Ok((loss, dloss_dpt * dpt_dp))
}

/// Smooth mean absolute error: quadratic below `beta`, linear above, with a
/// continuous value and derivative at the transition.
pub fn smooth_l1(pred: f64, target: f64, beta: f64) -> Result<(f64, f64), LossError> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(LossError::BadBeta(beta));
    }
    if !pred.is_finite() || !target.is_finite() {
        return Err(LossError::NonFinite);
    }
    let d = pred - target;
    if d.abs() < beta {
        Ok((0.5 * d * d / beta, d / beta))
    } else {
        Ok((d.abs() - 0.5 * beta, d.signum()))
    }
}

/// Two-class softmax cross-entropy with the gradient over both logits.
pub fn dir_ce(logits: [f64; 2], target: usize) -> Result<(f64, [f64; 2]), LossError> {
    if target > 1 {
        return Err(LossError::BadDirTarget(target));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(LossError::NonFinite);
    }
    let m = logits[0].max(logits[1]);
    let lse = m + ((logits[0] - m).exp() + (logits[1] - m).exp()).ln();
    let loss = lse - logits[target];
    let mut grad = [(logits[0] - lse).exp(), (logits[1] - lse).exp()];
    grad[target] -= 1.0;
    Ok((loss, grad))
}

/// Rotated 3D IoU loss `1 - iou3d(pred, gt)`. No analytic gradient; use
/// [`grad_check`]-style finite differences externally when one is needed.
pub fn iou3d_loss(pred: &Box3D, gt: &Box3D) -> f64 {
    1.0 - iou3d(pred, gt)
}

/// Binary cross-entropy against a soft centerness target in [0, 1].
pub fn centerness_bce(pred: f64, target: f64) -> Result<(f64, f64), LossError> {
    if !pred.is_finite() || !target.is_finite() {
        return Err(LossError::NonFinite);
    }
    if pred <= 0.0 || pred >= 1.0 {
        return Err(LossError::ProbOutOfRange(pred));
    }
    if !(0.0..=1.0).contains(&target) {
        return Err(LossError::TargetOutOfRange(target));
    }
    let loss = -(target * pred.ln() + (1.0 - target) * (1.0 - pred).ln());
    let grad = (pred - target) / (pred * (1.0 - pred));
    Ok((loss, grad))
}

/// Weighted anchor-head total over `n_pos` positives. With zero positives
/// the location and direction terms are dropped and the classification sum
/// is divided by one.
pub fn outdoor_total(loc: f64, cls: f64, dir: f64, n_pos: usize, w: &LossWeightsOutdoor) -> f64 {
    if n_pos == 0 {
        return w.lambda_cls * cls;
    }
    (w.lambda_loc * loc + w.lambda_cls * cls + w.lambda_dir * dir) / n_pos as f64
}

/// Unweighted anchor-free-head total over `n_pos` positive locations; the
/// zero-positive rule matches [`outdoor_total`].
pub fn indoor_total(loc: f64, cls: f64, cntr: f64, n_pos: usize) -> f64 {
    if n_pos == 0 {
        return cls;
    }
    (loc + cls + cntr) / n_pos as f64
}

/// `|sin(beta_gt - beta)| + |sin(gamma_gt - gamma)|` with the subgradient
/// with respect to the prediction (zero at zero residual).
pub fn pose_loss(pred: &PoseAngles, gt: &PoseAngles) -> (f64, [f64; 2]) {
    let term = |g: f64, p: f64| -> (f64, f64) {
        let r = g - p;
        let s = r.sin();
        // d/dp |sin(g - p)| = -cos(g - p) * sign(sin(g - p))
        (s.abs(), if s == 0.0 { 0.0 } else { -r.cos() * s.signum() })
    };
    let (lb, gb) = term(gt.beta, pred.beta);
    let (lg, gg) = term(gt.gamma, pred.gamma);
    (lb + lg, [gb, gg])
}

/// Extra-head total: weighted rotated-IoU layout loss plus weighted pose
/// loss.
pub fn extra_total(
    layout_pred: &Box3D,
    layout_gt: &Box3D,
    pose_pred: &PoseAngles,
    pose_gt: &PoseAngles,
    w: &LossWeightsExtra,
) -> f64 {
    w.lambda_layout * iou3d_loss(layout_pred, layout_gt) + w.lambda_pose * pose_loss(pose_pred, pose_gt).0
}

/// Compares the analytic gradient of `f` at `x` against central finite
/// differences with step `eps`, returning the max relative error over
/// coordinates (denominator `max(|analytic|, |numeric|, 1e-8)`).
pub fn grad_check<F>(f: F, x: &[f64], eps: f64) -> f64
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let analytic = f(x).1;
    assert_eq!(analytic.len(), x.len(), "gradient arity mismatch");
    let mut point = x.to_vec();
    let mut max_err = 0.0f64;
    for i in 0..x.len() {
        point[i] = x[i] + eps;
        let f_plus = f(&point).0;
        point[i] = x[i] - eps;
        let f_minus = f(&point).0;
        point[i] = x[i];
        let numeric = (f_plus - f_minus) / (2.0 * eps);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
        max_err = max_err.max((analytic[i] - numeric).abs() / denom);
    }
    max_err
}
