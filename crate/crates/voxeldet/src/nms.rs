//! Greedy rotated non-maximum suppression over ground-plane footprints.

use crate::geometry::{iou_bev, Box3D, GeometryError};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum NmsError {
    #[error("iou threshold must lie in [0, 1], got {0}")]
    BadThreshold(f64),
    #[error("detection score must lie in [0, 1], got {0}")]
    BadScore(f64),
}

/// A scored, classed box prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: Box3D,
    pub score: f64,
    pub class_id: u32,
}

impl Detection {
    pub fn new(bbox: Box3D, score: f64, class_id: u32) -> Result<Self, NmsError> {
        if !(0.0..=1.0).contains(&score) || !score.is_finite() {
            return Err(NmsError::BadScore(score));
        }
        Ok(Self {
            bbox,
            score,
            class_id,
        })
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        Box3D::new(
            self.bbox.x, self.bbox.y, self.bbox.z, self.bbox.w, self.bbox.h, self.bbox.l,
            self.bbox.theta,
        )?;
        Ok(())
    }
}

/// Greedy class-wise suppression: detections are visited in descending score
/// (ties by ascending input index) and kept iff their BEV rotated IoU with
/// every already-kept detection of the same class stays strictly below the
/// threshold. Returns kept indices into the input, in visiting order.
pub fn rotated_nms(dets: &[Detection], iou_threshold: f64) -> Result<Vec<usize>, NmsError> {
    if !(0.0..=1.0).contains(&iou_threshold) {
        return Err(NmsError::BadThreshold(iou_threshold));
    }
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .total_cmp(&dets[a].score)
            .then(a.cmp(&b))
    });
    let mut kept: Vec<usize> = Vec::new();
    for &i in &order {
        let suppressed = kept.iter().any(|&j| {
            dets[j].class_id == dets[i].class_id
                && iou_bev(&dets[j].bbox, &dets[i].bbox) >= iou_threshold
        });
        if !suppressed {
            kept.push(i);
        }
    }
    Ok(kept)
}
