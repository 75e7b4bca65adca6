//! File formats: KITTI calibration and label text files, the JSON multi-view
//! scene format, and the TOML dataset configuration with built-in presets.
//!
//! World frame for all conversions: z up, x forward, y left. KITTI labels
//! live in the rectified camera frame (x right, y down, z forward) with
//! box locations at the bottom face center; [`kitti_to_box3d`] lifts them to
//! centered world-frame boxes.

use crate::codec::AnchorPrior;
use crate::eval::GroundTruthObject;
use crate::geometry::{Box3D, CameraExtrinsics, CameraIntrinsics, GeometryError};
use crate::losses::PoseAngles;
use crate::math::{self, Mat3, Vec3};
use crate::stub::{make_features, FeaturePattern, StubSpec};
use crate::voxel::{derive_counts, FeatureMap2D, GridError, VoxelGridSpec};
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum ParseError {
    #[error("missing required key {0}")]
    MissingKey(&'static str),
    #[error("line {line}: expected {expected} values for {key}, got {got}")]
    WrongArity {
        line: usize,
        key: String,
        expected: usize,
        got: usize,
    },
    #[error("line {line}: cannot parse '{token}' as a number")]
    BadNumber { line: usize, token: String },
    #[error("line {line}: {what}")]
    BadValue { line: usize, what: String },
    #[error("P2 upper-left 3x3 is not invertible")]
    SingularProjection,
    #[error("scene: {0}")]
    InvalidScene(String),
    #[error("config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

// ---------------------------------------------------------------------------
// KITTI calibration files
// ---------------------------------------------------------------------------

/// Calibration matrices of a KITTI frame. `R0_rect` and `Tr_velo_to_cam`
/// default to identities when absent; only `P2` is required.
#[derive(Debug, Clone, PartialEq)]
pub struct KittiCalib {
    pub p2: [[f64; 4]; 3],
    pub r0_rect: Mat3,
    pub tr_velo_to_cam: [[f64; 4]; 3],
}

impl KittiCalib {
    /// Intrinsics from the upper-left 3x3 of P2.
    pub fn intrinsics(&self) -> Result<CameraIntrinsics, GeometryError> {
        CameraIntrinsics::new(self.p2[0][0], self.p2[1][1], self.p2[0][2], self.p2[1][2])
    }

    fn k(&self) -> Mat3 {
        [
            [self.p2[0][0], self.p2[0][1], self.p2[0][2]],
            [self.p2[1][0], self.p2[1][1], self.p2[1][2]],
            [self.p2[2][0], self.p2[2][1], self.p2[2][2]],
        ]
    }

    /// Camera offset folded into P2's fourth column: `P2 = K [I | t]`.
    pub fn p2_translation(&self) -> Result<Vec3, ParseError> {
        let k_inv = math::inverse(&self.k()).ok_or(ParseError::SingularProjection)?;
        Ok(math::mat_vec(
            &k_inv,
            [self.p2[0][3], self.p2[1][3], self.p2[2][3]],
        ))
    }

    /// World-to-camera extrinsics of the P2 camera under the fixed
    /// camera-to-world axis remap (see [`kitti_to_box3d`]). The camera sits
    /// at the world origin; the rotation is the axis permutation.
    pub fn extrinsics(&self) -> Result<CameraExtrinsics, GeometryError> {
        CameraExtrinsics::new(CAM_FROM_WORLD, [0.0; 3])
    }
}

/// Rows express camera axes in world coordinates: x_cam = -y_w,
/// y_cam = -z_w, z_cam = x_w.
const CAM_FROM_WORLD: Mat3 = [[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]];

/// Parses devkit-format `KEY: v0 v1 ...` lines. Unknown keys are ignored.
pub fn parse_kitti_calib(text: &str) -> Result<KittiCalib, ParseError> {
    let mut p2: Option<[[f64; 4]; 3]> = None;
    let mut r0_rect: Option<Mat3> = None;
    let mut tr_velo: Option<[[f64; 4]; 3]> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        let (key, rest) = trimmed.split_once(':').ok_or_else(|| ParseError::BadValue {
            line,
            what: format!("expected 'KEY: values', got '{trimmed}'"),
        })?;
        let key = key.trim();
        let values = parse_floats(rest, line)?;
        match key {
            "P2" => {
                p2 = Some(to_3x4(&values, line, key)?);
            }
            "R0_rect" | "R_rect" => {
                r0_rect = Some(to_3x3(&values, line, key)?);
            }
            "Tr_velo_to_cam" | "Tr_velo_cam" => {
                tr_velo = Some(to_3x4(&values, line, key)?);
            }
            _ => {}
        }
    }
    let calib = KittiCalib {
        p2: p2.ok_or(ParseError::MissingKey("P2"))?,
        r0_rect: r0_rect.unwrap_or(math::IDENTITY),
        tr_velo_to_cam: tr_velo.unwrap_or([
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
        ]),
    };
    if math::inverse(&calib.k()).is_none() {
        return Err(ParseError::SingularProjection);
    }
    Ok(calib)
}

/// Serializes with shortest round-trip float formatting, so
/// `parse(serialize(parse(text)))` reproduces values exactly.
pub fn serialize_kitti_calib(calib: &KittiCalib) -> String {
    let mut out = String::new();
    write_row(&mut out, "P2", calib.p2.iter().flatten());
    write_row(&mut out, "R0_rect", calib.r0_rect.iter().flatten());
    write_row(&mut out, "Tr_velo_to_cam", calib.tr_velo_to_cam.iter().flatten());
    out
}

fn write_row<'a>(out: &mut String, key: &str, values: impl Iterator<Item = &'a f64>) {
    out.push_str(key);
    out.push(':');
    for v in values {
        let _ = write!(out, " {v}");
    }
    out.push('\n');
}

fn parse_floats(text: &str, line: usize) -> Result<Vec<f64>, ParseError> {
    text.split_whitespace()
        .map(|token| {
            token.parse::<f64>().map_err(|_| ParseError::BadNumber {
                line,
                token: token.to_string(),
            })
        })
        .collect()
}

fn to_3x4(values: &[f64], line: usize, key: &str) -> Result<[[f64; 4]; 3], ParseError> {
    if values.len() != 12 {
        return Err(ParseError::WrongArity {
            line,
            key: key.to_string(),
            expected: 12,
            got: values.len(),
        });
    }
    let mut m = [[0.0; 4]; 3];
    for (i, v) in values.iter().enumerate() {
        m[i / 4][i % 4] = *v;
    }
    Ok(m)
}

fn to_3x3(values: &[f64], line: usize, key: &str) -> Result<Mat3, ParseError> {
    if values.len() != 9 {
        return Err(ParseError::WrongArity {
            line,
            key: key.to_string(),
            expected: 9,
            got: values.len(),
        });
    }
    let mut m = [[0.0; 3]; 3];
    for (i, v) in values.iter().enumerate() {
        m[i / 3][i % 3] = *v;
    }
    Ok(m)
}

// ---------------------------------------------------------------------------
// KITTI label files
// ---------------------------------------------------------------------------

pub const DONT_CARE: &str = "DontCare";

/// One row of a KITTI label file (15 fields, optional 16th score).
#[derive(Debug, Clone, PartialEq)]
pub struct KittiLabel {
    pub class_name: String,
    pub truncation: f64,
    pub occlusion: i32,
    pub alpha: f64,
    /// 2D image box: left, top, right, bottom in pixels.
    pub bbox: [f64; 4],
    pub h: f64,
    pub w: f64,
    pub l: f64,
    /// Bottom-face center in the rectified camera frame.
    pub location: Vec3,
    pub rotation_y: f64,
    pub score: Option<f64>,
}

impl KittiLabel {
    pub fn is_dont_care(&self) -> bool {
        self.class_name == DONT_CARE
    }
}

pub fn parse_kitti_label(text: &str) -> Result<Vec<KittiLabel>, ParseError> {
    let mut labels = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 15 && fields.len() != 16 {
            return Err(ParseError::WrongArity {
                line,
                key: "label".to_string(),
                expected: 15,
                got: fields.len(),
            });
        }
        let num = |i: usize| -> Result<f64, ParseError> {
            fields[i].parse::<f64>().map_err(|_| ParseError::BadNumber {
                line,
                token: fields[i].to_string(),
            })
        };
        let label = KittiLabel {
            class_name: fields[0].to_string(),
            truncation: num(1)?,
            occlusion: num(2)? as i32,
            alpha: num(3)?,
            bbox: [num(4)?, num(5)?, num(6)?, num(7)?],
            h: num(8)?,
            w: num(9)?,
            l: num(10)?,
            location: [num(11)?, num(12)?, num(13)?],
            rotation_y: num(14)?,
            score: if fields.len() == 16 {
                Some(num(15)?)
            } else {
                None
            },
        };
        if !label.is_dont_care() {
            if !(label.h > 0.0 && label.w > 0.0 && label.l > 0.0) {
                return Err(ParseError::BadValue {
                    line,
                    what: format!(
                        "non-positive extents ({}, {}, {}) for class {}",
                        label.h, label.w, label.l, label.class_name
                    ),
                });
            }
            if !(-1..=3).contains(&label.occlusion) {
                return Err(ParseError::BadValue {
                    line,
                    what: format!("occlusion {} outside -1..=3", label.occlusion),
                });
            }
        }
        labels.push(label);
    }
    Ok(labels)
}

pub fn serialize_kitti_label(labels: &[KittiLabel]) -> String {
    let mut out = String::new();
    for label in labels {
        let _ = write!(
            out,
            "{} {} {} {} {} {} {} {} {} {} {} {} {} {} {}",
            label.class_name,
            label.truncation,
            label.occlusion,
            label.alpha,
            label.bbox[0],
            label.bbox[1],
            label.bbox[2],
            label.bbox[3],
            label.h,
            label.w,
            label.l,
            label.location[0],
            label.location[1],
            label.location[2],
            label.rotation_y,
        );
        if let Some(score) = label.score {
            let _ = write!(out, " {score}");
        }
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------------------
// KITTI <-> world conversions
// ---------------------------------------------------------------------------

/// Converts a label to a world-frame box.
///
/// Closed form: the rectified-camera location is shifted by `t = K^-1 p2[:,3]`
/// into the P2 camera, lifted from the bottom face by `h/2` against the
/// camera down-axis, and remapped camera (x right, y down, z forward) ->
/// world (x forward, y left, z up): `(x_w, y_w, z_w) = (z_c, -x_c, -y_c)`.
/// The yaw maps as `theta = -rotation_y - pi/2`, so `rotation_y = -pi/2`
/// (an object facing away from the camera) becomes `theta = 0`.
pub fn kitti_to_box3d(label: &KittiLabel, calib: &KittiCalib) -> Result<Box3D, ParseError> {
    let t = calib.p2_translation()?;
    let cam = math::add(label.location, t);
    let center_cam = [cam[0], cam[1] - label.h * 0.5, cam[2]];
    let center = [center_cam[2], -center_cam[0], -center_cam[1]];
    let theta = -label.rotation_y - FRAC_PI_2;
    Ok(Box3D::new(
        center[0], center[1], center[2], label.w, label.h, label.l, theta,
    )?)
}

/// Inverse of [`kitti_to_box3d`]: rebuilds a label row, projecting the box
/// corners through P2 for the 2D bbox (degenerate when behind the camera).
pub fn box3d_to_kitti_label(
    b: &Box3D,
    calib: &KittiCalib,
    class_name: &str,
    score: Option<f64>,
) -> Result<KittiLabel, ParseError> {
    let t = calib.p2_translation()?;
    let center_cam = [-b.y, -b.z, b.x];
    let bottom_cam = [center_cam[0], center_cam[1] + b.h * 0.5, center_cam[2]];
    let location = math::sub(bottom_cam, t);
    let rotation_y = math::wrap_angle(-b.theta - FRAC_PI_2);

    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for corner in crate::geometry::box_corners(b) {
        let cam0 = math::sub(
            [-corner[1], -corner[2], corner[0]],
            t,
        );
        let uvw = [
            calib.p2[0][0] * cam0[0] + calib.p2[0][1] * cam0[1] + calib.p2[0][2] * cam0[2] + calib.p2[0][3],
            calib.p2[1][0] * cam0[0] + calib.p2[1][1] * cam0[1] + calib.p2[1][2] * cam0[2] + calib.p2[1][3],
            calib.p2[2][0] * cam0[0] + calib.p2[2][1] * cam0[1] + calib.p2[2][2] * cam0[2] + calib.p2[2][3],
        ];
        if uvw[2] > 1e-9 {
            let (u, v) = (uvw[0] / uvw[2], uvw[1] / uvw[2]);
            lo[0] = lo[0].min(u);
            lo[1] = lo[1].min(v);
            hi[0] = hi[0].max(u);
            hi[1] = hi[1].max(v);
        }
    }
    let bbox = if lo[0].is_finite() {
        [lo[0], lo[1], hi[0], hi[1]]
    } else {
        [-1.0, -1.0, -1.0, -1.0]
    };
    let alpha = math::wrap_angle(rotation_y - location[0].atan2(location[2]));
    Ok(KittiLabel {
        class_name: class_name.to_string(),
        truncation: 0.0,
        occlusion: 0,
        alpha,
        bbox,
        h: b.h,
        w: b.w,
        l: b.l,
        location,
        rotation_y,
        score,
    })
}

// ---------------------------------------------------------------------------
// Scene files (JSON)
// ---------------------------------------------------------------------------

/// Feature source of one view: inline values or a deterministic stub.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewFeatures {
    Inline(FeatureMap2D),
    Stub {
        seed: u64,
        channels: usize,
        pattern: FeaturePattern,
        width: usize,
        height: usize,
        stride: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneView {
    pub intrinsics: CameraIntrinsics,
    pub extrinsics: CameraExtrinsics,
    pub features: ViewFeatures,
}

impl SceneView {
    /// Materializes the view's feature map.
    pub fn feature_map(&self) -> Result<FeatureMap2D, ParseError> {
        match &self.features {
            ViewFeatures::Inline(map) => {
                map.validate()?;
                Ok(map.clone())
            }
            ViewFeatures::Stub {
                seed,
                channels,
                pattern,
                width,
                height,
                stride,
            } => {
                let spec = StubSpec {
                    seed: *seed,
                    channels: *channels,
                    pattern: *pattern,
                };
                make_features(&spec, *width, *height, *stride)
                    .map_err(|e| ParseError::InvalidScene(e.to_string()))
            }
        }
    }
}

/// A posed multi-view scene with annotations, referencing its grid by config
/// preset name or config file path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFile {
    pub grid: String,
    pub views: Vec<SceneView>,
    #[serde(default)]
    pub objects: Vec<GroundTruthObject>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layout: Option<Box3D>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose: Option<PoseAngles>,
}

impl SceneFile {
    /// Re-establishes the angle invariant on externally produced data.
    pub fn normalize_angles(&mut self) {
        for obj in &mut self.objects {
            obj.bbox.theta = crate::math::wrap_angle(obj.bbox.theta);
        }
        if let Some(layout) = &mut self.layout {
            layout.theta = crate::math::wrap_angle(layout.theta);
        }
    }

    pub fn validate(&self) -> Result<(), ParseError> {
        if self.grid.trim().is_empty() {
            return Err(ParseError::InvalidScene("empty grid name".into()));
        }
        if self.views.is_empty() {
            return Err(ParseError::InvalidScene("scene has no views".into()));
        }
        for (i, view) in self.views.iter().enumerate() {
            CameraIntrinsics::new(
                view.intrinsics.fx,
                view.intrinsics.fy,
                view.intrinsics.cx,
                view.intrinsics.cy,
            )
            .map_err(|e| ParseError::InvalidScene(format!("view {i}: {e}")))?;
            CameraExtrinsics::new(view.extrinsics.rotation, view.extrinsics.translation)
                .map_err(|e| ParseError::InvalidScene(format!("view {i}: {e}")))?;
            view.feature_map()
                .map_err(|e| ParseError::InvalidScene(format!("view {i}: {e}")))?;
        }
        for (i, obj) in self.objects.iter().enumerate() {
            validate_box(&obj.bbox)
                .map_err(|e| ParseError::InvalidScene(format!("object {i}: {e}")))?;
        }
        if let Some(layout) = &self.layout {
            validate_box(layout)
                .map_err(|e| ParseError::InvalidScene(format!("layout: {e}")))?;
        }
        if let Some(pose) = &self.pose {
            if !pose.beta.is_finite() || !pose.gamma.is_finite() {
                return Err(ParseError::InvalidScene("non-finite pose".into()));
            }
        }
        Ok(())
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene serialization cannot fail")
    }
}

fn validate_box(b: &Box3D) -> Result<(), GeometryError> {
    Box3D::new(b.x, b.y, b.z, b.w, b.h, b.l, b.theta).map(|_| ())
}

pub fn load_scene(path: &Path) -> Result<SceneFile, ParseError> {
    let text = std::fs::read_to_string(path)?;
    let mut scene: SceneFile = serde_json::from_str(&text)?;
    scene.normalize_angles();
    scene.validate()?;
    Ok(scene)
}

// ---------------------------------------------------------------------------
// Dataset configuration (TOML)
// ---------------------------------------------------------------------------

/// Assignment and suppression thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub pos_iou: f64,
    pub neg_iou: f64,
    pub nms: f64,
}

/// Per-dataset grid, anchor prior, and thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub name: String,
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub z_min: f64,
    pub z_max: f64,
    /// Voxel edge in meters.
    pub s: f64,
    /// Axis-aligned boxes: yaw is fixed to zero everywhere.
    pub rotation_free: bool,
    pub anchor: AnchorPrior,
    pub thresholds: Thresholds,
}

pub const PRESET_NAMES: [&str; 4] = ["kitti", "nuscenes", "sunrgbd", "scannet"];

const OUTDOOR_ANCHOR: AnchorPrior = AnchorPrior {
    w: 1.6,
    l: 3.9,
    h: 1.56,
    z: -1.0,
};

impl DatasetConfig {
    /// Built-in per-dataset presets; `None` for unknown names.
    pub fn preset(name: &str) -> Option<Self> {
        let outdoor_thresholds = Thresholds {
            pos_iou: 0.6,
            neg_iou: 0.45,
            nms: 0.1,
        };
        let indoor_thresholds = Thresholds {
            pos_iou: 0.6,
            neg_iou: 0.45,
            nms: 0.25,
        };
        let indoor_anchor = AnchorPrior {
            w: 0.6,
            l: 0.6,
            h: 0.9,
            z: -0.6,
        };
        match name {
            "kitti" => Some(Self {
                name: "kitti".into(),
                x_min: -39.68,
                x_max: 39.68,
                y_min: 0.0,
                y_max: 69.12,
                z_min: -2.92,
                z_max: 0.92,
                s: 0.32,
                rotation_free: false,
                anchor: OUTDOOR_ANCHOR,
                thresholds: outdoor_thresholds,
            }),
            "nuscenes" => Some(Self {
                name: "nuscenes".into(),
                x_min: -49.92,
                x_max: 49.92,
                y_min: -49.92,
                y_max: 49.92,
                z_min: -2.92,
                z_max: 0.92,
                s: 0.32,
                rotation_free: false,
                anchor: OUTDOOR_ANCHOR,
                thresholds: outdoor_thresholds,
            }),
            "sunrgbd" => Some(Self {
                name: "sunrgbd".into(),
                x_min: -3.2,
                x_max: 3.2,
                y_min: 0.0,
                y_max: 6.4,
                z_min: -2.28,
                z_max: 0.28,
                s: 0.16,
                rotation_free: false,
                anchor: indoor_anchor,
                thresholds: indoor_thresholds,
            }),
            "scannet" => Some(Self {
                name: "scannet".into(),
                x_min: -3.2,
                x_max: 3.2,
                y_min: -3.2,
                y_max: 3.2,
                z_min: -1.28,
                z_max: 1.28,
                s: 0.16,
                rotation_free: true,
                anchor: indoor_anchor,
                thresholds: indoor_thresholds,
            }),
            _ => None,
        }
    }

    pub fn limits(&self) -> [f64; 6] {
        [
            self.x_min, self.x_max, self.y_min, self.y_max, self.z_min, self.z_max,
        ]
    }

    /// The voxel grid implied by the limits and voxel size.
    pub fn grid(&self) -> Result<VoxelGridSpec, GridError> {
        VoxelGridSpec::new(self.limits(), self.s)
    }

    pub fn validate(&self) -> Result<(), ParseError> {
        if self.name.trim().is_empty() {
            return Err(ParseError::InvalidConfig("empty name".into()));
        }
        derive_counts(self.limits(), self.s)
            .map_err(|e| ParseError::InvalidConfig(e.to_string()))?;
        let t = &self.thresholds;
        if !(0.0 <= t.neg_iou && t.neg_iou <= t.pos_iou && t.pos_iou <= 1.0) {
            return Err(ParseError::InvalidConfig(format!(
                "assignment thresholds out of order: pos={}, neg={}",
                t.pos_iou, t.neg_iou
            )));
        }
        if !(0.0..=1.0).contains(&t.nms) {
            return Err(ParseError::InvalidConfig(format!(
                "nms threshold {} outside [0, 1]",
                t.nms
            )));
        }
        if !(self.anchor.w > 0.0 && self.anchor.l > 0.0 && self.anchor.h > 0.0) {
            return Err(ParseError::InvalidConfig("non-positive anchor prior".into()));
        }
        Ok(())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serialization cannot fail")
    }
}

pub fn load_config(path: &Path) -> Result<DatasetConfig, ParseError> {
    let text = std::fs::read_to_string(path)?;
    let config: DatasetConfig = toml::from_str(&text)?;
    config.validate()?;
    Ok(config)
}

/// Resolves a preset name or, failing that, a config file path.
pub fn resolve_config(name_or_path: &str) -> Result<DatasetConfig, ParseError> {
    if let Some(preset) = DatasetConfig::preset(name_or_path) {
        return Ok(preset);
    }
    load_config(Path::new(name_or_path))
}
