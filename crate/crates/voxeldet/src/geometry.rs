//! Camera projection, oriented-box geometry and rotated 3D IoU.
//!
//! Conventions, shared by every module in the crate:
//!
//! * World frame: z-axis up, x-axis forward, y-axis completing the
//!   right-handed triple.
//! * [`Box3D`] extents: `l` spans the box's local x-axis (the heading axis at
//!   `theta = 0`), `w` the local y-axis, `h` the z-axis. `(x, y, z)` is the
//!   geometric center and `theta` rotates around +z.
//! * Angles are normalized to `(-pi, pi]` at construction.

use crate::math::{self, Mat3, Vec3};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GeometryError {
    #[error("focal lengths must be positive and finite, got fx={fx}, fy={fy}")]
    BadIntrinsics { fx: f64, fy: f64 },
    #[error("rotation is not orthonormal with determinant +1 (deviation {deviation:.3e})")]
    BadRotation { deviation: f64 },
    #[error("box extents must be positive and finite, got w={w}, h={h}, l={l}")]
    BadExtents { w: f64, h: f64, l: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("polygon needs at least 3 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("polygon vertices are not convex in counter-clockwise order")]
    NotConvexCcw,
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self, GeometryError> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(GeometryError::BadIntrinsics { fx, fy });
        }
        if !(cx.is_finite() && cy.is_finite()) {
            return Err(GeometryError::NonFinite("principal point"));
        }
        Ok(Self { fx, fy, cx, cy })
    }
}

/// World-to-camera rigid transform: `p_cam = rotation * p_world + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraExtrinsics {
    /// Row-major 3x3 rotation, orthonormal with determinant +1.
    pub rotation: Mat3,
    /// Translation in meters.
    pub translation: Vec3,
}

const ROTATION_TOL: f64 = 1e-6;

impl CameraExtrinsics {
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self, GeometryError> {
        let deviation = rotation_deviation(&rotation);
        if deviation > ROTATION_TOL {
            return Err(GeometryError::BadRotation { deviation });
        }
        if translation.iter().any(|t| !t.is_finite()) {
            return Err(GeometryError::NonFinite("translation"));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: math::IDENTITY,
            translation: [0.0; 3],
        }
    }

    /// Camera at `eye` looking toward `target`; the camera z-axis points at
    /// the target, x right, y down (`up` is the world up hint).
    pub fn looking_at(eye: Vec3, target: Vec3, up: Vec3) -> Result<Self, GeometryError> {
        let fwd = math::sub(target, eye);
        if math::norm(fwd) == 0.0 {
            return Err(GeometryError::NonFinite("view direction"));
        }
        let z = math::normalize(fwd);
        let x = math::cross(z, math::scale(up, -1.0));
        if math::norm(x) < 1e-12 {
            return Err(GeometryError::NonFinite("view direction parallel to up"));
        }
        let x = math::normalize(x);
        let y = math::cross(z, x);
        // Rows of the world->camera rotation are the camera axes in world
        // coordinates.
        let rotation = [x, y, z];
        let translation = math::scale(math::mat_vec(&rotation, eye), -1.0);
        Self::new(rotation, translation)
    }
}

/// Max absolute entry of `R * R^T - I` plus the determinant's deviation
/// from +1.
fn rotation_deviation(rotation: &Mat3) -> f64 {
    if rotation.iter().flatten().any(|v| !v.is_finite()) {
        return f64::INFINITY;
    }
    let rrt = math::mat_mul(rotation, &math::transpose(rotation));
    let mut dev: f64 = 0.0;
    for (i, row) in rrt.iter().enumerate() {
        for (j, &value) in row.iter().enumerate() {
            let want = if i == j { 1.0 } else { 0.0 };
            dev = dev.max((value - want).abs());
        }
    }
    dev.max((math::det(rotation) - 1.0).abs())
}

/// Oriented 3D bounding box in the world frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub w: f64,
    pub h: f64,
    pub l: f64,
    pub theta: f64,
}

impl Box3D {
    pub fn new(
        x: f64,
        y: f64,
        z: f64,
        w: f64,
        h: f64,
        l: f64,
        theta: f64,
    ) -> Result<Self, GeometryError> {
        if !(w > 0.0 && h > 0.0 && l > 0.0 && w.is_finite() && h.is_finite() && l.is_finite()) {
            return Err(GeometryError::BadExtents { w, h, l });
        }
        if ![x, y, z, theta].iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite("box center or angle"));
        }
        Ok(Self {
            x,
            y,
            z,
            w,
            h,
            l,
            theta: math::wrap_angle(theta),
        })
    }

    pub fn center(&self) -> Vec3 {
        [self.x, self.y, self.z]
    }

    pub fn volume(&self) -> f64 {
        self.w * self.l * self.h
    }

    /// Coordinates of `p` in the box frame: origin at the center, x along the
    /// heading axis (extent `l`), y along `w`, z along `h`.
    pub fn to_local(&self, p: Vec3) -> Vec3 {
        let dx = p[0] - self.x;
        let dy = p[1] - self.y;
        let (s, c) = self.theta.sin_cos();
        [c * dx + s * dy, -s * dx + c * dy, p[2] - self.z]
    }

    /// Inverse of [`Box3D::to_local`].
    pub fn from_local(&self, p: Vec3) -> Vec3 {
        let (s, c) = self.theta.sin_cos();
        [
            c * p[0] - s * p[1] + self.x,
            s * p[0] + c * p[1] + self.y,
            p[2] + self.z,
        ]
    }

    pub fn contains(&self, p: Vec3) -> bool {
        let q = self.to_local(p);
        q[0].abs() <= self.l * 0.5 && q[1].abs() <= self.w * 0.5 && q[2].abs() <= self.h * 0.5
    }
}

/// Convex counter-clockwise polygon in the world xy-plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon2D {
    vertices: Vec<[f64; 2]>,
}

impl Polygon2D {
    pub fn new(vertices: Vec<[f64; 2]>) -> Result<Self, GeometryError> {
        if vertices.len() < 3 {
            return Err(GeometryError::TooFewVertices(vertices.len()));
        }
        if vertices.iter().flatten().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite("polygon vertex"));
        }
        let n = vertices.len();
        for i in 0..n {
            let a = vertices[i];
            let b = vertices[(i + 1) % n];
            let c = vertices[(i + 2) % n];
            let e1 = [b[0] - a[0], b[1] - a[1]];
            let e2 = [c[0] - b[0], c[1] - b[1]];
            let cr = e1[0] * e2[1] - e1[1] * e2[0];
            let scale = e1[0].hypot(e1[1]) * e2[0].hypot(e2[1]);
            if cr < -1e-9 * scale.max(1e-300) {
                return Err(GeometryError::NotConvexCcw);
            }
        }
        let poly = Self { vertices };
        if poly.area() <= 0.0 {
            return Err(GeometryError::NotConvexCcw);
        }
        Ok(poly)
    }

    pub(crate) fn new_unchecked(vertices: Vec<[f64; 2]>) -> Self {
        Self { vertices }
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    /// Signed shoelace area; positive for counter-clockwise order.
    pub fn area(&self) -> f64 {
        shoelace(&self.vertices)
    }
}

fn shoelace(vertices: &[[f64; 2]]) -> f64 {
    let n = vertices.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        let [x0, y0] = vertices[i];
        let [x1, y1] = vertices[(i + 1) % n];
        acc += x0 * y1 - x1 * y0;
    }
    acc * 0.5
}

/// Projects a world point onto a feature map of the given stride.
///
/// Returns `(u, v, depth)` where `(u, v)` are feature-map coordinates after
/// perspective division and the 1/stride scaling, and `depth` is the
/// camera-frame z. A depth of zero makes `(u, v)` non-finite; the sign of the
/// depth is preserved and callers decide validity.
pub fn project_point(
    k: &CameraIntrinsics,
    rt: &CameraExtrinsics,
    p: Vec3,
    stride: u32,
) -> (f64, f64, f64) {
    debug_assert!(stride >= 1);
    let r = &rt.rotation;
    let t = rt.translation;
    let qx = r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2] + t[0];
    let qy = r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2] + t[1];
    let qz = r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2] + t[2];
    let s = stride as f64;
    let u = (k.fx * qx / qz + k.cx) / s;
    let v = (k.fy * qy / qz + k.cy) / s;
    (u, v, qz)
}

/// The eight corners of an oriented box.
///
/// Ordering: bottom face (z = center - h/2) then top face, each
/// counter-clockwise seen from +z starting at the local (+l/2, +w/2) corner.
pub fn box_corners(b: &Box3D) -> [Vec3; 8] {
    let hl = b.l * 0.5;
    let hw = b.w * 0.5;
    let hh = b.h * 0.5;
    let footprint = [[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]];
    let mut out = [[0.0; 3]; 8];
    for (i, corner) in out.iter_mut().enumerate() {
        let [lx, ly] = footprint[i % 4];
        let lz = if i < 4 { -hh } else { hh };
        *corner = b.from_local([lx, ly, lz]);
    }
    out
}

/// The 4-vertex counter-clockwise footprint of a box in the world xy-plane.
pub fn bev_polygon(b: &Box3D) -> Polygon2D {
    let corners = box_corners(b);
    Polygon2D::new_unchecked(corners[..4].iter().map(|c| [c[0], c[1]]).collect())
}

/// Area of the intersection of two convex polygons via Sutherland-Hodgman
/// clipping. Zero for disjoint polygons; shared edges and vertices count as
/// zero area.
pub fn convex_intersection_area(a: &Polygon2D, b: &Polygon2D) -> f64 {
    let clipped = clip_convex(a.vertices(), b.vertices());
    shoelace(&clipped).max(0.0)
}

/// Clips `subject` against every half-plane of the counter-clockwise convex
/// polygon `clip`.
fn clip_convex(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut output = subject.to_vec();
    let n = clip.len();
    for i in 0..n {
        if output.is_empty() {
            break;
        }
        let e1 = clip[i];
        let e2 = clip[(i + 1) % n];
        let input = std::mem::take(&mut output);
        let m = input.len();
        for j in 0..m {
            let cur = input[j];
            let prev = input[(j + m - 1) % m];
            let cur_in = is_left(e1, e2, cur);
            let prev_in = is_left(e1, e2, prev);
            if cur_in {
                if !prev_in {
                    output.push(line_intersection(prev, cur, e1, e2));
                }
                output.push(cur);
            } else if prev_in {
                output.push(line_intersection(prev, cur, e1, e2));
            }
        }
    }
    output
}

#[inline]
fn is_left(e1: [f64; 2], e2: [f64; 2], q: [f64; 2]) -> bool {
    (e2[0] - e1[0]) * (q[1] - e1[1]) - (e2[1] - e1[1]) * (q[0] - e1[0]) >= 0.0
}

/// Intersection of segment `(s, e)` with the infinite line through
/// `(c1, c2)`. Callers guarantee the segment crosses the line.
fn line_intersection(s: [f64; 2], e: [f64; 2], c1: [f64; 2], c2: [f64; 2]) -> [f64; 2] {
    let dc = [c1[0] - c2[0], c1[1] - c2[1]];
    let dp = [s[0] - e[0], s[1] - e[1]];
    let n1 = c1[0] * c2[1] - c1[1] * c2[0];
    let n2 = s[0] * e[1] - s[1] * e[0];
    let denom = dc[0] * dp[1] - dc[1] * dp[0];
    [
        (n1 * dp[0] - n2 * dc[0]) / denom,
        (n1 * dp[1] - n2 * dc[1]) / denom,
    ]
}

/// Rotated 3D IoU: BEV footprint intersection times z-overlap, over the true
/// 3D volume union.
pub fn iou3d(a: &Box3D, b: &Box3D) -> f64 {
    if a == b {
        return 1.0;
    }
    // Fixed operand order keeps iou3d(a, b) == iou3d(b, a) bitwise.
    let (a, b) = canonical_pair(a, b);
    let inter_bev = convex_intersection_area(&bev_polygon(a), &bev_polygon(b));
    let z_lo = (a.z - a.h * 0.5).max(b.z - b.h * 0.5);
    let z_hi = (a.z + a.h * 0.5).min(b.z + b.h * 0.5);
    let inter = inter_bev * (z_hi - z_lo).max(0.0);
    let union = a.volume() + b.volume() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Rotated IoU of the ground-plane footprints.
pub fn iou_bev(a: &Box3D, b: &Box3D) -> f64 {
    if (a.x, a.y, a.w, a.l, a.theta) == (b.x, b.y, b.w, b.l, b.theta) {
        return 1.0;
    }
    let (a, b) = canonical_pair(a, b);
    let pa = bev_polygon(a);
    let pb = bev_polygon(b);
    let inter = convex_intersection_area(&pa, &pb);
    let union = a.w * a.l + b.w * b.l - inter;
    (inter / union).clamp(0.0, 1.0)
}

fn canonical_pair<'a>(a: &'a Box3D, b: &'a Box3D) -> (&'a Box3D, &'a Box3D) {
    let ka = [a.x, a.y, a.z, a.w, a.h, a.l, a.theta];
    let kb = [b.x, b.y, b.z, b.w, b.h, b.l, b.theta];
    for (va, vb) in ka.iter().zip(&kb) {
        match va.total_cmp(vb) {
            std::cmp::Ordering::Less => return (a, b),
            std::cmp::Ordering::Greater => return (b, a),
            std::cmp::Ordering::Equal => {}
        }
    }
    (a, b)
}
