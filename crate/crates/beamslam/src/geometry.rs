//! 2-D specular-reflection geometry relating the UE, the physical anchor (PA),
//! virtual anchors (VAs), and reflection surface points (RSPs).
//!
//! Conventions used throughout the crate:
//! * global angles are measured counterclockwise from +x and wrapped to (−π, π];
//! * a local (array-frame) angle is `global − orientation`, where the orientation
//!   is the direction of the array axis, so boresight sits at a local 90°;
//! * a VA is the mirror image of the PA across a wall line, and the RSP of a
//!   single-bounce path is where the UE–VA segment crosses that wall.

use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};
use thiserror::Error;

/// Wrap an angle to (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    if w > PI {
        w - TAU
    } else {
        w
    }
}

/// Absolute wrapped difference between two angles, in [0, π].
pub fn angle_diff(a: f64, b: f64) -> f64 {
    wrap_angle(a - b).abs()
}

/// Project an angle onto a fixed point of the degrees↔radians round trip.
/// Measurement files carry angles in degrees; a fixed point guarantees that
/// dumping and re-parsing reproduces the in-memory value bit-exactly. The
/// iteration is a monotone rounding projection and settles within a few ulps.
pub fn canonical_angle(radians: f64) -> f64 {
    let mut current = wrap_angle(radians);
    for _ in 0..16 {
        let next = current.to_degrees().to_radians();
        if next == current {
            break;
        }
        current = next;
    }
    current
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }

    /// Direction of the vector `self → to`, global frame.
    pub fn direction_to(&self, to: &Point2) -> f64 {
        (to.y - self.y).atan2(to.x - self.x)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// A finite reflective wall segment. `reflectivity_db` is the power lost on a
/// single bounce (≥ 0); it calibrates the RSRP gap between LOS and NLOS paths.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Wall {
    pub endpoint_a: Point2,
    pub endpoint_b: Point2,
    pub reflectivity_db: f64,
}

impl Wall {
    pub fn new(endpoint_a: Point2, endpoint_b: Point2, reflectivity_db: f64) -> Self {
        Self {
            endpoint_a,
            endpoint_b,
            reflectivity_db,
        }
    }

    fn tangent(&self) -> (f64, f64) {
        (
            self.endpoint_b.x - self.endpoint_a.x,
            self.endpoint_b.y - self.endpoint_a.y,
        )
    }

    fn length(&self) -> f64 {
        self.endpoint_a.distance(&self.endpoint_b)
    }

    /// Parameter of the orthogonal projection of `p` onto the wall line;
    /// 0 at `endpoint_a`, 1 at `endpoint_b`.
    fn project_param(&self, p: &Point2) -> f64 {
        let (tx, ty) = self.tangent();
        let len2 = tx * tx + ty * ty;
        ((p.x - self.endpoint_a.x) * tx + (p.y - self.endpoint_a.y) * ty) / len2
    }

    /// True when `p` lies on the finite segment (assuming it lies on the line).
    pub fn contains_projected(&self, p: &Point2, tol: f64) -> bool {
        let t = self.project_param(p);
        let margin = tol / self.length();
        t >= -margin && t <= 1.0 + margin
    }
}

/// Position plus array-axis direction in the global frame.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Pose {
    pub position: Point2,
    pub orientation: f64,
}

impl Pose {
    pub fn new(position: Point2, orientation: f64) -> Self {
        Self {
            position,
            orientation: wrap_angle(orientation),
        }
    }
}

/// Axis-aligned region of interest.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Rect {
    pub min: Point2,
    pub max: Point2,
}

impl Rect {
    pub fn new(min: Point2, max: Point2) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, p: &Point2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("rays do not intersect in front of both origins")]
    NoIntersection,
    #[error("UE lies on the far side of the wall; no single-bounce path exists")]
    SameSideViolation,
    #[error("invalid scene: {0}")]
    InvalidScene(String),
}

/// Static scene: one PA, the reflective walls, and the region of interest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scene {
    pub pa: Pose,
    pub walls: Vec<Wall>,
    pub bounds: Rect,
}

impl Scene {
    /// Validates that walls are proper segments, the PA is inside the bounds,
    /// and every wall induces a distinct VA.
    pub fn new(pa: Pose, walls: Vec<Wall>, bounds: Rect) -> Result<Self, GeometryError> {
        if !bounds.contains(&pa.position) {
            return Err(GeometryError::InvalidScene(
                "bounds must contain the PA position".into(),
            ));
        }
        for (i, w) in walls.iter().enumerate() {
            if w.length() < 1e-9 {
                return Err(GeometryError::InvalidScene(format!(
                    "wall {i} has coincident endpoints"
                )));
            }
            if w.reflectivity_db < 0.0 {
                return Err(GeometryError::InvalidScene(format!(
                    "wall {i} has negative reflectivity"
                )));
            }
        }
        let vas: Vec<Point2> = walls
            .iter()
            .map(|w| mirror_anchor(&pa.position, w))
            .collect();
        for i in 0..vas.len() {
            for j in (i + 1)..vas.len() {
                if vas[i].distance(&vas[j]) < 1e-9 {
                    return Err(GeometryError::InvalidScene(format!(
                        "walls {i} and {j} induce the same VA"
                    )));
                }
            }
        }
        Ok(Self { pa, walls, bounds })
    }

    /// Mirror image of the PA across wall `idx`.
    pub fn virtual_anchor(&self, idx: usize) -> Point2 {
        mirror_anchor(&self.pa.position, &self.walls[idx])
    }

    pub fn virtual_anchors(&self) -> Vec<Point2> {
        (0..self.walls.len())
            .map(|i| self.virtual_anchor(i))
            .collect()
    }
}

/// Which physical propagation path a ground-truth entry describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PathKind {
    Los,
    SingleBounce { wall: usize },
}

/// One true propagation path. Angles are global-frame (the tilde angles);
/// subtract the array orientations to obtain local measurements.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PathTruth {
    pub kind: PathKind,
    pub aod_global: f64,
    pub aoa_global: f64,
    pub length: f64,
    pub rsp: Option<Point2>,
}

impl PathTruth {
    /// Local (orientation-subtracted) angles for the given array orientations.
    pub fn local_angles(&self, pa_orientation: f64, ue_orientation: f64) -> (f64, f64) {
        (
            wrap_angle(self.aod_global - pa_orientation),
            wrap_angle(self.aoa_global - ue_orientation),
        )
    }
}

/// Reflect `pa` across the infinite line through `wall`.
pub fn mirror_anchor(pa: &Point2, wall: &Wall) -> Point2 {
    let (tx, ty) = wall.tangent();
    let len2 = tx * tx + ty * ty;
    // Projection of (pa - a) on the tangent.
    let dx = pa.x - wall.endpoint_a.x;
    let dy = pa.y - wall.endpoint_a.y;
    let t = (dx * tx + dy * ty) / len2;
    let foot = Point2::new(wall.endpoint_a.x + t * tx, wall.endpoint_a.y + t * ty);
    Point2::new(2.0 * foot.x - pa.x, 2.0 * foot.y - pa.y)
}

/// Intersect the ray from the PA along the global AOD with the ray from the UE
/// along the global AOA. This inverts the angle relations: the intersection is
/// the RSP whose directions from both endpoints reproduce the inputs.
pub fn rsp_from_angles(
    pa: &Pose,
    ue: &Pose,
    aod_global: f64,
    aoa_global: f64,
) -> Result<Point2, GeometryError> {
    let (dx1, dy1) = (aod_global.cos(), aod_global.sin());
    let (dx2, dy2) = (aoa_global.cos(), aoa_global.sin());
    let det = dx1 * (-dy2) - dy1 * (-dx2);
    if det.abs() < 1e-12 {
        return Err(GeometryError::NoIntersection);
    }
    let rx = ue.position.x - pa.position.x;
    let ry = ue.position.y - pa.position.y;
    // Solve pa + s·d1 = ue + t·d2 for (s, t) via Cramer's rule.
    let s = (rx * (-dy2) - ry * (-dx2)) / det;
    let t = (dx1 * ry - dy1 * rx) / det;
    if s <= 0.0 || t <= 0.0 {
        return Err(GeometryError::NoIntersection);
    }
    Ok(Point2::new(
        pa.position.x + s * dx1,
        pa.position.y + s * dy1,
    ))
}

/// Place the VA along the arrival direction: `rsp + |rsp − pa| · (cos φ̃, sin φ̃)`.
pub fn va_from_rsp(pa: &Point2, rsp: &Point2, aoa_global: f64) -> Point2 {
    let d = rsp.distance(pa);
    Point2::new(d.mul_add(aoa_global.cos(), rsp.x), d.mul_add(aoa_global.sin(), rsp.y))
}

/// Inverse geometry: recover the RSP for a hypothesized VA as the intersection
/// of segment `ue → va` with the perpendicular bisector of (pa, va).
pub fn reflection_point(pa: &Point2, va: &Point2, ue: &Point2) -> Result<Point2, GeometryError> {
    let nx = va.x - pa.x;
    let ny = va.y - pa.y;
    let mx = 0.5 * (pa.x + va.x);
    let my = 0.5 * (pa.y + va.y);
    // Signed distances along the bisector normal; the PA side is negative.
    let s_ue = (ue.x - mx) * nx + (ue.y - my) * ny;
    if s_ue >= 0.0 {
        return Err(GeometryError::SameSideViolation);
    }
    let s_va = (va.x - mx) * nx + (va.y - my) * ny;
    let t = s_ue / (s_ue - s_va);
    Ok(Point2::new(
        ue.x + t * (va.x - ue.x),
        ue.y + t * (va.y - ue.y),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureKind {
    Pa,
    Va,
}

/// Predicted local (AOD, AOA) measurement for a feature hypothesis.
///
/// For a PA-kind feature the hypothesized position is the departure anchor
/// itself; `pa` then only supplies the array orientation. For a VA the AOD is
/// the direction from the PA towards the reflection point.
pub fn predicted_angles(
    kind: FeatureKind,
    feature_pos: &Point2,
    pa: &Pose,
    ue: &Pose,
) -> Result<(f64, f64), GeometryError> {
    match kind {
        FeatureKind::Pa => {
            let aod = feature_pos.direction_to(&ue.position) - pa.orientation;
            let aoa = ue.position.direction_to(feature_pos) - ue.orientation;
            Ok((wrap_angle(aod), wrap_angle(aoa)))
        }
        FeatureKind::Va => {
            let rsp = reflection_point(&pa.position, feature_pos, &ue.position)?;
            let aod = pa.position.direction_to(&rsp) - pa.orientation;
            let aoa = ue.position.direction_to(feature_pos) - ue.orientation;
            Ok((wrap_angle(aod), wrap_angle(aoa)))
        }
    }
}

/// Proper intersection test between segments (p1, p2) and (q1, q2).
/// Endpoint touches within `tol` of the tested segment's ends do not count,
/// so path legs are not blocked by the wall they reflect on.
fn segment_blocks(p1: &Point2, p2: &Point2, q1: &Point2, q2: &Point2) -> bool {
    let d1x = p2.x - p1.x;
    let d1y = p2.y - p1.y;
    let d2x = q2.x - q1.x;
    let d2y = q2.y - q1.y;
    let det = d1x * d2y - d1y * d2x;
    if det.abs() < 1e-14 {
        return false;
    }
    let rx = q1.x - p1.x;
    let ry = q1.y - p1.y;
    let t = (rx * d2y - ry * d2x) / det;
    let u = (rx * d1y - ry * d1x) / det;
    let eps = 1e-9;
    t > eps && t < 1.0 - eps && u > -eps && u < 1.0 + eps
}

/// Enumerate the true LOS path (when unobstructed) and one single-bounce path
/// per wall whose reflection point lies on the finite segment with both legs
/// clear of the other walls.
pub fn ground_truth_paths(scene: &Scene, ue: &Pose) -> Vec<PathTruth> {
    let mut paths = Vec::new();
    let pa = &scene.pa.position;
    let up = &ue.position;

    let los_blocked = scene
        .walls
        .iter()
        .any(|w| segment_blocks(pa, up, &w.endpoint_a, &w.endpoint_b));
    if !los_blocked && pa.distance(up) > 1e-9 {
        paths.push(PathTruth {
            kind: PathKind::Los,
            aod_global: pa.direction_to(up),
            aoa_global: up.direction_to(pa),
            length: pa.distance(up),
            rsp: None,
        });
    }

    for (idx, wall) in scene.walls.iter().enumerate() {
        let va = mirror_anchor(pa, wall);
        let Ok(rsp) = reflection_point(pa, &va, up) else {
            continue;
        };
        if !wall.contains_projected(&rsp, 1e-9) {
            continue;
        }
        let legs_blocked = scene.walls.iter().enumerate().any(|(j, other)| {
            j != idx
                && (segment_blocks(pa, &rsp, &other.endpoint_a, &other.endpoint_b)
                    || segment_blocks(&rsp, up, &other.endpoint_a, &other.endpoint_b))
        });
        if legs_blocked {
            continue;
        }
        paths.push(PathTruth {
            kind: PathKind::SingleBounce { wall: idx },
            aod_global: pa.direction_to(&rsp),
            aoa_global: up.direction_to(&va),
            length: va.distance(up),
            rsp: Some(rsp),
        });
    }
    paths
}
