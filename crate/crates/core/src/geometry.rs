//! Geographic primitives and the delay-space triangle arithmetic used by the
//! presence (triangle) and server (circle) containment tests.
//!
//! Delay-space triangles are abstract: their sides are one-way delays in
//! milliseconds, so areas are in ms². Nothing here maps delays to distances.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Mean Earth radius used throughout (spherical model).
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Absolute tolerance for area comparisons, in ms².
pub const AREA_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("latitude {0} outside [-90, 90]")]
    Latitude(f64),
    #[error("longitude {0} outside [-180, 180]")]
    Longitude(f64),
    #[error("negative side length {0}")]
    NegativeSide(f64),
    #[error("verifier triangle is collinear")]
    Collinear,
    #[error("baseline delay {0} ms is not strictly positive")]
    NonPositiveBaseline(f64),
}

/// A point on the Earth in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    lat: f64,
    lon: f64,
}

impl GeoPoint {
    /// Validates bounds and canonicalizes longitude into (-180, 180].
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeometryError> {
        if !(-90.0..=90.0).contains(&lat) || lat.is_nan() {
            return Err(GeometryError::Latitude(lat));
        }
        if !(-180.0..=180.0).contains(&lon) || lon.is_nan() {
            return Err(GeometryError::Longitude(lon));
        }
        let lon = if lon == -180.0 { 180.0 } else { lon };
        Ok(Self { lat, lon })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }

    /// Unit vector in Earth-centred coordinates.
    pub fn to_unit_vector(self) -> [f64; 3] {
        let (phi, lam) = (self.lat.to_radians(), self.lon.to_radians());
        [phi.cos() * lam.cos(), phi.cos() * lam.sin(), phi.sin()]
    }

    fn from_unit_vector(v: [f64; 3]) -> Self {
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        let lat = (v[2] / norm).clamp(-1.0, 1.0).asin().to_degrees();
        let lon = v[1].atan2(v[0]).to_degrees();
        Self::new(lat, lon).expect("unit vector maps to valid coordinates")
    }

    /// Point reached travelling `dist_km` along the great circle with the
    /// given initial bearing (degrees clockwise from north).
    pub fn destination(self, bearing_deg: f64, dist_km: f64) -> Self {
        let delta = dist_km / EARTH_RADIUS_KM;
        let theta = bearing_deg.to_radians();
        let (phi1, lam1) = (self.lat.to_radians(), self.lon.to_radians());
        let phi2 = (phi1.sin() * delta.cos() + phi1.cos() * delta.sin() * theta.cos())
            .clamp(-1.0, 1.0)
            .asin();
        let lam2 = lam1
            + (theta.sin() * delta.sin() * phi1.cos()).atan2(delta.cos() - phi1.sin() * phi2.sin());
        let mut lon = lam2.to_degrees();
        while lon > 180.0 {
            lon -= 360.0;
        }
        while lon <= -180.0 {
            lon += 360.0;
        }
        Self::new(phi2.to_degrees(), lon).expect("destination stays on the sphere")
    }

    /// Spherical centroid of a set of points.
    pub fn centroid(points: &[GeoPoint]) -> Self {
        let mut acc = [0.0; 3];
        for p in points {
            let v = p.to_unit_vector();
            for i in 0..3 {
                acc[i] += v[i];
            }
        }
        Self::from_unit_vector(acc)
    }
}

/// Great-circle distance on a sphere of radius [`EARTH_RADIUS_KM`].
pub fn great_circle_km(p: GeoPoint, q: GeoPoint) -> f64 {
    let (phi1, phi2) = (p.lat.to_radians(), q.lat.to_radians());
    let dphi = phi2 - phi1;
    let dlam = (q.lon - p.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlam / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// A point in a local planar frame, kilometres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanePoint {
    pub x: f64,
    pub y: f64,
}

impl PlanePoint {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(self, other: PlanePoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Gnomonic projection about a fixed centre. Great circles map to straight
/// lines, so spherical-triangle containment is preserved exactly.
#[derive(Debug, Clone, Copy)]
pub struct LocalPlane {
    center: GeoPoint,
}

impl LocalPlane {
    pub fn new(center: GeoPoint) -> Self {
        Self { center }
    }

    pub fn center(&self) -> GeoPoint {
        self.center
    }

    /// Projects `p`; `None` when `p` lies on or beyond the horizon.
    pub fn project(&self, p: GeoPoint) -> Option<PlanePoint> {
        let (phi0, lam0) = (self.center.lat.to_radians(), self.center.lon.to_radians());
        let (phi, lam) = (p.lat.to_radians(), p.lon.to_radians());
        let cos_c = phi0.sin() * phi.sin() + phi0.cos() * phi.cos() * (lam - lam0).cos();
        if cos_c <= 1e-9 {
            return None;
        }
        let x = EARTH_RADIUS_KM * phi.cos() * (lam - lam0).sin() / cos_c;
        let y = EARTH_RADIUS_KM * (phi0.cos() * phi.sin() - phi0.sin() * phi.cos() * (lam - lam0).cos())
            / cos_c;
        Some(PlanePoint::new(x, y))
    }

    /// Inverse of [`LocalPlane::project`].
    pub fn unproject(&self, p: PlanePoint) -> GeoPoint {
        let (phi0, lam0) = (self.center.lat.to_radians(), self.center.lon.to_radians());
        let rho = p.x.hypot(p.y);
        if rho == 0.0 {
            return self.center;
        }
        let c = (rho / EARTH_RADIUS_KM).atan();
        let (sin_c, cos_c) = c.sin_cos();
        let phi = (cos_c * phi0.sin() + p.y * sin_c * phi0.cos() / rho).clamp(-1.0, 1.0).asin();
        let lam = lam0 + (p.x * sin_c).atan2(rho * phi0.cos() * cos_c - p.y * phi0.sin() * sin_c);
        let mut lon = lam.to_degrees();
        while lon > 180.0 {
            lon -= 360.0;
        }
        while lon <= -180.0 {
            lon += 360.0;
        }
        GeoPoint { lat: phi.to_degrees(), lon }
    }
}

/// How ground distances are measured. `Planar` measures straight-line
/// distance in a gnomonic frame, which keeps Euclidean identities exact for
/// noiseless experiments; points beyond the frame's horizon fall back to
/// great-circle distance.
#[derive(Debug, Clone, Copy, Default)]
pub enum Metric {
    #[default]
    GreatCircle,
    Planar(LocalPlane),
}

impl Metric {
    pub fn distance_km(&self, p: GeoPoint, q: GeoPoint) -> f64 {
        match self {
            Metric::GreatCircle => great_circle_km(p, q),
            Metric::Planar(plane) => match (plane.project(p), plane.project(q)) {
                (Some(a), Some(b)) => a.dist(b),
                _ => great_circle_km(p, q),
            },
        }
    }
}

/// Whether `p` is inside (or on the boundary of) the spherical triangle whose
/// edges are the great-circle arcs between `tri`'s vertices.
pub fn spherical_triangle_contains(tri: &[GeoPoint; 3], p: GeoPoint) -> bool {
    let v: Vec<[f64; 3]> = tri.iter().map(|g| g.to_unit_vector()).collect();
    let q = p.to_unit_vector();
    let orient = triple(v[0], v[1], v[2]);
    if orient.abs() < 1e-15 {
        return false;
    }
    // Reject the antipodal copy of the triangle.
    let centre = [v[0][0] + v[1][0] + v[2][0], v[0][1] + v[1][1] + v[2][1], v[0][2] + v[1][2] + v[2][2]];
    if dot(centre, q) <= 0.0 {
        return false;
    }
    let s = orient.signum();
    s * triple(v[0], v[1], q) >= 0.0 && s * triple(v[1], v[2], q) >= 0.0 && s * triple(v[2], v[0], q) >= 0.0
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn triple(a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> f64 {
    let cross = [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
    dot(cross, c)
}

/// Planar area of the triangle with great-circle side lengths, km².
pub fn geographic_area_km2(tri: &[GeoPoint; 3]) -> f64 {
    let s = [
        great_circle_km(tri[0], tri[1]),
        great_circle_km(tri[1], tri[2]),
        great_circle_km(tri[2], tri[0]),
    ];
    match heron_area(s[0], s[1], s[2]) {
        Ok(TriangleArea::Area(a)) => a,
        _ => 0.0,
    }
}

/// Result of Heron's formula on three side lengths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TriangleArea {
    Area(f64),
    /// The sides violate the triangle inequality.
    Degenerate,
}

impl TriangleArea {
    pub fn value(self) -> Option<f64> {
        match self {
            TriangleArea::Area(a) => Some(a),
            TriangleArea::Degenerate => None,
        }
    }
}

/// Area of a triangle given its side lengths.
///
/// Uses the cancellation-safe ordering of Heron's formula (sides sorted
/// descending). Violations of the triangle inequality within a relative
/// 1e-12 of the longest side count as collinear (area 0).
pub fn heron_area(s1: f64, s2: f64, s3: f64) -> Result<TriangleArea, GeometryError> {
    for s in [s1, s2, s3] {
        if s < 0.0 || s.is_nan() {
            return Err(GeometryError::NegativeSide(s));
        }
    }
    let mut s = [s1, s2, s3];
    s.sort_by(|a, b| b.total_cmp(a));
    let [a, b, c] = s;
    let slack = c - (a - b);
    if slack < -1e-12 * a.max(1.0) {
        return Ok(TriangleArea::Degenerate);
    }
    let product = (a + (b + c)) * slack.max(0.0) * (c + (a - b)) * (a + (b - c));
    Ok(TriangleArea::Area(0.25 * product.max(0.0).sqrt()))
}

/// Which side of a delay triangle breaks the triangle inequality, if any.
fn violating_side(sides: [f64; 3]) -> Option<usize> {
    let longest = (0..3).max_by(|&i, &j| sides[i].total_cmp(&sides[j]))?;
    let others: f64 = sides.iter().enumerate().filter(|(i, _)| *i != longest).map(|(_, s)| s).sum();
    (sides[longest] - others > 1e-12 * sides[longest].max(1.0)).then_some(longest)
}

/// The verification triangle: verifier positions plus the smaller direct
/// one-way delays between each verifier pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriangleSpec {
    pub vertices: [GeoPoint; 3],
    pub baseline: Baseline,
}

/// Inter-verifier baseline delays: `x` for A–B, `y` for B–C, `z` for A–C.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl TriangleSpec {
    pub fn new(vertices: [GeoPoint; 3], baseline: Baseline) -> Result<Self, GeometryError> {
        for v in [baseline.x, baseline.y, baseline.z] {
            if !(v > 0.0) {
                return Err(GeometryError::NonPositiveBaseline(v));
            }
        }
        let v = vertices.map(|g| g.to_unit_vector());
        if triple(v[0], v[1], v[2]).abs() < 1e-12 {
            return Err(GeometryError::Collinear);
        }
        Ok(Self { vertices, baseline })
    }
}

/// How the operator-facing ε (ms) becomes an area margin (ms²).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsilonMode {
    /// ε is per-side delay slack: margin = area(x+ε/2, y+ε/2, z+ε/2) − area(x, y, z).
    #[default]
    SideSlack,
    /// ε is added to the outer area as-is.
    RawArea,
}

/// Outcome of one containment check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Pass,
    Fail,
    Invalid,
}

impl Condition {
    pub fn is_pass(self) -> bool {
        self == Condition::Pass
    }
}

/// Smaller-OWD triple from the client to verifiers A, B and C.
pub type ClientDelays = (f64, f64, f64);

/// Area margin that ε contributes for a given outer triangle.
pub fn epsilon_area(baseline: Baseline, epsilon_ms: f64, mode: EpsilonMode) -> Option<f64> {
    match mode {
        EpsilonMode::RawArea => Some(epsilon_ms),
        EpsilonMode::SideSlack => {
            let h = epsilon_ms / 2.0;
            let outer = heron_area(baseline.x, baseline.y, baseline.z).ok()?.value()?;
            let inflated = heron_area(baseline.x + h, baseline.y + h, baseline.z + h).ok()?.value()?;
            Some(inflated - outer)
        }
    }
}

/// The presence condition:
/// `area(x,a,b) + area(y,b,c) + area(z,c,a) ≤ area(x,y,z) + ε`.
///
/// A degenerate outer triangle, or a sub-triangle whose baseline side exceeds
/// the sum of the two client delays (client faster than the direct path), is
/// `Invalid`. A sub-triangle where a client delay exceeds the baseline plus
/// the other client delay places the client beyond a vertex: `Fail`.
pub fn cpv_condition(est: ClientDelays, baseline: Baseline, epsilon_ms: f64, mode: EpsilonMode) -> Condition {
    let (a, b, c) = est;
    if [a, b, c, baseline.x, baseline.y, baseline.z].iter().any(|v| !(*v >= 0.0)) {
        return Condition::Invalid;
    }
    let outer = match heron_area(baseline.x, baseline.y, baseline.z) {
        Ok(TriangleArea::Area(v)) if v > AREA_TOLERANCE => v,
        _ => return Condition::Invalid,
    };
    let Some(margin) = epsilon_area(baseline, epsilon_ms, mode) else {
        return Condition::Invalid;
    };
    let mut total = 0.0;
    for sides in [[baseline.x, a, b], [baseline.y, b, c], [baseline.z, c, a]] {
        match violating_side(sides) {
            Some(0) => return Condition::Invalid,
            Some(_) => return Condition::Fail,
            None => {}
        }
        match heron_area(sides[0], sides[1], sides[2]) {
            Ok(TriangleArea::Area(v)) => total += v,
            _ => return Condition::Invalid,
        }
    }
    if total <= outer + margin + AREA_TOLERANCE {
        Condition::Pass
    } else {
        Condition::Fail
    }
}

/// Delay-space form of the circle-on-diameter test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CircleRule {
    /// Thales: inside iff `d1² + d2² ≤ (d12 + ε)²`.
    #[default]
    RightAngle,
    /// `d1 + d2 ≤ √2·d12 + ε`.
    SumForm,
}

/// Whether the server is inside the circle whose diameter joins the two
/// verifiers, judged from one-way delays.
pub fn circle_contains(owd_v1s: f64, owd_v2s: f64, owd_v1v2: f64, epsilon_ms: f64, rule: CircleRule) -> bool {
    match rule {
        CircleRule::RightAngle => {
            let reach = owd_v1v2 + epsilon_ms;
            owd_v1s * owd_v1s + owd_v2s * owd_v2s <= reach * reach + AREA_TOLERANCE
        }
        CircleRule::SumForm => owd_v1s + owd_v2s <= std::f64::consts::SQRT_2 * owd_v1v2 + epsilon_ms + 1e-12,
    }
}

/// Signed area of a planar triangle (positive when counter-clockwise).
pub fn signed_area(p: PlanePoint, q: PlanePoint, r: PlanePoint) -> f64 {
    0.5 * ((q.x - p.x) * (r.y - p.y) - (r.x - p.x) * (q.y - p.y))
}

/// Distance from `p` to the segment `ab`.
pub fn segment_distance(p: PlanePoint, a: PlanePoint, b: PlanePoint) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return p.dist(a);
    }
    let t = (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0);
    p.dist(PlanePoint::new(a.x + t * dx, a.y + t * dy))
}

/// Orientation test: `p` strictly inside or on the planar triangle.
pub fn plane_triangle_contains(tri: &[PlanePoint; 3], p: PlanePoint) -> bool {
    let d1 = signed_area(tri[0], tri[1], p);
    let d2 = signed_area(tri[1], tri[2], p);
    let d3 = signed_area(tri[2], tri[0], p);
    let has_neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
    let has_pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
    !(has_neg && has_pos)
}
