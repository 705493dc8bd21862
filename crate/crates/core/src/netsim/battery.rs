//! Generated test batteries: near-equilateral verifier triangles with
//! inside/outside clients, and SLV assertion sets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::experiment::{classify_position, Position, SlvCase, SlvExperimentConfig, SlvVerifierNode, TriangleConfig};
use super::model::{AccessType, NodeId, SimNode};
use crate::geometry::{great_circle_km, GeoPoint, LocalPlane, PlanePoint};
use crate::manager::{select_triangle, RegisteredVerifier, VerifierRegistry};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BatterySpec {
    pub triangles: usize,
    /// Evaluated clients per triangle, half inside and half outside.
    pub clients_per_triangle: usize,
    /// Separate ground-truth nodes per triangle, half inside.
    pub calibration_per_triangle: usize,
    pub region_center: GeoPoint,
    /// Triangle centroids fall within this distance of the region centre.
    pub region_radius_km: f64,
    /// Triangle area equals that of a circle with radius in this range.
    pub equivalent_radius_km: (f64, f64),
    pub angle_deg: (f64, f64),
    pub margin_fraction: f64,
    /// Outside clients lie within this many mean side lengths of the triangle.
    pub outside_reach: f64,
    /// Give inside clients (evaluated and ground truth) WiFi access.
    pub wifi_inside: bool,
    pub seed: u64,
}

impl Default for BatterySpec {
    fn default() -> Self {
        Self {
            triangles: 5,
            clients_per_triangle: 40,
            calibration_per_triangle: 20,
            region_center: GeoPoint::new(39.0, -98.0).expect("valid"),
            region_radius_km: 1200.0,
            equivalent_radius_km: (100.0, 400.0),
            angle_deg: (50.0, 70.0),
            margin_fraction: 0.1,
            outside_reach: 1.0,
            wifi_inside: false,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Battery {
    pub nodes: Vec<SimNode>,
    pub triangles: Vec<TriangleConfig>,
}

fn random_point_in_disc<R: Rng>(rng: &mut R, center: GeoPoint, radius_km: f64) -> GeoPoint {
    let r = radius_km * rng.gen::<f64>().sqrt();
    center.destination(rng.gen_range(0.0..360.0), r)
}

/// Triangle with interior angles in `angle_deg` and the given area, centred
/// on the plane origin and randomly rotated.
fn plane_triangle<R: Rng>(rng: &mut R, angle_deg: (f64, f64), area_km2: f64) -> [PlanePoint; 3] {
    let (alpha, beta) = loop {
        let a: f64 = rng.gen_range(angle_deg.0..=angle_deg.1);
        let b: f64 = rng.gen_range(angle_deg.0..=angle_deg.1);
        let g = 180.0 - a - b;
        if (angle_deg.0..=angle_deg.1).contains(&g) {
            break (a.to_radians(), b.to_radians());
        }
    };
    let gamma = std::f64::consts::PI - alpha - beta;
    // Law of sines with scale k: AB = k sin γ, AC = k sin β.
    let k = (2.0 * area_km2 / (gamma.sin() * beta.sin() * alpha.sin())).sqrt();
    let (ab, ac) = (k * gamma.sin(), k * beta.sin());
    let pts = [(0.0, 0.0), (ab, 0.0), (ac * alpha.cos(), ac * alpha.sin())];
    let (cx, cy) = ((pts[0].0 + pts[1].0 + pts[2].0) / 3.0, (pts[0].1 + pts[1].1 + pts[2].1) / 3.0);
    let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let (s, c) = theta.sin_cos();
    pts.map(|(x, y)| {
        let (x, y) = (x - cx, y - cy);
        PlanePoint::new(c * x - s * y, s * x + c * y)
    })
}

/// Generates the CPV battery. Every client is checked with the same
/// position classifier `run_experiment` uses, so none lands in the margin band.
pub fn generate_battery(spec: &BatterySpec) -> Battery {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut nodes = Vec::new();
    let mut triangles = Vec::new();
    let mut next_id: NodeId = 1;
    let mut push = |nodes: &mut Vec<SimNode>, location: GeoPoint, access: AccessType| {
        let id = next_id;
        next_id += 1;
        nodes.push(SimNode { id, location, access });
        id
    };
    for t in 0..spec.triangles {
        let center = random_point_in_disc(&mut rng, spec.region_center, spec.region_radius_km);
        let plane = LocalPlane::new(center);
        let r = rng.gen_range(spec.equivalent_radius_km.0..=spec.equivalent_radius_km.1);
        let tri_p = plane_triangle(&mut rng, spec.angle_deg, std::f64::consts::PI * r * r);
        let tri_g = tri_p.map(|p| plane.unproject(p));
        let vertices = tri_g.map(|g| push(&mut nodes, g, AccessType::Wired));

        let mean_side = (tri_p[0].dist(tri_p[1]) + tri_p[1].dist(tri_p[2]) + tri_p[2].dist(tri_p[0])) / 3.0;
        let (min_x, max_x) = tri_p.iter().fold((f64::MAX, f64::MIN), |(lo, hi), p| (lo.min(p.x), hi.max(p.x)));
        let (min_y, max_y) = tri_p.iter().fold((f64::MAX, f64::MIN), |(lo, hi), p| (lo.min(p.y), hi.max(p.y)));
        let reach = spec.outside_reach * mean_side;

        let sample = |rng: &mut ChaCha8Rng, want: Position| -> GeoPoint {
            loop {
                let p = match want {
                    Position::Inside => {
                        let (r1, r2): (f64, f64) = (rng.gen(), rng.gen());
                        let s = r1.sqrt();
                        let (w0, w1, w2) = (1.0 - s, s * (1.0 - r2), s * r2);
                        PlanePoint::new(
                            w0 * tri_p[0].x + w1 * tri_p[1].x + w2 * tri_p[2].x,
                            w0 * tri_p[0].y + w1 * tri_p[1].y + w2 * tri_p[2].y,
                        )
                    }
                    _ => PlanePoint::new(rng.gen_range(min_x - reach..max_x + reach), rng.gen_range(min_y - reach..max_y + reach)),
                };
                let g = plane.unproject(p);
                if classify_position(&tri_g, g, spec.margin_fraction) == want {
                    return g;
                }
            }
        };

        let inside_access = if spec.wifi_inside { AccessType::Wifi } else { AccessType::Wired };
        let mut clients = Vec::with_capacity(spec.clients_per_triangle);
        for i in 0..spec.clients_per_triangle {
            let want = if i % 2 == 0 { Position::Inside } else { Position::Outside };
            let g = sample(&mut rng, want);
            let access = if want == Position::Inside { inside_access } else { AccessType::Wired };
            clients.push(push(&mut nodes, g, access));
        }
        let mut calibration_nodes = Vec::with_capacity(spec.calibration_per_triangle);
        for i in 0..spec.calibration_per_triangle {
            let want = if i % 2 == 0 { Position::Inside } else { Position::Outside };
            let g = sample(&mut rng, want);
            let access = if want == Position::Inside { inside_access } else { AccessType::Wired };
            calibration_nodes.push(push(&mut nodes, g, access));
        }
        triangles.push(TriangleConfig {
            id: format!("t{t:02}"),
            vertices,
            clients: Some(clients),
            calibration_nodes,
            middlebox: None,
        });
    }
    Battery { nodes, triangles }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SlvBatterySpec {
    pub region_center: GeoPoint,
    /// Verifiers sit on a jittered grid of this many rows and columns.
    pub grid: (usize, usize),
    pub spacing_km: f64,
    pub cases: usize,
    /// False assertions place the server this far from the asserted point.
    pub displacement_km: (f64, f64),
    /// Assertions are only drawn where the selected verifier triangle has
    /// no side longer than this. Keeping it below the smallest displacement
    /// means every false server is geometrically outside each covering circle.
    pub max_side_km: f64,
    pub seed: u64,
}

impl Default for SlvBatterySpec {
    fn default() -> Self {
        Self {
            region_center: GeoPoint::new(39.0, -98.0).expect("valid"),
            grid: (5, 7),
            spacing_km: 400.0,
            cases: 200,
            displacement_km: (1500.0, 3000.0),
            max_side_km: 1000.0,
            seed: 1,
        }
    }
}

/// Generates verifiers and half-true / half-false server assertions.
/// Node ids start at `first_id`.
pub fn generate_slv_battery(spec: &SlvBatterySpec, first_id: NodeId) -> (Vec<SimNode>, SlvExperimentConfig) {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let plane = LocalPlane::new(spec.region_center);
    let mut nodes = Vec::new();
    let mut verifiers = Vec::new();
    let mut next_id = first_id;
    let (rows, cols) = spec.grid;
    let (w, h) = ((cols - 1) as f64 * spec.spacing_km, (rows - 1) as f64 * spec.spacing_km);
    for r in 0..rows {
        for c in 0..cols {
            let jitter = spec.spacing_km * 0.25;
            let p = PlanePoint::new(
                c as f64 * spec.spacing_km - w / 2.0 + rng.gen_range(-jitter..=jitter),
                r as f64 * spec.spacing_km - h / 2.0 + rng.gen_range(-jitter..=jitter),
            );
            let location = plane.unproject(p);
            nodes.push(SimNode { id: next_id, location, access: AccessType::Wired });
            verifiers.push(SlvVerifierNode { id: verifiers.len() as u16 + 1, node: next_id });
            next_id += 1;
        }
    }
    let registry = VerifierRegistry::new(
        verifiers
            .iter()
            .zip(&nodes)
            .map(|(v, n)| RegisteredVerifier { id: v.id, location: n.location, address: String::new(), health: Default::default() })
            .collect(),
    );
    let mut cases = Vec::with_capacity(spec.cases);
    for i in 0..spec.cases {
        let asserted = loop {
            let p = PlanePoint::new(rng.gen_range(-w / 2.0..w / 2.0), rng.gen_range(-h / 2.0..h / 2.0));
            let g = plane.unproject(p);
            if let Ok(t) = select_triangle(g, &registry) {
                let v = t.vertices;
                let longest = (0..3).map(|i| great_circle_km(v[i], v[(i + 1) % 3])).fold(0.0, f64::max);
                if longest <= spec.max_side_km {
                    break g;
                }
            }
        };
        let true_assertion = i % 2 == 0;
        let location = if true_assertion {
            asserted
        } else {
            asserted.destination(rng.gen_range(0.0..360.0), rng.gen_range(spec.displacement_km.0..=spec.displacement_km.1))
        };
        nodes.push(SimNode { id: next_id, location, access: AccessType::Wired });
        cases.push(SlvCase {
            id: format!("s{i:03}"),
            server: next_id,
            asserted,
            domain: Some(format!("site{}.test", i / 2)),
            true_assertion,
        });
        next_id += 1;
    }
    (nodes, SlvExperimentConfig { verifiers, cases, ..SlvExperimentConfig::default() })
}
