//! Topology and delay model.
//!
//! `owd(p→q) = circuitous(p,q) · asym(p→q) · dist(p,q) / (speed · c)
//!             + jitter + access(p) + access(q)`
//!
//! Per-pair factors and per-message draws come from counter-keyed ChaCha
//! streams, so a sample depends only on `(seed, from, to, msg_index)`.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{GeoPoint, LocalPlane, Metric};

/// Light speed, km/ms, rounded to 3·10⁵ km/s so that 2/3 c is 200 km/ms.
pub const LIGHT_KM_PER_MS: f64 = 300.0;

pub type NodeId = u32;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("duplicate node id {0}")]
    DuplicateNode(NodeId),
    #[error("topology line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("invalid parameter: {0}")]
    Param(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AccessType {
    #[default]
    Wired,
    Wifi,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimNode {
    pub id: NodeId,
    pub location: GeoPoint,
    #[serde(default)]
    pub access: AccessType,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Jitter {
    None,
    Exponential { mean_ms: f64 },
    /// Parameters of the underlying normal, in ln(ms).
    Lognormal { mu: f64, sigma: f64 },
}

impl Jitter {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Jitter::None => 0.0,
            Jitter::Exponential { mean_ms } if mean_ms > 0.0 => {
                Exp::new(1.0 / mean_ms).expect("positive rate").sample(rng)
            }
            Jitter::Exponential { .. } => 0.0,
            Jitter::Lognormal { mu, sigma } => LogNormal::new(mu, sigma).expect("valid lognormal").sample(rng),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DelayModelParams {
    /// Fraction of c.
    pub speed_factor: f64,
    pub jitter: Jitter,
    /// One direction of each pair is stretched by U[1, asymmetry_max].
    pub asymmetry_max: f64,
    /// Each pair's path is stretched by U[1, circuitous_max].
    pub circuitous_max: f64,
    /// Fixed access delay per wired endpoint, ms.
    pub wired_access_ms: f64,
}

impl Default for DelayModelParams {
    fn default() -> Self {
        Self {
            speed_factor: 2.0 / 3.0,
            jitter: Jitter::Exponential { mean_ms: 2.0 },
            asymmetry_max: 1.3,
            circuitous_max: 1.5,
            wired_access_ms: 0.0,
        }
    }
}

impl DelayModelParams {
    /// Delays exactly proportional to distance.
    pub fn noiseless() -> Self {
        Self { jitter: Jitter::None, asymmetry_max: 1.0, circuitous_max: 1.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.speed_factor > 0.0 && self.speed_factor <= 1.0) {
            return Err(SimError::Param(format!("speed_factor {} outside (0, 1]", self.speed_factor)));
        }
        if !(self.asymmetry_max >= 1.0) || !(self.circuitous_max >= 1.0) {
            return Err(SimError::Param("stretch factors must be ≥ 1".into()));
        }
        if !(self.wired_access_ms >= 0.0) {
            return Err(SimError::Param("wired_access_ms must be ≥ 0".into()));
        }
        match self.jitter {
            Jitter::Exponential { mean_ms } if !(mean_ms >= 0.0) => Err(SimError::Param("jitter mean must be ≥ 0".into())),
            Jitter::Lognormal { sigma, .. } if !(sigma >= 0.0) => Err(SimError::Param("lognormal sigma must be ≥ 0".into())),
            _ => Ok(()),
        }
    }

    pub fn km_per_ms(&self) -> f64 {
        self.speed_factor * LIGHT_KM_PER_MS
    }
}

/// 802.11 contention model for one channel access.
///
/// Each attempt draws a uniform backoff from the current contention window
/// (starting at `cw_min`, doubling per collision up to `cw_max`). The
/// attempt collides when any competing station picks the same slot,
/// probability `1 − (1 − 1/W)^m`; a collision also wastes
/// `collision_slots`. After `max_retries` retries the frame goes through.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Wifi80211Params {
    pub slot_us: f64,
    pub gateway_prop_us: f64,
    pub competing_stations: u32,
    pub cw_min: u32,
    pub cw_max: u32,
    pub max_retries: u32,
    pub collision_slots: u32,
}

impl Default for Wifi80211Params {
    fn default() -> Self {
        Self {
            slot_us: 20.0,
            gateway_prop_us: 1.0,
            competing_stations: 4,
            cw_min: 16,
            cw_max: 1024,
            max_retries: 7,
            collision_slots: 50,
        }
    }
}

/// One access delay sample, ms.
pub fn wifi_access_delay<R: Rng + ?Sized>(params: &Wifi80211Params, rng: &mut R) -> f64 {
    let mut slots: u64 = 0;
    let mut window = params.cw_min.max(1);
    for attempt in 0..=params.max_retries {
        slots += rng.gen_range(0..window) as u64;
        let p_collide = 1.0 - (1.0 - 1.0 / window as f64).powi(params.competing_stations as i32);
        if attempt == params.max_retries || !rng.gen_bool(p_collide.clamp(0.0, 1.0)) {
            break;
        }
        slots += params.collision_slots as u64;
        window = (window * 2).min(params.cw_max.max(1));
    }
    (slots as f64 * params.slot_us + params.gateway_prop_us) / 1000.0
}

/// How node distances are measured.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistanceMode {
    #[default]
    GreatCircle,
    /// Straight-line distance in a gnomonic plane about `center`.
    Planar { center: GeoPoint },
}

impl DistanceMode {
    pub fn metric(&self) -> Metric {
        match *self {
            DistanceMode::GreatCircle => Metric::GreatCircle,
            DistanceMode::Planar { center } => Metric::Planar(LocalPlane::new(center)),
        }
    }
}

/// Fixed stretch factors of an unordered node pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairFactors {
    pub circuitous: f64,
    /// Multiplier for the `lo → hi` and `hi → lo` directions.
    pub asym_lo_hi: f64,
    pub asym_hi_lo: f64,
}

#[derive(Debug, Clone)]
pub struct SimTopology {
    nodes: Vec<SimNode>,
    index: HashMap<NodeId, usize>,
    pub delay: DelayModelParams,
    pub wifi: Wifi80211Params,
    pub distance: DistanceMode,
    metric: Metric,
    pub seed: u64,
}

const TAG_PAIR: u64 = 0x5041_4952;
const TAG_MSG: u64 = 0x4d53_4721;

/// SplitMix64 finalizer.
pub(crate) fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub(crate) fn mix_all(parts: &[u64]) -> u64 {
    parts.iter().fold(0u64, |acc, p| mix(acc ^ mix(*p)))
}

impl SimTopology {
    pub fn new(
        nodes: Vec<SimNode>,
        delay: DelayModelParams,
        wifi: Wifi80211Params,
        distance: DistanceMode,
        seed: u64,
    ) -> Result<Self, SimError> {
        delay.validate()?;
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if index.insert(n.id, i).is_some() {
                return Err(SimError::DuplicateNode(n.id));
            }
        }
        Ok(Self { metric: distance.metric(), nodes, index, delay, wifi, distance, seed })
    }

    pub fn nodes(&self) -> &[SimNode] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> Result<&SimNode, SimError> {
        self.index.get(&id).map(|&i| &self.nodes[i]).ok_or(SimError::UnknownNode(id))
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn distance_km(&self, a: NodeId, b: NodeId) -> Result<f64, SimError> {
        Ok(self.metric.distance_km(self.node(a)?.location, self.node(b)?.location))
    }

    pub fn pair_factors(&self, a: NodeId, b: NodeId) -> PairFactors {
        let (lo, hi) = (a.min(b), a.max(b));
        let mut rng = ChaCha8Rng::seed_from_u64(mix_all(&[self.seed, TAG_PAIR, lo as u64, hi as u64]));
        let circuitous = if self.delay.circuitous_max > 1.0 { rng.gen_range(1.0..=self.delay.circuitous_max) } else { 1.0 };
        let skew = if self.delay.asymmetry_max > 1.0 { rng.gen_range(1.0..=self.delay.asymmetry_max) } else { 1.0 };
        let (asym_lo_hi, asym_hi_lo) = if rng.gen_bool(0.5) { (skew, 1.0) } else { (1.0, skew) };
        PairFactors { circuitous, asym_lo_hi, asym_hi_lo }
    }

    /// Deterministic propagation component of `from → to`, ms.
    pub fn propagation_ms(&self, from: NodeId, to: NodeId) -> Result<f64, SimError> {
        let dist = self.distance_km(from, to)?;
        let f = self.pair_factors(from, to);
        let asym = if from <= to { f.asym_lo_hi } else { f.asym_hi_lo };
        Ok(f.circuitous * asym * dist / self.delay.km_per_ms())
    }

    /// One-way delay sample for message `msg_index` on `from → to`, ms.
    pub fn sample_owd(&self, from: NodeId, to: NodeId, msg_index: u64) -> Result<f64, SimError> {
        let prop = self.propagation_ms(from, to)?;
        Ok(self.sample_with_propagation(self.node(from)?, self.node(to)?, prop, msg_index))
    }

    /// [`Self::sample_owd`] with the propagation term supplied by a caller
    /// that has it cached.
    pub(crate) fn sample_with_propagation(&self, src: &SimNode, dst: &SimNode, prop: f64, msg_index: u64) -> f64 {
        let (from, to) = (src.id, dst.id);
        let mut rng = ChaCha8Rng::seed_from_u64(mix_all(&[self.seed, TAG_MSG, from as u64, to as u64, msg_index]));
        let mut owd = prop + self.delay.jitter.sample(&mut rng);
        for end in [src, dst] {
            owd += match end.access {
                AccessType::Wired => self.delay.wired_access_ms,
                AccessType::Wifi => wifi_access_delay(&self.wifi, &mut rng),
            };
        }
        owd
    }
}

/// Free function form of [`SimTopology::sample_owd`].
pub fn sample_owd(topology: &SimTopology, from: NodeId, to: NodeId, msg_index: u64) -> Result<f64, SimError> {
    topology.sample_owd(from, to, msg_index)
}

/// Parses a topology file: one `node_id lat lon access_type` record per
/// line, separated by whitespace or commas; `#` starts a comment;
/// access type is `WIRED` or `WIFI` (case-insensitive) and may be omitted.
pub fn parse_topology(text: &str) -> Result<Vec<SimNode>, SimError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |reason: &str| SimError::Parse { line: i + 1, reason: reason.into() };
        let fields: Vec<&str> = line.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty()).collect();
        if !(3..=4).contains(&fields.len()) {
            return Err(err("expected `node_id lat lon [access_type]`"));
        }
        let id: NodeId = fields[0].parse().map_err(|_| err("bad node id"))?;
        let lat: f64 = fields[1].parse().map_err(|_| err("bad latitude"))?;
        let lon: f64 = fields[2].parse().map_err(|_| err("bad longitude"))?;
        let location = GeoPoint::new(lat, lon).map_err(|e| err(&e.to_string()))?;
        let access = match fields.get(3).map(|s| s.to_ascii_uppercase()) {
            None => AccessType::Wired,
            Some(s) if s == "WIRED" => AccessType::Wired,
            Some(s) if s == "WIFI" => AccessType::Wifi,
            Some(_) => return Err(err("access type must be WIRED or WIFI")),
        };
        out.push(SimNode { id, location, access });
    }
    Ok(out)
}

/// Inverse of [`parse_topology`].
pub fn format_topology(nodes: &[SimNode]) -> String {
    nodes
        .iter()
        .map(|n| {
            let access = match n.access {
                AccessType::Wired => "WIRED",
                AccessType::Wifi => "WIFI",
            };
            format!("{} {} {} {}\n", n.id, n.location.lat(), n.location.lon(), access)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn topo(delay: DelayModelParams, a: GeoPoint, b: GeoPoint, access_b: AccessType) -> SimTopology {
        SimTopology::new(
            vec![SimNode { id: 1, location: a, access: AccessType::Wired }, SimNode { id: 2, location: b, access: access_b }],
            delay,
            Wifi80211Params::default(),
            DistanceMode::GreatCircle,
            42,
        )
        .unwrap()
    }

    #[test]
    fn thousand_km_is_five_ms() {
        let a = GeoPoint::new(0.0, 0.0).unwrap();
        let b = a.destination(90.0, 1000.0);
        let t = topo(DelayModelParams::noiseless(), a, b, AccessType::Wired);
        assert!((t.sample_owd(1, 2, 0).unwrap() - 5.0).abs() < 1e-9);
    }

    #[test]
    fn deterministic_and_positive() {
        let a = GeoPoint::new(40.0, -100.0).unwrap();
        let t = topo(DelayModelParams::default(), a, a.destination(10.0, 300.0), AccessType::Wired);
        for i in 0..100 {
            let x = t.sample_owd(1, 2, i).unwrap();
            assert_eq!(x, t.sample_owd(1, 2, i).unwrap());
            assert!(x > 0.0);
        }
        assert!(matches!(t.sample_owd(1, 9, 0), Err(SimError::UnknownNode(9))));
    }

    #[test]
    fn wifi_endpoint_adds_delay() {
        let a = GeoPoint::new(40.0, -100.0).unwrap();
        let b = a.destination(10.0, 300.0);
        let wired = topo(DelayModelParams::default(), a, b, AccessType::Wired);
        let wifi = topo(DelayModelParams::default(), a, b, AccessType::Wifi);
        for i in 0..100 {
            assert!(wifi.sample_owd(1, 2, i).unwrap() > wired.sample_owd(1, 2, i).unwrap());
        }
    }

    #[test]
    fn wifi_contention_trend() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let quiet = Wifi80211Params { competing_stations: 0, ..Default::default() };
        let busy = Wifi80211Params::default();
        let n = 100_000;
        let mean = |p: &Wifi80211Params, rng: &mut ChaCha8Rng| (0..n).map(|_| wifi_access_delay(p, rng)).sum::<f64>() / n as f64;
        let (mq, mb) = (mean(&quiet, &mut rng), mean(&busy, &mut rng));
        assert!(mb > mq, "{mb} {mq}");
        // No contention: one draw from the minimal window, mean 7.5 slots.
        assert!((mq - (7.5 * 0.020 + 0.001)).abs() < 0.002, "{mq}");
        let min = (0..10_000).map(|_| wifi_access_delay(&busy, &mut rng)).fold(f64::INFINITY, f64::min);
        assert!(min >= 0.001 - 1e-12);
    }

    #[test]
    fn topology_file_round_trip() {
        let text = "# id lat lon access\n1 45.5 -73.6 WIRED\n2, 40.7, -74.0, wifi\n3 34.0 -118.2\n";
        let nodes = parse_topology(text).unwrap();
        assert_eq!(nodes.len(), 3);
        assert_eq!(nodes[1].access, AccessType::Wifi);
        assert_eq!(parse_topology(&format_topology(&nodes)).unwrap(), nodes);
        assert!(matches!(parse_topology("1 95 0"), Err(SimError::Parse { line: 1, .. })));
        assert!(matches!(parse_topology("1 5 0 LTE"), Err(SimError::Parse { .. })));
    }
}
