//! Batch experiments: per-triangle calibration, CPV runs over simulated
//! clients, SLV assertion checks, and JSON-lines reports.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, BufRead, Write};
use std::net::IpAddr;

use ed25519_dalek::SigningKey;
use serde::{Deserialize, Serialize};

use super::channel::{
    measure_baseline, measure_triangle_baseline, middlebox_queue, sim_server_ip, AdversaryConfig, ClientPath, PuzzleModel,
    PuzzleStrategy, SimProber, SimSession,
};
use super::model::{mix_all, DelayModelParams, DistanceMode, NodeId, SimError, SimNode, SimTopology, Wifi80211Params};
use crate::cpv::{
    calibrate, evaluate_fa_fr, verify_presence, CalibrationError, CalibrationGrid, CalibrationParams, Confusion, Decision,
    ExperimentRecord, FaFr, GroundTruthNode, RoundTrace, VerifyOptions, MIN_CALIBRATION_ROUNDS,
};
use crate::geometry::{
    plane_triangle_contains, segment_distance, CircleRule, EpsilonMode, GeoPoint, LocalPlane, TriangleSpec,
};
use crate::manager::{Manager, ManagerConfig, RegisteredVerifier, ResultsLog, SlvBackend, VerifierRegistry};
use crate::mp::{min_pairs, run_mp_round, solve_owd, RelayChannel};
use crate::slv::{probe_server, PinStore, ProbeError, ProbeEstimate, SlvCheck, SlvConfig, SlvOutcome, SlvRequest};

/// Where a point lies relative to a triangle, with a margin band excluded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Position {
    Inside,
    Outside,
    /// Closer to its nearest side than `margin × that side's length`.
    Excluded,
}

/// Classifies `p` in a gnomonic plane about the triangle's centroid.
/// Gnomonic projection maps great-circle sides to straight lines, so
/// containment is exact; the margin distance is measured in the plane.
pub fn classify_position(tri: &[GeoPoint; 3], p: GeoPoint, margin_fraction: f64) -> Position {
    let plane = LocalPlane::new(GeoPoint::centroid(tri));
    let (Some(a), Some(b), Some(c)) = (plane.project(tri[0]), plane.project(tri[1]), plane.project(tri[2])) else {
        return Position::Excluded;
    };
    let Some(q) = plane.project(p) else {
        // Beyond the projection horizon: a hemisphere away from the triangle.
        return Position::Outside;
    };
    let v = [a, b, c];
    let (mut nearest, mut side_len) = (f64::INFINITY, 0.0);
    for i in 0..3 {
        let (s, e) = (v[i], v[(i + 1) % 3]);
        let d = segment_distance(q, s, e);
        if d < nearest {
            nearest = d;
            side_len = s.dist(e);
        }
    }
    if nearest < margin_fraction * side_len {
        Position::Excluded
    } else if plane_triangle_contains(&v, q) {
        Position::Inside
    } else {
        Position::Outside
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriangleConfig {
    pub id: String,
    /// Verifier nodes in role order A, B, C.
    pub vertices: [NodeId; 3],
    /// Clients to evaluate. `None` means every node that is not a vertex,
    /// calibration node, or middlebox of some triangle.
    #[serde(default)]
    pub clients: Option<Vec<NodeId>>,
    #[serde(default)]
    pub calibration_nodes: Vec<NodeId>,
    /// Overrides the adversary's middlebox node for this triangle.
    #[serde(default)]
    pub middlebox: Option<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationConfig {
    /// Rounds recorded per ground-truth node; defaults to `3·n`, at least
    /// the calibration minimum.
    pub rounds_per_node: Option<u32>,
    pub epsilons_ms: Option<Vec<f64>>,
    pub taus: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlvVerifierNode {
    pub id: u16,
    pub node: NodeId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlvCase {
    pub id: String,
    pub server: NodeId,
    pub asserted: GeoPoint,
    #[serde(default)]
    pub domain: Option<String>,
    /// Whether the server really is at the asserted location.
    pub true_assertion: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SlvExperimentConfig {
    pub verifiers: Vec<SlvVerifierNode>,
    pub cases: Vec<SlvCase>,
    pub epsilon_ms: f64,
    pub rule: CircleRule,
    pub samples_per_layer: usize,
    pub http_processing_ms: f64,
}

impl Default for SlvExperimentConfig {
    fn default() -> Self {
        Self {
            verifiers: Vec::new(),
            cases: Vec::new(),
            epsilon_ms: 5.0,
            rule: CircleRule::default(),
            samples_per_layer: 3,
            http_processing_ms: 0.0,
        }
    }
}

fn default_name() -> String {
    "experiment".into()
}
fn default_margin() -> f64 {
    0.1
}
fn default_interval() -> f64 {
    300.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub seed: u64,
    pub nodes: Vec<SimNode>,
    #[serde(default)]
    pub delay: DelayModelParams,
    #[serde(default)]
    pub wifi: Wifi80211Params,
    #[serde(default)]
    pub distance: DistanceMode,
    #[serde(default)]
    pub triangles: Vec<TriangleConfig>,
    #[serde(default)]
    pub adversary: AdversaryConfig,
    /// Used as-is when `calibration` is absent; its `n` is the iteration
    /// count calibration searches at otherwise.
    #[serde(default = "CalibrationParams::demo_defaults")]
    pub params: CalibrationParams,
    #[serde(default)]
    pub calibration: Option<CalibrationConfig>,
    #[serde(default = "default_margin")]
    pub margin_fraction: f64,
    #[serde(default = "default_interval")]
    pub interval_ms: f64,
    #[serde(default)]
    pub epsilon_mode: EpsilonMode,
    #[serde(default)]
    pub puzzle: PuzzleModel,
    #[serde(default)]
    pub slv: Option<SlvExperimentConfig>,
}

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("invalid experiment: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("bad report line {line}: {reason}")]
    Report { line: usize, reason: String },
}

/// Published reference rates, carried in summaries for comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PublishedReference {
    pub false_accept_pct: f64,
    pub false_reject_pct: f64,
}

/// Reference CPV rates for a wired deployment at `n` iterations, where published.
pub fn cpv_reference(n: u32) -> Option<PublishedReference> {
    match n {
        600 => Some(PublishedReference { false_accept_pct: 1.0, false_reject_pct: 2.0 }),
        100 => Some(PublishedReference { false_accept_pct: 1.1, false_reject_pct: 2.0 }),
        10 => Some(PublishedReference { false_accept_pct: 2.1, false_reject_pct: 4.1 }),
        _ => None,
    }
}

/// Reference CPV rates with WiFi clients (upper bounds).
pub const CPV_WIFI_REFERENCE: PublishedReference = PublishedReference { false_accept_pct: 2.0, false_reject_pct: 4.0 };
/// Reference SLV rates.
pub const SLV_REFERENCE: PublishedReference = PublishedReference { false_accept_pct: 0.0, false_reject_pct: 2.4 };

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlvRecord {
    pub case_id: String,
    pub server_node: NodeId,
    pub true_assertion: bool,
    pub verifiers: Option<[u16; 3]>,
    pub passed: Option<bool>,
    pub outcome: Option<SlvOutcome>,
    pub reason: Option<String>,
}

impl SlvRecord {
    pub fn decision(&self) -> Decision {
        match self.passed {
            Some(true) => Decision::Accepted,
            Some(false) => Decision::Rejected,
            None => Decision::Indeterminate,
        }
    }
}

/// One line of a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReportLine {
    Header { name: String, seed: u64, adversary: String, n: u32, calibrated: bool },
    Calibration { triangle_id: String, params: CalibrationParams, separated: bool, confusion: Option<Confusion> },
    Skipped { triangle_id: String, reason: String },
    Cpv(ExperimentRecord),
    Slv(SlvRecord),
    Summary(Summary),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub cpv: Option<FaFr>,
    pub slv: Option<FaFr>,
    /// Clients dropped because they fell in the margin band.
    pub excluded: u32,
    pub skipped_triangles: u32,
    pub cpv_reference: Option<PublishedReference>,
    pub slv_reference: Option<PublishedReference>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentReport {
    pub lines: Vec<ReportLine>,
}

impl ExperimentReport {
    pub fn cpv_records(&self) -> impl Iterator<Item = &ExperimentRecord> {
        self.lines.iter().filter_map(|l| match l {
            ReportLine::Cpv(r) => Some(r),
            _ => None,
        })
    }

    pub fn slv_records(&self) -> impl Iterator<Item = &SlvRecord> {
        self.lines.iter().filter_map(|l| match l {
            ReportLine::Slv(r) => Some(r),
            _ => None,
        })
    }

    pub fn summary(&self) -> Option<&Summary> {
        self.lines.iter().rev().find_map(|l| match l {
            ReportLine::Summary(s) => Some(s),
            _ => None,
        })
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        for line in &self.lines {
            serde_json::to_writer(&mut out, line)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self, ExperimentError> {
        let mut lines = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed = serde_json::from_str(&line)
                .map_err(|e| ExperimentError::Report { line: i + 1, reason: e.to_string() })?;
            lines.push(parsed);
        }
        Ok(Self { lines })
    }
}

/// Recomputes rates over the CPV and SLV records of several reports.
pub fn aggregate(reports: &[ExperimentReport]) -> Summary {
    let cpv: Vec<_> = reports.iter().flat_map(|r| r.cpv_records()).collect();
    let slv: Vec<_> = reports.iter().flat_map(|r| r.slv_records()).collect();
    let slv_decisions: Vec<(bool, Decision)> = slv.iter().map(|r| (r.true_assertion, r.decision())).collect();
    let ns: BTreeSet<u32> = cpv.iter().map(|r| r.n).collect();
    let summaries = reports.iter().filter_map(|r| r.summary());
    let (excluded, skipped) = summaries.fold((0, 0), |(e, s), x| (e + x.excluded, s + x.skipped_triangles));
    Summary {
        cpv: (!cpv.is_empty()).then(|| evaluate_fa_fr(cpv.iter().map(|r| (r.true_inside, &r.outcome)))),
        slv: (!slv.is_empty()).then(|| evaluate_fa_fr(slv_decisions.iter().map(|(t, d)| (*t, d)))),
        excluded,
        skipped_triangles: skipped,
        cpv_reference: if ns.len() == 1 { ns.first().and_then(|n| cpv_reference(*n)) } else { None },
        slv_reference: (!slv.is_empty()).then_some(SLV_REFERENCE),
    }
}

/// Records `rounds` MP rounds on `channel` as calibration traces.
pub fn record_trace<C: RelayChannel + ?Sized>(
    channel: &mut C,
    baseline: crate::geometry::Baseline,
    rounds: u32,
    interval_ms: f64,
) -> Vec<RoundTrace> {
    (0..rounds)
        .map(|seq| {
            if seq > 0 {
                channel.pause(interval_ms);
            }
            let estimate = run_mp_round(channel, seq).ok().map(|set| solve_owd(min_pairs(&set)));
            RoundTrace { estimate, baseline }
        })
        .collect()
}

const TAG_BASELINE: u64 = 0xba5e;
const TAG_CALIB: u64 = 0xca1b;
const TAG_CLIENT: u64 = 0xc11e;
const TAG_QUEUE: u64 = 0x9e9e;
const TAG_SLV: u64 = 0x51f;

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        self.params.validate().map_err(|e| ExperimentError::Config(e.to_string()))?;
        self.adversary.validate()?;
        if !(0.0..0.5).contains(&self.margin_fraction) {
            return Err(ExperimentError::Config("margin_fraction must be in [0, 0.5)".into()));
        }
        if !(self.interval_ms >= 0.0) {
            return Err(ExperimentError::Config("interval_ms must be non-negative".into()));
        }
        Ok(())
    }

    fn path_for(&self, tri: &TriangleConfig, client: NodeId, slot: usize, queues: &[Vec<f64>]) -> ClientPath {
        match &self.adversary {
            AdversaryConfig::None => ClientPath::Direct(client),
            AdversaryConfig::DelayInflate { target_legs, added_ms } => {
                ClientPath::DelayInflated { client, legs: target_legs.clone(), added_ms: *added_ms }
            }
            AdversaryConfig::MiddleboxRelay { middlebox_node, strategy, .. } => {
                let middlebox = tri.middlebox.unwrap_or(*middlebox_node);
                match strategy {
                    PuzzleStrategy::ForwardToClient => ClientPath::ForwardToClient { middlebox, client },
                    PuzzleStrategy::SolveLocally => {
                        ClientPath::SolveLocally { middlebox, queue_ms: queues[slot % queues.len()].clone() }
                    }
                }
            }
        }
    }
}

/// Honest traces of one triangle's calibration nodes; margin-band nodes
/// are left out.
fn ground_truth(
    cfg: &ExperimentConfig,
    topo: &SimTopology,
    tri: &TriangleConfig,
    vertices: &[GeoPoint; 3],
    baseline: crate::geometry::Baseline,
    tkey: u64,
    cal: &CalibrationConfig,
) -> Result<Vec<GroundTruthNode>, ExperimentError> {
    let rounds = cal.rounds_per_node.unwrap_or((3 * cfg.params.n).max(MIN_CALIBRATION_ROUNDS as u32));
    let mut nodes = Vec::new();
    for &node in &tri.calibration_nodes {
        let inside = match classify_position(vertices, topo.node(node)?.location, cfg.margin_fraction) {
            Position::Inside => true,
            Position::Outside => false,
            Position::Excluded => continue,
        };
        // Ground truth is recorded honestly, without the adversary.
        let key = mix_all(&[tkey, TAG_CALIB, node as u64]);
        let mut s = SimSession::new(topo, tri.vertices, ClientPath::Direct(node), cfg.puzzle, key);
        let trace = record_trace(&mut s, baseline, rounds, cfg.interval_ms);
        nodes.push(GroundTruthNode { node_id: node.to_string(), inside, rounds: trace });
    }
    Ok(nodes)
}

/// Calibration traces of one triangle, as `run_experiment` records them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriangleTraces {
    pub triangle_id: String,
    #[serde(flatten)]
    pub node: GroundTruthNode,
}

/// The ground-truth traces `run_experiment` would calibrate each triangle
/// on (the config's `calibration` section, or its defaults). Degenerate
/// triangles contribute nothing.
pub fn record_ground_truth(cfg: &ExperimentConfig) -> Result<Vec<TriangleTraces>, ExperimentError> {
    cfg.validate()?;
    let topo = SimTopology::new(cfg.nodes.clone(), cfg.delay, cfg.wifi, cfg.distance, cfg.seed)?;
    let cal = cfg.calibration.clone().unwrap_or_default();
    let mut out = Vec::new();
    for (ti, tri) in cfg.triangles.iter().enumerate() {
        let [Ok(a), Ok(b), Ok(c)] = tri.vertices.map(|v| topo.node(v).map(|n| n.location)) else { continue };
        let vertices = [a, b, c];
        let tkey = mix_all(&[cfg.seed, ti as u64]);
        let baseline = measure_triangle_baseline(&topo, tri.vertices, mix_all(&[tkey, TAG_BASELINE]))?;
        if TriangleSpec::new(vertices, baseline).is_err() {
            continue;
        }
        for node in ground_truth(cfg, &topo, tri, &vertices, baseline, tkey, &cal)? {
            out.push(TriangleTraces { triangle_id: tri.id.clone(), node });
        }
    }
    Ok(out)
}

/// Runs the experiment. The report is a pure function of the config.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport, ExperimentError> {
    cfg.validate()?;
    let topo = SimTopology::new(cfg.nodes.clone(), cfg.delay, cfg.wifi, cfg.distance, cfg.seed)?;
    let mut lines = vec![ReportLine::Header {
        name: cfg.name.clone(),
        seed: cfg.seed,
        adversary: cfg.adversary.label().to_string(),
        n: cfg.params.n,
        calibrated: cfg.calibration.is_some(),
    }];
    let mut excluded = 0u32;
    let mut skipped = 0u32;
    let mut cpv_records = Vec::new();

    let reserved: BTreeSet<NodeId> = cfg
        .triangles
        .iter()
        .flat_map(|t| t.vertices.iter().chain(&t.calibration_nodes).chain(t.middlebox.iter()).copied())
        .chain(match &cfg.adversary {
            AdversaryConfig::MiddleboxRelay { middlebox_node, .. } => Some(*middlebox_node),
            _ => None,
        })
        .chain(cfg.slv.iter().flat_map(|s| {
            s.verifiers.iter().map(|v| v.node).chain(s.cases.iter().map(|c| c.server)).collect::<Vec<_>>()
        }))
        .collect();

    for (ti, tri) in cfg.triangles.iter().enumerate() {
        let mut skip = |lines: &mut Vec<ReportLine>, reason: String| {
            skipped += 1;
            lines.push(ReportLine::Skipped { triangle_id: tri.id.clone(), reason });
        };
        let vertices = match tri.vertices.map(|v| topo.node(v).map(|n| n.location)) {
            [Ok(a), Ok(b), Ok(c)] => [a, b, c],
            _ => {
                skip(&mut lines, "unknown vertex node".into());
                continue;
            }
        };
        let tkey = mix_all(&[cfg.seed, ti as u64]);
        let baseline = measure_triangle_baseline(&topo, tri.vertices, mix_all(&[tkey, TAG_BASELINE]))?;
        if let Err(e) = TriangleSpec::new(vertices, baseline) {
            skip(&mut lines, e.to_string());
            continue;
        }

        let queues = match &cfg.adversary {
            AdversaryConfig::MiddleboxRelay { strategy: PuzzleStrategy::SolveLocally, load, .. } => {
                // A simulated round spans its three turns plus the pause.
                let period = cfg.interval_ms + 3.0 * SimSession::DEFAULT_TURN_SPACING_MS;
                middlebox_queue(load, &cfg.puzzle, cfg.params.n, period, mix_all(&[tkey, TAG_QUEUE]))
            }
            _ => vec![Vec::new()],
        };

        let params = match &cfg.calibration {
            None => cfg.params,
            Some(cal) => {
                let nodes = ground_truth(cfg, &topo, tri, &vertices, baseline, tkey, cal)?;
                let mut grid = CalibrationGrid::with_n(cfg.params.n);
                grid.epsilon_mode = cfg.epsilon_mode;
                if let Some(e) = &cal.epsilons_ms {
                    grid.epsilons_ms = e.clone();
                }
                if let Some(t) = &cal.taus {
                    grid.taus = t.clone();
                }
                match calibrate(&nodes, &grid) {
                    Ok(p) => {
                        lines.push(ReportLine::Calibration {
                            triangle_id: tri.id.clone(),
                            params: p,
                            separated: true,
                            confusion: None,
                        });
                        p
                    }
                    Err(CalibrationError::Failed { best, confusion }) => {
                        lines.push(ReportLine::Calibration {
                            triangle_id: tri.id.clone(),
                            params: best,
                            separated: false,
                            confusion: Some(confusion),
                        });
                        best
                    }
                    Err(e @ CalibrationError::NoInsideNodes { .. }) => {
                        skip(&mut lines, e.to_string());
                        continue;
                    }
                }
            }
        };

        let clients: Vec<NodeId> = match &tri.clients {
            Some(c) => c.clone(),
            None => topo.nodes().iter().map(|n| n.id).filter(|id| !reserved.contains(id)).collect(),
        };
        let opts = VerifyOptions { interval_ms: cfg.interval_ms, epsilon_mode: cfg.epsilon_mode, ..Default::default() };
        for (slot, &client) in clients.iter().enumerate() {
            let true_inside = match classify_position(&vertices, topo.node(client)?.location, cfg.margin_fraction) {
                Position::Inside => true,
                Position::Outside => false,
                Position::Excluded => {
                    excluded += 1;
                    continue;
                }
            };
            let path = cfg.path_for(tri, client, slot, &queues);
            let key = mix_all(&[tkey, TAG_CLIENT, client as u64]);
            let mut session = SimSession::new(&topo, tri.vertices, path, cfg.puzzle, key);
            let result = verify_presence(&mut session, baseline, 0.0, &params, &opts)
                .map_err(|e| ExperimentError::Config(e.to_string()))?;
            let record = ExperimentRecord {
                node_id: client.to_string(),
                triangle_id: tri.id.clone(),
                true_inside,
                outcome: result.decision,
                pass_count: result.iterations_passed,
                valid_count: result.iterations_valid,
                n: params.n,
                epsilon_ms: params.epsilon_ms,
                tau: params.tau,
            };
            cpv_records.push(record.clone());
            lines.push(ReportLine::Cpv(record));
        }
    }

    let mut slv_records = Vec::new();
    if let Some(slv) = &cfg.slv {
        for r in run_slv(cfg, slv, &topo)? {
            slv_records.push(r.clone());
            lines.push(ReportLine::Slv(r));
        }
    }

    let slv_decisions: Vec<(bool, Decision)> = slv_records.iter().map(|r| (r.true_assertion, r.decision())).collect();
    lines.push(ReportLine::Summary(Summary {
        cpv: (!cpv_records.is_empty()).then(|| evaluate_fa_fr(cpv_records.iter().map(|r| (r.true_inside, &r.outcome)))),
        slv: (!slv_records.is_empty()).then(|| evaluate_fa_fr(slv_decisions.iter().map(|(t, d)| (*t, d)))),
        excluded,
        skipped_triangles: skipped,
        cpv_reference: (!cpv_records.is_empty()).then(|| cpv_reference(cfg.params.n)).flatten(),
        slv_reference: (!slv_records.is_empty()).then_some(SLV_REFERENCE),
    }));
    Ok(ExperimentReport { lines })
}

struct SimSlvBackend<'t> {
    prober: SimProber<'t>,
    samples_per_layer: usize,
    inter: BTreeMap<(u16, u16), f64>,
}

impl SlvBackend for SimSlvBackend<'_> {
    fn probe_all(&mut self, verifiers: &[RegisteredVerifier], server: IpAddr) -> Vec<Result<ProbeEstimate, ProbeError>> {
        verifiers.iter().map(|v| probe_server(&mut self.prober, v.id, server, self.samples_per_layer)).collect()
    }

    fn inter_verifier_owd(&mut self, a: u16, b: u16) -> Option<f64> {
        self.inter.get(&(a.min(b), a.max(b))).copied()
    }
}

fn run_slv(cfg: &ExperimentConfig, slv: &SlvExperimentConfig, topo: &SimTopology) -> Result<Vec<SlvRecord>, ExperimentError> {
    let mut registered = Vec::with_capacity(slv.verifiers.len());
    for v in &slv.verifiers {
        registered.push(RegisteredVerifier {
            id: v.id,
            location: topo.node(v.node)?.location,
            address: format!("sim:{}", v.node),
            health: Default::default(),
        });
    }
    let verifier_nodes: BTreeMap<u16, NodeId> = slv.verifiers.iter().map(|v| (v.id, v.node)).collect();
    let mut inter = BTreeMap::new();
    for (i, a) in slv.verifiers.iter().enumerate() {
        for b in &slv.verifiers[i + 1..] {
            let d = measure_baseline(topo, a.node, b.node, mix_all(&[cfg.seed, TAG_SLV, a.node as u64, b.node as u64]))?;
            inter.insert((a.id.min(b.id), a.id.max(b.id)), d);
        }
    }
    let mut backend = SimSlvBackend {
        prober: SimProber {
            topo,
            verifier_nodes,
            server_nodes: slv.cases.iter().map(|c| (sim_server_ip(c.server), c.server)).collect(),
            http_processing_ms: slv.http_processing_ms,
            key: mix_all(&[cfg.seed, TAG_SLV]),
        },
        samples_per_layer: slv.samples_per_layer,
        inter,
    };
    let config = ManagerConfig {
        slv: SlvConfig { epsilon_ms: slv.epsilon_ms, rule: slv.rule, metric: topo.metric() },
        ..Default::default()
    };
    let key = SigningKey::from_bytes(&mix_all(&[cfg.seed, TAG_SLV]).to_le_bytes().repeat(4).try_into().expect("32 bytes"));
    let mut manager = Manager::new(
        VerifierRegistry::new(registered),
        config,
        key,
        PinStore::in_memory(PinStore::DEFAULT_CELL_DEG),
        ResultsLog::in_memory(),
    )
    .with_seed(cfg.seed);

    let mut out = Vec::with_capacity(slv.cases.len());
    for (i, case) in slv.cases.iter().enumerate() {
        topo.node(case.server)?;
        let request = SlvRequest { server_ip: sim_server_ip(case.server), asserted: case.asserted, domain: case.domain.clone() };
        let response = manager
            .handle_slv_request(&request, &mut backend, i as u64 * 1_000)
            .map_err(|e| ExperimentError::Config(e.to_string()))?;
        out.push(match response {
            None => SlvRecord {
                case_id: case.id.clone(),
                server_node: case.server,
                true_assertion: case.true_assertion,
                verifiers: None,
                passed: None,
                outcome: None,
                reason: Some("no_coverage".into()),
            },
            Some(r) => SlvRecord {
                case_id: case.id.clone(),
                server_node: case.server,
                true_assertion: case.true_assertion,
                verifiers: Some(r.verifiers),
                passed: r.check.passed(),
                outcome: r.verdict.map(|v| v.outcome),
                reason: match r.check {
                    SlvCheck::Indeterminate(why) => Some(format!("{why:?}")),
                    SlvCheck::Checked { .. } => None,
                },
            },
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netsim::battery::{generate_battery, BatterySpec};

    fn tri() -> [GeoPoint; 3] {
        let c = GeoPoint::new(40.0, -100.0).unwrap();
        [c.destination(0.0, 300.0), c.destination(120.0, 300.0), c.destination(240.0, 300.0)]
    }

    #[test]
    fn classify_center_edge_and_far() {
        let t = tri();
        let c = GeoPoint::centroid(&t);
        assert_eq!(classify_position(&t, c, 0.1), Position::Inside);
        let mid = GeoPoint::centroid(&[t[0], t[1]]);
        assert_eq!(classify_position(&t, mid, 0.1), Position::Excluded);
        assert_eq!(classify_position(&t, c.destination(0.0, 1500.0), 0.1), Position::Outside);
        assert_eq!(classify_position(&t, c.destination(0.0, 15000.0), 0.1), Position::Outside);
    }

    fn small_config(seed: u64) -> ExperimentConfig {
        let b = generate_battery(&BatterySpec { triangles: 2, clients_per_triangle: 6, calibration_per_triangle: 4, seed, ..Default::default() });
        ExperimentConfig {
            name: "unit".into(),
            seed,
            nodes: b.nodes,
            delay: DelayModelParams::default(),
            wifi: Wifi80211Params::default(),
            distance: DistanceMode::GreatCircle,
            triangles: b.triangles,
            adversary: AdversaryConfig::None,
            params: CalibrationParams::new(5.0, 10, 0.7).unwrap(),
            calibration: Some(CalibrationConfig::default()),
            margin_fraction: 0.1,
            interval_ms: 300.0,
            epsilon_mode: EpsilonMode::SideSlack,
            puzzle: PuzzleModel::default(),
            slv: None,
        }
    }

    #[test]
    fn reports_are_deterministic_and_round_trip() {
        let cfg = small_config(3);
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a.to_jsonl(), b.to_jsonl());
        let parsed = ExperimentReport::read_jsonl(a.to_jsonl().as_bytes()).unwrap();
        assert_eq!(parsed, a);
        assert_eq!(a.cpv_records().count(), 12);
        let s = aggregate(&[a.clone()]);
        assert_eq!(Some(&s.cpv), a.summary().map(|x| &x.cpv));
    }

    #[test]
    fn degenerate_triangle_is_skipped() {
        let mut cfg = small_config(4);
        let v = cfg.triangles[0].vertices;
        let loc = cfg.nodes.iter().find(|n| n.id == v[0]).unwrap().location;
        for n in cfg.nodes.iter_mut().filter(|n| n.id == v[1] || n.id == v[2]) {
            n.location = loc;
        }
        cfg.delay = DelayModelParams::noiseless();
        let r = run_experiment(&cfg).unwrap();
        assert!(r.lines.iter().any(|l| matches!(l, ReportLine::Skipped { triangle_id, .. } if triangle_id == "t00")));
        assert!(r.cpv_records().all(|c| c.triangle_id != "t00"));
    }

    #[test]
    fn config_serde_round_trip() {
        let cfg = small_config(5);
        let json = serde_json::to_string(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
    }
}
