//! Simulated transports: the relay path of one CPV session, background
//! baseline exchanges, and RTT probes to servers.

use std::collections::BTreeMap;
use std::net::IpAddr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{mix_all, NodeId, SimError, SimTopology};
use crate::geometry::Baseline;
use crate::mp::{RawRelay, RelayChannel, RelayError, Role};
use crate::puzzle::{sample_solve_attempts, simulate_middlebox, MiddleboxParams, MiddleboxSample};
use crate::slv::{ProbeError, ProbeLayer, ProbeSample, Prober};
use crate::wire::BaselineTracker;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PuzzleStrategy {
    SolveLocally,
    ForwardToClient,
}

/// Middlebox compute and the number of cheating clients it serves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MiddleboxLoad {
    pub concurrent_clients: u32,
    pub cores: u32,
    /// Hashes per millisecond per core.
    pub core_hash_rate: f64,
}

impl Default for MiddleboxLoad {
    fn default() -> Self {
        Self { concurrent_clients: 1, cores: 4, core_hash_rate: 10_000.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AdversaryConfig {
    #[default]
    None,
    /// Adds `added_ms` to every client leg to and from the listed verifiers.
    DelayInflate { target_legs: Vec<Role>, added_ms: f64 },
    /// A relay at `middlebox_node` answers for a client really located at
    /// `client_true_node` (or, when unset, for every outside client).
    MiddleboxRelay {
        middlebox_node: NodeId,
        #[serde(default)]
        client_true_node: Option<NodeId>,
        strategy: PuzzleStrategy,
        #[serde(default)]
        load: MiddleboxLoad,
    },
}

impl AdversaryConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        match self {
            AdversaryConfig::DelayInflate { added_ms, .. } if !(*added_ms >= 0.0) => {
                Err(SimError::Param("delay inflation must be non-negative".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            AdversaryConfig::None => "NONE",
            AdversaryConfig::DelayInflate { .. } => "DELAY_INFLATE",
            AdversaryConfig::MiddleboxRelay { .. } => "MIDDLEBOX_RELAY",
        }
    }
}

/// Client-side puzzle cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PuzzleModel {
    pub difficulty: u8,
    /// Client hashes per millisecond.
    pub client_hash_rate: f64,
}

impl Default for PuzzleModel {
    fn default() -> Self {
        Self { difficulty: 8, client_hash_rate: 2_000.0 }
    }
}

/// Where relayed timestamps actually travel.
#[derive(Debug, Clone)]
pub enum ClientPath {
    Direct(NodeId),
    DelayInflated { client: NodeId, legs: Vec<Role>, added_ms: f64 },
    ForwardToClient { middlebox: NodeId, client: NodeId },
    /// `queue_ms[3·round + turn]` is the middlebox's puzzle queueing plus
    /// solving delay for that turn.
    SolveLocally { middlebox: NodeId, queue_ms: Vec<f64> },
}

/// Runs the middlebox queue for `rounds` rounds and returns, per
/// concurrent client, its delays indexed by `3·round + turn`.
pub fn middlebox_queue(load: &MiddleboxLoad, puzzle: &PuzzleModel, rounds: u32, interval_ms: f64, seed: u64) -> Vec<Vec<f64>> {
    let clients = load.concurrent_clients.max(1);
    let mut p = MiddleboxParams::new(clients, puzzle.difficulty, load.cores.max(1), load.core_hash_rate, rounds, interval_ms);
    p.seed = seed;
    let mut out = vec![vec![0.0; (rounds * p.turns_per_round) as usize]; clients as usize];
    for MiddleboxSample { round, turn, client_id, added_delay_ms } in simulate_middlebox(&p) {
        out[client_id as usize][(round * p.turns_per_round + turn) as usize] = added_delay_ms;
    }
    out
}

/// One CPV session in virtual time.
pub struct SimSession<'t> {
    topo: &'t SimTopology,
    verifiers: [NodeId; 3],
    path: ClientPath,
    puzzle: PuzzleModel,
    key: u64,
    counter: u64,
    now_ms: f64,
    rng: ChaCha8Rng,
    legs: Vec<(NodeId, NodeId, f64)>,
    /// Spacing between the three turns of a round.
    pub turn_spacing_ms: f64,
}

impl<'t> SimSession<'t> {
    pub const DEFAULT_TURN_SPACING_MS: f64 = 20.0;

    pub fn new(topo: &'t SimTopology, verifiers: [NodeId; 3], path: ClientPath, puzzle: PuzzleModel, key: u64) -> Self {
        Self {
            topo,
            verifiers,
            path,
            puzzle,
            key,
            counter: 0,
            now_ms: 0.0,
            rng: ChaCha8Rng::seed_from_u64(mix_all(&[topo.seed, key, 0x50_5a_5a])),
            legs: Vec::new(),
            turn_spacing_ms: Self::DEFAULT_TURN_SPACING_MS,
        }
    }

    fn owd(&mut self, from: NodeId, to: NodeId) -> Result<f64, RelayError> {
        self.counter += 1;
        let msg = mix_all(&[self.key, self.counter]);
        let closed = |e: SimError| RelayError::Closed(e.to_string());
        // A session touches at most five nodes, so a linear scan is enough.
        let hit = self.legs.iter().find(|(f, t, _)| *f == from && *t == to).map(|l| l.2);
        let prop = match hit {
            Some(p) => p,
            None => {
                let p = self.topo.propagation_ms(from, to).map_err(closed)?;
                self.legs.push((from, to, p));
                p
            }
        };
        let (src, dst) = (self.topo.node(from).map_err(closed)?, self.topo.node(to).map_err(closed)?);
        Ok(self.topo.sample_with_propagation(src, dst, prop, msg))
    }

    fn client_solve_ms(&mut self) -> f64 {
        if self.puzzle.difficulty == 0 {
            return 0.0;
        }
        sample_solve_attempts(self.puzzle.difficulty, &mut self.rng) as f64 / self.puzzle.client_hash_rate
    }

    /// Delay from `origin` emitting until the solved timestamp leaves the
    /// relaying host.
    fn down_and_solve(&mut self, origin: Role, seq: u32) -> Result<f64, RelayError> {
        let v = self.verifiers[origin.index()];
        match &self.path {
            &ClientPath::Direct(c) => Ok(self.owd(v, c)? + self.client_solve_ms()),
            ClientPath::DelayInflated { client, legs, added_ms } => {
                let extra = if legs.contains(&origin) { *added_ms } else { 0.0 };
                let client = *client;
                Ok(self.owd(v, client)? + extra + self.client_solve_ms())
            }
            &ClientPath::ForwardToClient { middlebox, client } => {
                Ok(self.owd(v, middlebox)? + self.owd(middlebox, client)? + self.client_solve_ms())
            }
            ClientPath::SolveLocally { middlebox, queue_ms } => {
                let i = 3 * seq as usize + origin.index();
                let q = queue_ms.get(i).or(queue_ms.last()).copied().unwrap_or(0.0);
                let middlebox = *middlebox;
                Ok(self.owd(v, middlebox)? + q)
            }
        }
    }

    fn up(&mut self, observer: Role) -> Result<f64, RelayError> {
        let v = self.verifiers[observer.index()];
        match &self.path {
            &ClientPath::Direct(c) => self.owd(c, v),
            ClientPath::DelayInflated { client, legs, added_ms } => {
                let extra = if legs.contains(&observer) { *added_ms } else { 0.0 };
                let client = *client;
                Ok(self.owd(client, v)? + extra)
            }
            &ClientPath::ForwardToClient { middlebox, client } => Ok(self.owd(client, middlebox)? + self.owd(middlebox, v)?),
            &ClientPath::SolveLocally { middlebox, .. } => self.owd(middlebox, v),
        }
    }
}

impl RelayChannel for SimSession<'_> {
    fn relay_turn(&mut self, origin: Role, seq: u32) -> Result<Vec<RawRelay>, RelayError> {
        let sent = self.now_ms;
        let at_relay = sent + self.down_and_solve(origin, seq)?;
        let mut out = Vec::with_capacity(2);
        for observer in origin.others() {
            out.push(RawRelay { observer, send_ts: sent, recv_ts: at_relay + self.up(observer)? });
        }
        self.now_ms += self.turn_spacing_ms;
        Ok(out)
    }

    fn pause(&mut self, ms: f64) {
        self.now_ms += ms;
    }
}

/// Direct verifier-to-verifier exchanges filling a full baseline window;
/// returns the window minimum of min(forward, reverse).
pub fn measure_baseline(topo: &SimTopology, a: NodeId, b: NodeId, key: u64) -> Result<f64, SimError> {
    let mut tracker = BaselineTracker::default();
    for i in 0..BaselineTracker::WINDOW as u64 {
        let fwd = topo.sample_owd(a, b, mix_all(&[key, i, 0]))?;
        let rev = topo.sample_owd(b, a, mix_all(&[key, i, 1]))?;
        tracker.record_exchange(fwd, rev, 0.0, i * 6_000);
    }
    Ok(tracker.value().expect("window is full"))
}

/// Baseline of a verifier triangle: x = AB, y = BC, z = CA.
pub fn measure_triangle_baseline(topo: &SimTopology, v: [NodeId; 3], key: u64) -> Result<Baseline, SimError> {
    Ok(Baseline {
        x: measure_baseline(topo, v[0], v[1], mix_all(&[key, 1]))?,
        y: measure_baseline(topo, v[1], v[2], mix_all(&[key, 2]))?,
        z: measure_baseline(topo, v[2], v[0], mix_all(&[key, 3]))?,
    })
}

/// RTT probes in the simulator. Verifier ids and server addresses map to
/// topology nodes; the HTTP layer adds a fixed server processing time.
pub struct SimProber<'t> {
    pub topo: &'t SimTopology,
    pub verifier_nodes: BTreeMap<u16, NodeId>,
    pub server_nodes: BTreeMap<IpAddr, NodeId>,
    pub http_processing_ms: f64,
    pub key: u64,
}

impl Prober for SimProber<'_> {
    fn probe(&mut self, verifier: u16, server: IpAddr, layer: ProbeLayer, count: usize) -> Result<Vec<ProbeSample>, ProbeError> {
        let failed = |reason: String| ProbeError::ProbeFailed { verifier, reason };
        let v = *self.verifier_nodes.get(&verifier).ok_or_else(|| failed("unknown verifier".into()))?;
        let s = *self.server_nodes.get(&server).ok_or_else(|| failed(format!("{server} unreachable")))?;
        (0..count as u64)
            .map(|i| {
                let idx = |dir: u64| mix_all(&[self.key, verifier as u64, layer as u64, i, dir]);
                let rtt = self.topo.sample_owd(v, s, idx(0)).map_err(|e| failed(e.to_string()))?
                    + self.topo.sample_owd(s, v, idx(1)).map_err(|e| failed(e.to_string()))?
                    + if layer == ProbeLayer::HttpRequestResponse { self.http_processing_ms } else { 0.0 };
                Ok(ProbeSample { layer, rtt_ms: rtt, verifier, timestamp_ms: i * 100 })
            })
            .collect()
    }
}

/// Stable synthetic address for a simulated server node.
pub fn sim_server_ip(node: NodeId) -> IpAddr {
    let b = node.to_be_bytes();
    IpAddr::from([10, b[1], b[2], b[3]])
}
