//! Minimum-Pairs one-way delay estimation.
//!
//! Each verifier in turn emits an authenticated timestamp which the client
//! forwards to the other two. That yields six verifier→client→verifier
//! delays. For every verifier pair only the smaller direction is kept, and
//! the three pair sums are solved for the client's smaller OWD to each
//! verifier.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Position of a verifier within a verification triangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    A,
    B,
    C,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::A, Role::B, Role::C];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Role> {
        Role::ALL.get(i).copied()
    }

    /// The two roles other than `self`, in A, B, C order.
    pub fn others(self) -> [Role; 2] {
        match self {
            Role::A => [Role::B, Role::C],
            Role::B => [Role::A, Role::C],
            Role::C => [Role::A, Role::B],
        }
    }
}

/// Network-wide verifier identifier (wire `origin_id`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VerifierId(pub u16);

impl std::fmt::Display for VerifierId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "v{}", self.0)
    }
}

/// One relayed timestamp as seen by a non-originating verifier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelayObservation {
    pub origin: Role,
    pub observer: Role,
    /// Origin clock, ms.
    pub send_ts: f64,
    /// Observer clock, ms.
    pub recv_ts: f64,
    /// Origin-minus-observer clock offset, added to the raw delay.
    pub clock_offset_correction: f64,
    pub seq: u32,
}

impl RelayObservation {
    pub fn corrected_delay(&self) -> f64 {
        self.recv_ts - self.send_ts + self.clock_offset_correction
    }
}

/// The six verifier→client→verifier delays of one round, ms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairwiseDelaySet {
    pub a_to_b: f64,
    pub a_to_c: f64,
    pub b_to_a: f64,
    pub b_to_c: f64,
    pub c_to_a: f64,
    pub c_to_b: f64,
}

impl PairwiseDelaySet {
    pub fn uniform(d: f64) -> Self {
        Self { a_to_b: d, a_to_c: d, b_to_a: d, b_to_c: d, c_to_a: d, c_to_b: d }
    }

    pub fn get(&self, origin: Role, observer: Role) -> Option<f64> {
        match (origin, observer) {
            (Role::A, Role::B) => Some(self.a_to_b),
            (Role::A, Role::C) => Some(self.a_to_c),
            (Role::B, Role::A) => Some(self.b_to_a),
            (Role::B, Role::C) => Some(self.b_to_c),
            (Role::C, Role::A) => Some(self.c_to_a),
            (Role::C, Role::B) => Some(self.c_to_b),
            _ => None,
        }
    }

    fn slot(&mut self, origin: Role, observer: Role) -> Option<&mut f64> {
        match (origin, observer) {
            (Role::A, Role::B) => Some(&mut self.a_to_b),
            (Role::A, Role::C) => Some(&mut self.a_to_c),
            (Role::B, Role::A) => Some(&mut self.b_to_a),
            (Role::B, Role::C) => Some(&mut self.b_to_c),
            (Role::C, Role::A) => Some(&mut self.c_to_a),
            (Role::C, Role::B) => Some(&mut self.c_to_b),
            _ => None,
        }
    }
}

/// Per-pair minima: `a+b`, `a+c`, `b+c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairSums {
    pub ab: f64,
    pub ac: f64,
    pub bc: f64,
}

/// Smaller client↔verifier OWDs for A, B, C.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OwdEstimate {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub valid: bool,
}

impl OwdEstimate {
    pub fn delays(&self) -> (f64, f64, f64) {
        (self.a, self.b, self.c)
    }
}

/// Keeps the smaller direction of each verifier pair.
pub fn min_pairs(set: &PairwiseDelaySet) -> PairSums {
    PairSums {
        ab: set.a_to_b.min(set.b_to_a),
        ac: set.a_to_c.min(set.c_to_a),
        bc: set.b_to_c.min(set.c_to_b),
    }
}

/// Solves `a+b = ab`, `a+c = ac`, `b+c = bc`. A negative component makes
/// the estimate invalid; it is never clamped.
pub fn solve_owd(sums: PairSums) -> OwdEstimate {
    let a = (sums.ab + sums.ac - sums.bc) / 2.0;
    let b = (sums.ab + sums.bc - sums.ac) / 2.0;
    let c = (sums.ac + sums.bc - sums.ab) / 2.0;
    let valid = [a, b, c].iter().all(|v| v.is_finite() && *v >= 0.0);
    OwdEstimate { a, b, c, valid }
}

/// Clock offset corrections applied during a round, indexed
/// `[observer][origin]`; held constant for the whole round.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct OffsetTable(pub [[f64; 3]; 3]);

impl OffsetTable {
    pub fn correction(&self, observer: Role, origin: Role) -> f64 {
        self.0[observer.index()][origin.index()]
    }

    pub fn set(&mut self, observer: Role, origin: Role, value: f64) {
        self.0[observer.index()][origin.index()] = value;
    }
}

/// A relay as reported by the transport, before offset correction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawRelay {
    pub observer: Role,
    pub send_ts: f64,
    pub recv_ts: f64,
}

/// Transport failures for one turn.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum RelayError {
    /// A relayed frame failed its MAC at `observer`.
    #[error("relayed timestamp from {origin:?} failed authentication at {observer:?}")]
    Tampered { origin: Role, observer: Role },
    #[error("session transport closed: {0}")]
    Closed(String),
}

/// Carries one verifier's timestamp through the client to the other two.
pub trait RelayChannel {
    /// Runs `origin`'s turn. Relays that did not arrive within the
    /// per-message timeout are simply absent from the returned list.
    fn relay_turn(&mut self, origin: Role, seq: u32) -> Result<Vec<RawRelay>, RelayError>;

    /// Waits between rounds (virtual time in simulation).
    fn pause(&mut self, _ms: f64) {}

    /// Offsets to apply for the next round.
    fn offsets(&self) -> OffsetTable {
        OffsetTable::default()
    }
}

/// Why a round produced no usable delay set.
#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
pub enum RoundFailure {
    #[error("round incomplete: {missing} relays missing")]
    Incomplete { missing: usize },
    #[error("relayed timestamp tampered ({origin:?} -> {observer:?})")]
    Tampered { origin: Role, observer: Role },
    #[error("negative corrected delay {origin:?} -> {observer:?}")]
    NegativeDelay { origin: Role, observer: Role },
    #[error("transport closed")]
    Closed,
}

/// Builds the six-delay set from corrected observations. Duplicate
/// observations of the same leg keep the first one.
pub fn assemble_round(observations: &[RelayObservation]) -> Result<PairwiseDelaySet, RoundFailure> {
    let mut set = PairwiseDelaySet::uniform(f64::NAN);
    let mut seen = [[false; 3]; 3];
    for obs in observations {
        let d = obs.corrected_delay();
        if !(d >= 0.0) {
            return Err(RoundFailure::NegativeDelay { origin: obs.origin, observer: obs.observer });
        }
        let (o, r) = (obs.origin.index(), obs.observer.index());
        if seen[o][r] {
            continue;
        }
        if let Some(slot) = set.slot(obs.origin, obs.observer) {
            *slot = d;
            seen[o][r] = true;
        }
    }
    let present = seen.iter().flatten().filter(|s| **s).count();
    if present < 6 {
        return Err(RoundFailure::Incomplete { missing: 6 - present });
    }
    Ok(set)
}

/// Drives one round in fixed A, B, C turn order.
pub fn run_mp_round<C: RelayChannel + ?Sized>(channel: &mut C, seq: u32) -> Result<PairwiseDelaySet, RoundFailure> {
    let offsets = channel.offsets();
    let mut observations = Vec::with_capacity(6);
    for origin in Role::ALL {
        let relays = channel.relay_turn(origin, seq).map_err(|e| match e {
            RelayError::Tampered { origin, observer } => RoundFailure::Tampered { origin, observer },
            RelayError::Closed(_) => RoundFailure::Closed,
        })?;
        for r in relays {
            if r.observer == origin {
                continue;
            }
            observations.push(RelayObservation {
                origin,
                observer: r.observer,
                send_ts: r.send_ts,
                recv_ts: r.recv_ts,
                clock_offset_correction: offsets.correction(r.observer, origin),
                seq,
            });
        }
    }
    assemble_round(&observations)
}

/// Half the round trip, the baseline estimator MP is compared against.
pub fn rtt_half(forward: f64, reverse: f64) -> f64 {
    (forward + reverse) / 2.0
}
