//! Client presence decisions: repeated MP rounds, the per-round triangle
//! condition, the τ vote, calibration of (ε, n, τ) from ground-truth nodes,
//! and false-accept / false-reject accounting.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{cpv_condition, Baseline, Condition, EpsilonMode};
use crate::mp::{min_pairs, run_mp_round, solve_owd, OwdEstimate, RelayChannel, RoundFailure};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CpvError {
    #[error("invalid calibration parameters: {0}")]
    InvalidParams(String),
}

/// The three tunables of a presence decision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationParams {
    pub epsilon_ms: f64,
    pub n: u32,
    pub tau: f64,
}

impl CalibrationParams {
    pub fn new(epsilon_ms: f64, n: u32, tau: f64) -> Result<Self, CpvError> {
        let p = Self { epsilon_ms, n, tau };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), CpvError> {
        if self.n < 1 {
            return Err(CpvError::InvalidParams("n must be at least 1".into()));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(CpvError::InvalidParams(format!("tau {} outside (0, 1]", self.tau)));
        }
        if !(self.epsilon_ms >= 0.0) {
            return Err(CpvError::InvalidParams(format!("epsilon {} is negative", self.epsilon_ms)));
        }
        Ok(())
    }

    /// Operational defaults used when no calibration has run: eight
    /// iterations, ε = 10 ms, τ = 0.7.
    pub fn demo_defaults() -> Self {
        Self { epsilon_ms: 10.0, n: 8, tau: 0.7 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Accepted,
    Rejected,
    Indeterminate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndeterminateReason {
    /// Fewer than ⌈n/2⌉ iterations produced a valid estimate.
    TooFewValid,
    StaleBaseline,
    /// The client did not reach all three verifiers.
    NotConnected,
    /// No ε/n/τ available for the selected triangle.
    MissingCalibration,
    /// No verifier triangle contains the asserted location.
    NoCoverage,
}

/// One iteration's estimate and condition outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub estimate: Option<OwdEstimate>,
    pub outcome: Condition,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<RoundFailure>,
}

impl IterationRecord {
    pub fn tampered(&self) -> bool {
        matches!(self.failure, Some(RoundFailure::Tampered { .. }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationResult {
    pub decision: Decision,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub indeterminate_reason: Option<IndeterminateReason>,
    pub iterations_total: u32,
    pub iterations_valid: u32,
    pub iterations_passed: u32,
    pub iterations_tampered: u32,
    pub per_iteration: Vec<IterationRecord>,
}

impl VerificationResult {
    pub fn accepted(&self) -> bool {
        self.decision == Decision::Accepted
    }

    pub fn indeterminate(reason: IndeterminateReason) -> Self {
        Self {
            decision: Decision::Indeterminate,
            indeterminate_reason: Some(reason),
            iterations_total: 0,
            iterations_valid: 0,
            iterations_passed: 0,
            iterations_tampered: 0,
            per_iteration: Vec::new(),
        }
    }
}

/// Minimum number of valid iterations for a verdict.
pub fn validity_floor(n: u32) -> u32 {
    n.div_ceil(2)
}

/// The τ vote over valid iterations.
pub fn vote(passed: u32, valid: u32, params: &CalibrationParams) -> Decision {
    if valid < validity_floor(params.n) || valid == 0 {
        return Decision::Indeterminate;
    }
    // passed/valid ≥ τ, evaluated without dividing.
    if passed as f64 >= params.tau * valid as f64 - 1e-9 {
        Decision::Accepted
    } else {
        Decision::Rejected
    }
}

/// Tallies per-iteration records into a result.
pub fn tally(per_iteration: Vec<IterationRecord>, params: &CalibrationParams) -> VerificationResult {
    let total = per_iteration.len() as u32;
    let valid = per_iteration.iter().filter(|r| r.outcome != Condition::Invalid).count() as u32;
    let passed = per_iteration.iter().filter(|r| r.outcome == Condition::Pass).count() as u32;
    let tampered = per_iteration.iter().filter(|r| r.tampered()).count() as u32;
    let decision = vote(passed, valid, params);
    VerificationResult {
        decision,
        indeterminate_reason: (decision == Decision::Indeterminate).then_some(IndeterminateReason::TooFewValid),
        iterations_total: total,
        iterations_valid: valid,
        iterations_passed: passed,
        iterations_tampered: tampered,
        per_iteration,
    }
}

/// Evaluates one MP round result against the baseline.
pub fn evaluate_round(
    round: Result<crate::mp::PairwiseDelaySet, RoundFailure>,
    baseline: Baseline,
    epsilon_ms: f64,
    mode: EpsilonMode,
) -> IterationRecord {
    match round {
        Err(failure) => IterationRecord { estimate: None, outcome: Condition::Invalid, failure: Some(failure) },
        Ok(set) => {
            let est = solve_owd(min_pairs(&set));
            let outcome = if est.valid {
                cpv_condition(est.delays(), baseline, epsilon_ms, mode)
            } else {
                Condition::Invalid
            };
            IterationRecord { estimate: Some(est), outcome, failure: None }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub interval_ms: f64,
    pub staleness_ms: f64,
    pub epsilon_mode: EpsilonMode,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { interval_ms: 300.0, staleness_ms: 60_000.0, epsilon_mode: EpsilonMode::SideSlack }
    }
}

/// Runs `params.n` MP rounds over `channel` and votes.
///
/// `baseline_age_ms` is the age of the oldest of x, y, z; anything older
/// than the staleness bound yields an indeterminate result without
/// measuring.
pub fn verify_presence<C: RelayChannel + ?Sized>(
    channel: &mut C,
    baseline: Baseline,
    baseline_age_ms: f64,
    params: &CalibrationParams,
    opts: &VerifyOptions,
) -> Result<VerificationResult, CpvError> {
    params.validate()?;
    if !(baseline_age_ms <= opts.staleness_ms) {
        return Ok(VerificationResult::indeterminate(IndeterminateReason::StaleBaseline));
    }
    let mut records = Vec::with_capacity(params.n as usize);
    for seq in 0..params.n {
        if seq > 0 {
            channel.pause(opts.interval_ms);
        }
        let round = run_mp_round(channel, seq);
        records.push(evaluate_round(round, baseline, params.epsilon_ms, opts.epsilon_mode));
    }
    Ok(tally(records, params))
}

/// One recorded round of a ground-truth node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundTrace {
    pub estimate: Option<OwdEstimate>,
    pub baseline: Baseline,
}

/// A node whose position relative to the triangle is known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthNode {
    pub node_id: String,
    pub inside: bool,
    pub rounds: Vec<RoundTrace>,
}

/// Search space for calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationGrid {
    pub epsilons_ms: Vec<f64>,
    pub taus: Vec<f64>,
    pub ns: Vec<u32>,
    pub epsilon_mode: EpsilonMode,
}

impl Default for CalibrationGrid {
    fn default() -> Self {
        Self {
            epsilons_ms: (0..=30).map(f64::from).collect(),
            taus: vec![0.5, 0.6, 0.7, 0.8, 0.9],
            ns: vec![10, 20, 50, 100],
            epsilon_mode: EpsilonMode::SideSlack,
        }
    }
}

impl CalibrationGrid {
    /// Default ε and τ ranges with a single iteration count.
    pub fn with_n(n: u32) -> Self {
        Self { ns: vec![n], ..Self::default() }
    }
}

/// Confusion counts for one grid point, counted over windows of n rounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub false_rejects: u32,
    pub false_accepts: u32,
    pub inside_trials: u32,
    pub outside_trials: u32,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalibrationError {
    #[error("calibration needs at least one inside node with {min_rounds} recorded rounds")]
    NoInsideNodes { min_rounds: usize },
    #[error("no grid point separates the ground truth; best {best:?} with {confusion:?}")]
    Failed { best: CalibrationParams, confusion: Confusion },
}

/// Rounds an inside node must have recorded to be usable.
pub const MIN_CALIBRATION_ROUNDS: usize = 20;

/// Grid search for the tightest parameters with no false rejects on inside
/// nodes and no false accepts on outside nodes.
///
/// Each node's trace is cut into disjoint windows of `n` consecutive
/// rounds; every window is one trial. Among feasible points the order is
/// smaller ε, then larger τ, then smaller n. When nothing is feasible the
/// error carries the point with the fewest total errors, ordered the same
/// way on ties.
pub fn calibrate(nodes: &[GroundTruthNode], grid: &CalibrationGrid) -> Result<CalibrationParams, CalibrationError> {
    if !nodes.iter().any(|n| n.inside && n.rounds.len() >= MIN_CALIBRATION_ROUNDS) {
        return Err(CalibrationError::NoInsideNodes { min_rounds: MIN_CALIBRATION_ROUNDS });
    }
    let mut epsilons = grid.epsilons_ms.clone();
    epsilons.sort_by(f64::total_cmp);
    let mut taus = grid.taus.clone();
    taus.sort_by(|a, b| b.total_cmp(a));
    let mut ns = grid.ns.clone();
    ns.sort_unstable();

    let mut best: Option<(u32, CalibrationParams, Confusion)> = None;
    for &eps in &epsilons {
        // Per node: prefix counts of valid and passing rounds at this ε.
        let prefix: Vec<(bool, Vec<(u32, u32)>)> = nodes
            .iter()
            .map(|node| {
                let mut acc = (0u32, 0u32);
                let mut v = Vec::with_capacity(node.rounds.len() + 1);
                v.push(acc);
                for r in &node.rounds {
                    let outcome = match r.estimate {
                        Some(e) if e.valid => cpv_condition(e.delays(), r.baseline, eps, grid.epsilon_mode),
                        _ => Condition::Invalid,
                    };
                    if outcome != Condition::Invalid {
                        acc.0 += 1;
                    }
                    if outcome == Condition::Pass {
                        acc.1 += 1;
                    }
                    v.push(acc);
                }
                (node.inside, v)
            })
            .collect();
        for &tau in &taus {
            for &n in &ns {
                let params = CalibrationParams { epsilon_ms: eps, n, tau };
                if params.validate().is_err() {
                    continue;
                }
                let mut conf = Confusion::default();
                for (inside, pre) in &prefix {
                    let rounds = pre.len() - 1;
                    for w in 0..rounds / n as usize {
                        let (lo, hi) = (pre[w * n as usize], pre[(w + 1) * n as usize]);
                        let decision = vote(hi.1 - lo.1, hi.0 - lo.0, &params);
                        if *inside {
                            conf.inside_trials += 1;
                            if decision == Decision::Rejected {
                                conf.false_rejects += 1;
                            }
                        } else {
                            conf.outside_trials += 1;
                            if decision == Decision::Accepted {
                                conf.false_accepts += 1;
                            }
                        }
                    }
                }
                if conf.inside_trials == 0 {
                    continue;
                }
                let errors = conf.false_rejects + conf.false_accepts;
                if errors == 0 {
                    return Ok(params);
                }
                if best.as_ref().map_or(true, |(e, _, _)| errors < *e) {
                    best = Some((errors, params, conf));
                }
            }
        }
    }
    match best {
        Some((_, best, confusion)) => Err(CalibrationError::Failed { best, confusion }),
        None => Err(CalibrationError::NoInsideNodes { min_rounds: MIN_CALIBRATION_ROUNDS }),
    }
}

/// False-accept and false-reject rates; `None` when a class is empty.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FaFr {
    pub false_accept_rate: Option<f64>,
    pub false_reject_rate: Option<f64>,
    pub false_accepts: u32,
    pub false_rejects: u32,
    pub outside_total: u32,
    pub inside_total: u32,
    pub indeterminate: u32,
}

/// Counts FA over outside nodes and FR over inside nodes. Indeterminate
/// results are excluded from both denominators and counted separately.
pub fn evaluate_fa_fr<'a, I>(experiment: I) -> FaFr
where
    I: IntoIterator<Item = (bool, &'a Decision)>,
{
    let mut r = FaFr::default();
    for (inside, decision) in experiment {
        match (inside, decision) {
            (_, Decision::Indeterminate) => r.indeterminate += 1,
            (true, d) => {
                r.inside_total += 1;
                if *d == Decision::Rejected {
                    r.false_rejects += 1;
                }
            }
            (false, d) => {
                r.outside_total += 1;
                if *d == Decision::Accepted {
                    r.false_accepts += 1;
                }
            }
        }
    }
    r.false_accept_rate = (r.outside_total > 0).then(|| r.false_accepts as f64 / r.outside_total as f64);
    r.false_reject_rate = (r.inside_total > 0).then(|| r.false_rejects as f64 / r.inside_total as f64);
    r
}

/// One line of an experiment report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub node_id: String,
    pub triangle_id: String,
    pub true_inside: bool,
    pub outcome: Decision,
    pub pass_count: u32,
    pub valid_count: u32,
    pub n: u32,
    pub epsilon_ms: f64,
    pub tau: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn records(pass: usize, fail: usize, invalid: usize) -> Vec<IterationRecord> {
        let mk = |outcome| IterationRecord { estimate: None, outcome, failure: None };
        std::iter::repeat_with(|| mk(Condition::Pass))
            .take(pass)
            .chain(std::iter::repeat_with(|| mk(Condition::Fail)).take(fail))
            .chain(std::iter::repeat_with(|| mk(Condition::Invalid)).take(invalid))
            .collect()
    }

    fn params(eps: f64, n: u32, tau: f64) -> CalibrationParams {
        CalibrationParams::new(eps, n, tau).unwrap()
    }

    #[test]
    fn vote_examples() {
        let p = params(0.0, 20, 0.7);
        assert_eq!(tally(records(14, 6, 0), &p).decision, Decision::Accepted);
        assert_eq!(tally(records(13, 7, 0), &p).decision, Decision::Rejected);
        let r = tally(records(8, 0, 12), &p);
        assert_eq!(r.decision, Decision::Indeterminate);
        assert_eq!(r.indeterminate_reason, Some(IndeterminateReason::TooFewValid));
    }

    #[test]
    fn tau_denominator_is_valid_iterations() {
        let p = params(0.0, 20, 0.7);
        // 10 valid of 20: 7/10 passes even though 7/20 would not.
        let r = tally(records(7, 3, 10), &p);
        assert_eq!((r.iterations_valid, r.iterations_passed), (10, 7));
        assert!(r.accepted());
    }

    #[test]
    fn params_validation() {
        assert!(CalibrationParams::new(0.0, 0, 0.5).is_err());
        assert!(CalibrationParams::new(0.0, 1, 0.0).is_err());
        assert!(CalibrationParams::new(0.0, 1, 1.1).is_err());
        assert!(CalibrationParams::new(-1.0, 1, 1.0).is_err());
        let d = CalibrationParams::demo_defaults();
        assert_eq!((d.epsilon_ms, d.tau, d.n), (10.0, 0.7, 8));
    }

    #[test]
    fn fa_fr_definitions() {
        let mut exp = Vec::new();
        exp.extend(std::iter::repeat((false, Decision::Rejected)).take(99));
        exp.push((false, Decision::Accepted));
        exp.extend(std::iter::repeat((true, Decision::Accepted)).take(98));
        exp.extend(std::iter::repeat((true, Decision::Rejected)).take(2));
        exp.push((true, Decision::Indeterminate));
        let r = evaluate_fa_fr(exp.iter().map(|(i, d)| (*i, d)));
        assert_eq!(r.false_accept_rate, Some(0.01));
        assert_eq!(r.false_reject_rate, Some(0.02));
        assert_eq!(r.indeterminate, 1);

        let only_inside = [(true, Decision::Accepted)];
        let r = evaluate_fa_fr(only_inside.iter().map(|(i, d)| (*i, d)));
        assert_eq!(r.false_accept_rate, None);
        assert_eq!(r.false_reject_rate, Some(0.0));
    }

    fn trace(delays: &[(f64, f64, f64)]) -> Vec<RoundTrace> {
        let baseline = Baseline { x: 10.0, y: 10.0, z: 10.0 };
        delays
            .iter()
            .map(|&(a, b, c)| RoundTrace { estimate: Some(OwdEstimate { a, b, c, valid: true }), baseline })
            .collect()
    }

    const CENTROID: (f64, f64, f64) = (5.773502691896258, 5.773502691896258, 5.773502691896258);

    #[test]
    fn calibrate_clean_inside_picks_tightest() {
        let node = GroundTruthNode { node_id: "in".into(), inside: true, rounds: trace(&[CENTROID; 40]) };
        let p = calibrate(&[node], &CalibrationGrid::default()).unwrap();
        assert_eq!((p.epsilon_ms, p.n, p.tau), (0.0, 10, 0.9));
    }

    #[test]
    fn calibrate_with_failing_rounds_lowers_tau() {
        // Every fifth round is far outside and fails for any ε in the grid.
        let rounds: Vec<_> = (0..20).map(|i| if i % 5 == 4 { (200.0, 200.0, 200.0) } else { CENTROID }).collect();
        let node = GroundTruthNode { node_id: "in".into(), inside: true, rounds: trace(&rounds) };
        let p = calibrate(&[node], &CalibrationGrid::default()).unwrap();
        assert!(p.tau <= 0.8, "{p:?}");
        assert_eq!(p.epsilon_ms, 0.0);
    }

    #[test]
    fn calibrate_reports_inseparable_ground_truth() {
        let inside = GroundTruthNode { node_id: "in".into(), inside: true, rounds: trace(&[CENTROID; 20]) };
        let outside = GroundTruthNode { node_id: "out".into(), inside: false, rounds: trace(&[CENTROID; 20]) };
        match calibrate(&[inside, outside], &CalibrationGrid::default()) {
            Err(CalibrationError::Failed { confusion, .. }) => {
                assert_eq!(confusion.false_accepts + confusion.false_rejects, 1);
            }
            other => panic!("expected failure, got {other:?}"),
        }
    }

    #[test]
    fn calibrate_requires_inside_nodes() {
        let short = GroundTruthNode { node_id: "in".into(), inside: true, rounds: trace(&[CENTROID; 5]) };
        assert!(matches!(calibrate(&[short], &CalibrationGrid::default()), Err(CalibrationError::NoInsideNodes { .. })));
    }
}
