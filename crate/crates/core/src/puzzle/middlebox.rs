//! Queueing at a relay that solves puzzles on behalf of many clients.
//!
//! Every verifier turn of every round hands the relay one puzzle per
//! connected client. The relay has `cores` identical solvers serving a
//! single FCFS queue; a puzzle's service time is its geometric attempt
//! count divided by the per-core hash rate.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::sample_solve_attempts;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiddleboxParams {
    pub clients: u32,
    pub difficulty: u8,
    pub cores: u32,
    /// Hashes per millisecond per core.
    pub core_hash_rate: f64,
    pub rounds: u32,
    pub inter_round_ms: f64,
    #[serde(default = "default_turns")]
    pub turns_per_round: u32,
    /// Spacing between verifier turns inside a round; client arrivals for a
    /// turn are spread uniformly over this interval.
    #[serde(default = "default_turn_spacing")]
    pub turn_spacing_ms: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_turns() -> u32 {
    3
}

fn default_turn_spacing() -> f64 {
    20.0
}

impl MiddleboxParams {
    pub fn new(clients: u32, difficulty: u8, cores: u32, core_hash_rate: f64, rounds: u32, inter_round_ms: f64) -> Self {
        Self {
            clients,
            difficulty,
            cores,
            core_hash_rate,
            rounds,
            inter_round_ms,
            turns_per_round: default_turns(),
            turn_spacing_ms: default_turn_spacing(),
            seed: 0,
        }
    }

    pub fn mean_service_ms(&self) -> f64 {
        2f64.powi(self.difficulty as i32) / self.core_hash_rate
    }
}

/// Offered load ρ: arrival rate × mean service time / cores.
pub fn offered_load(p: &MiddleboxParams) -> f64 {
    let arrivals_per_ms = p.clients as f64 * p.turns_per_round as f64 / p.inter_round_ms;
    arrivals_per_ms * p.mean_service_ms() / p.cores as f64
}

/// Added delay for one relayed timestamp.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiddleboxSample {
    pub round: u32,
    pub turn: u32,
    pub client_id: u32,
    pub added_delay_ms: f64,
}

/// Runs the queue and returns queueing plus service delay per puzzle,
/// ordered by (round, turn, client). Deterministic in `params.seed`.
pub fn simulate_middlebox(params: &MiddleboxParams) -> Vec<MiddleboxSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut arrivals = Vec::with_capacity((params.rounds * params.turns_per_round * params.clients) as usize);
    for round in 0..params.rounds {
        for turn in 0..params.turns_per_round {
            let base = round as f64 * params.inter_round_ms + turn as f64 * params.turn_spacing_ms;
            for client in 0..params.clients {
                let offset = if params.turn_spacing_ms > 0.0 { rng.gen_range(0.0..params.turn_spacing_ms) } else { 0.0 };
                let service = sample_solve_attempts(params.difficulty, &mut rng) as f64 / params.core_hash_rate;
                arrivals.push((base + offset, round, turn, client, service));
            }
        }
    }
    arrivals.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1, a.2, a.3).cmp(&(b.1, b.2, b.3))));

    // Core free times as ordered bit patterns (non-negative floats order like their bits).
    let mut free: BinaryHeap<Reverse<u64>> = (0..params.cores.max(1)).map(|_| Reverse(0f64.to_bits())).collect();
    let mut out = Vec::with_capacity(arrivals.len());
    for (at, round, turn, client_id, service) in arrivals {
        let Reverse(bits) = free.pop().expect("at least one core");
        let start = f64::from_bits(bits).max(at);
        let finish = start + service;
        free.push(Reverse(finish.to_bits()));
        out.push(MiddleboxSample { round, turn, client_id, added_delay_ms: finish - at });
    }
    out.sort_by_key(|s| (s.round, s.turn, s.client_id));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_delay(samples: &[MiddleboxSample], rounds: std::ops::Range<u32>) -> f64 {
        let sel: Vec<f64> = samples.iter().filter(|s| rounds.contains(&s.round)).map(|s| s.added_delay_ms).collect();
        sel.iter().sum::<f64>() / sel.len() as f64
    }

    #[test]
    fn single_client_sees_service_time_only() {
        // k = 8 at 100 hashes/ms: mean service 2.56 ms, one puzzle per 20 ms.
        let p = MiddleboxParams::new(1, 8, 1, 100.0, 200, 300.0);
        assert!(offered_load(&p) < 0.05);
        let s = simulate_middlebox(&p);
        let mean = mean_delay(&s, 0..200);
        assert!((mean - p.mean_service_ms()).abs() < 0.15 * p.mean_service_ms(), "{mean}");
    }

    #[test]
    fn overload_grows_without_bound() {
        let mut p = MiddleboxParams::new(40, 10, 2, 100.0, 60, 300.0);
        p.seed = 3;
        assert!(offered_load(&p) > 1.5);
        let s = simulate_middlebox(&p);
        let early = mean_delay(&s, 0..10);
        let mid = mean_delay(&s, 25..35);
        let late = mean_delay(&s, 50..60);
        assert!(early < mid && mid < late, "{early} {mid} {late}");
        assert!(late > 5.0 * early);
    }

    #[test]
    fn half_load_is_stable() {
        let mut p = MiddleboxParams::new(10, 8, 2, 100.0, 400, 300.0);
        // ρ = 10·3/300 · 2.56 / 2 = 0.128; scale hash rate down to reach 0.5.
        p.core_hash_rate = 100.0 * offered_load(&p) / 0.5;
        assert!((offered_load(&p) - 0.5).abs() < 1e-9);
        let s = simulate_middlebox(&p);
        let first = mean_delay(&s, 0..200);
        let second = mean_delay(&s, 200..400);
        assert!(first.is_finite() && second.is_finite());
        assert!((second - first).abs() < 0.25 * first, "{first} {second}");
    }

    #[test]
    fn deterministic_in_seed() {
        let p = MiddleboxParams::new(5, 6, 1, 50.0, 20, 300.0);
        assert_eq!(simulate_middlebox(&p), simulate_middlebox(&p));
    }
}
