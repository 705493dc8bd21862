//! Clock offsets between verifiers and the background baseline OWDs.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

/// Symmetric-path offset estimator over a four-timestamp exchange.
///
/// `t1` request sent (local clock), `t2` request received (peer clock),
/// `t3` response sent (peer clock), `t4` response received (local clock).
/// Returns peer-minus-local clock offset. Path asymmetry biases it by half
/// the forward/reverse difference.
pub fn estimate_offset(t1: f64, t2: f64, t3: f64, t4: f64) -> f64 {
    ((t2 - t1) + (t3 - t4)) / 2.0
}

/// Round-trip time of the same exchange, excluding peer processing.
pub fn exchange_rtt(t1: f64, t2: f64, t3: f64, t4: f64) -> f64 {
    (t4 - t1) - (t3 - t2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeerClock {
    /// Peer minus local, ms.
    pub offset_ms: f64,
    pub last_measured_ms: Option<u64>,
    /// Set when the latest refresh timed out; the previous offset is kept.
    pub aged: bool,
    /// Offset supplied by an external time source, used instead of estimates.
    pub override_ms: Option<f64>,
}

impl Default for PeerClock {
    fn default() -> Self {
        Self { offset_ms: 0.0, last_measured_ms: None, aged: false, override_ms: None }
    }
}

/// Last `WINDOW` baseline samples to one peer; the baseline is their minimum.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BaselineTracker {
    window: VecDeque<f64>,
    ewma: Option<f64>,
    last_update_ms: Option<u64>,
    timed_out: bool,
}

impl BaselineTracker {
    pub const WINDOW: usize = 10;
    const EWMA_WEIGHT: f64 = 0.2;

    /// Stores `min(forward, reverse)` after offset correction. `offset` is
    /// peer-minus-local; `forward_raw` was timed by the peer and
    /// `reverse_raw` locally.
    pub fn record_exchange(&mut self, forward_raw: f64, reverse_raw: f64, offset: f64, now_ms: u64) -> f64 {
        let forward = forward_raw - offset;
        let reverse = reverse_raw + offset;
        self.record(forward.min(reverse), now_ms)
    }

    pub fn record(&mut self, smaller_owd: f64, now_ms: u64) -> f64 {
        if self.window.len() == Self::WINDOW {
            self.window.pop_front();
        }
        self.window.push_back(smaller_owd);
        self.ewma = Some(match self.ewma {
            Some(prev) => prev + Self::EWMA_WEIGHT * (smaller_owd - prev),
            None => smaller_owd,
        });
        self.last_update_ms = Some(now_ms);
        self.timed_out = false;
        smaller_owd
    }

    pub fn mark_timeout(&mut self) {
        self.timed_out = true;
    }

    /// Minimum over the window, if any sample exists.
    pub fn value(&self) -> Option<f64> {
        self.window.iter().copied().reduce(f64::min)
    }

    pub fn ewma(&self) -> Option<f64> {
        self.ewma
    }

    pub fn age_ms(&self, now_ms: u64) -> Option<u64> {
        self.last_update_ms.map(|t| now_ms.saturating_sub(t))
    }

    pub fn is_stale(&self, now_ms: u64, staleness_ms: u64) -> bool {
        self.timed_out || self.age_ms(now_ms).map_or(true, |age| age > staleness_ms)
    }
}

/// Per-peer offsets and baselines held by one verifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClockSyncState {
    pub peers: BTreeMap<u16, PeerClock>,
    pub baselines: BTreeMap<u16, BaselineTracker>,
    pub offset_period_ms: u64,
    pub baseline_period_ms: u64,
    pub staleness_ms: u64,
}

impl Default for ClockSyncState {
    fn default() -> Self {
        Self {
            peers: BTreeMap::new(),
            baselines: BTreeMap::new(),
            offset_period_ms: 30 * 60 * 1000,
            baseline_period_ms: 6_000,
            staleness_ms: 60_000,
        }
    }
}

impl ClockSyncState {
    pub fn offset(&self, peer: u16) -> f64 {
        self.peers.get(&peer).map_or(0.0, |p| p.override_ms.unwrap_or(p.offset_ms))
    }

    pub fn record_offset(&mut self, peer: u16, t: [f64; 4], now_ms: u64) -> f64 {
        let est = estimate_offset(t[0], t[1], t[2], t[3]);
        let entry = self.peers.entry(peer).or_default();
        entry.offset_ms = est;
        entry.last_measured_ms = Some(now_ms);
        entry.aged = false;
        est
    }

    pub fn offset_timeout(&mut self, peer: u16) {
        self.peers.entry(peer).or_default().aged = true;
    }

    pub fn set_override(&mut self, peer: u16, offset_ms: f64) {
        self.peers.entry(peer).or_default().override_ms = Some(offset_ms);
    }

    pub fn offset_due(&self, peer: u16, now_ms: u64) -> bool {
        self.peers
            .get(&peer)
            .and_then(|p| p.last_measured_ms)
            .map_or(true, |t| now_ms.saturating_sub(t) >= self.offset_period_ms)
    }

    pub fn baseline(&mut self, peer: u16) -> &mut BaselineTracker {
        self.baselines.entry(peer).or_default()
    }

    /// Fresh baseline to `peer`, or `None` when missing or stale.
    pub fn fresh_baseline(&self, peer: u16, now_ms: u64) -> Option<f64> {
        let t = self.baselines.get(&peer)?;
        if t.is_stale(now_ms, self.staleness_ms) {
            return None;
        }
        t.value()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Simulates one exchange with a true offset and path delays.
    fn exchange(true_offset: f64, fwd: f64, rev: f64) -> [f64; 4] {
        let t1 = 1000.0;
        let t2 = t1 + fwd + true_offset;
        let t3 = t2 + 0.5;
        let t4 = t3 - true_offset + rev;
        [t1, t2, t3, t4]
    }

    #[test]
    fn offset_examples() {
        let t = exchange(5.0, 8.0, 8.0);
        assert_eq!(estimate_offset(t[0], t[1], t[2], t[3]), 5.0);
        let t = exchange(0.0, 8.0, 8.0);
        assert_eq!(estimate_offset(t[0], t[1], t[2], t[3]), 0.0);
        let t = exchange(0.0, 5.0, 15.0);
        assert_eq!(estimate_offset(t[0], t[1], t[2], t[3]), -5.0);
        assert_eq!(exchange_rtt(t[0], t[1], t[2], t[3]), 20.0);
    }

    #[test]
    fn baseline_min_rule() {
        let mut b = BaselineTracker::default();
        b.record_exchange(7.0, 9.0, 0.0, 100);
        assert_eq!(b.value(), Some(7.0));
    }

    #[test]
    fn offset_correction_shifts_baseline_by_offset() {
        // Peer clock 3 ms behind: forward reads 3 ms short, reverse 3 ms long.
        let (fwd_true, rev_true, offset) = (7.0, 9.0, -3.0);
        let fwd_raw = fwd_true + offset;
        let rev_raw = rev_true - offset;
        let mut corrected = BaselineTracker::default();
        let mut uncorrected = BaselineTracker::default();
        corrected.record_exchange(fwd_raw, rev_raw, offset, 0);
        uncorrected.record_exchange(fwd_raw, rev_raw, 0.0, 0);
        assert_eq!(corrected.value(), Some(7.0));
        assert_eq!(corrected.value().unwrap() - uncorrected.value().unwrap(), 3.0);
    }

    #[test]
    fn window_keeps_last_ten() {
        let mut b = BaselineTracker::default();
        b.record(1.0, 0);
        for i in 0..10 {
            b.record(5.0 + i as f64, i);
        }
        assert_eq!(b.value(), Some(5.0));
        assert!(b.ewma().unwrap() > 5.0);
    }

    #[test]
    fn staleness() {
        let mut s = ClockSyncState::default();
        assert_eq!(s.fresh_baseline(2, 0), None);
        s.baseline(2).record(4.0, 1_000);
        assert_eq!(s.fresh_baseline(2, 30_000), Some(4.0));
        assert_eq!(s.fresh_baseline(2, 62_000), None);
        s.baseline(2).record(4.0, 62_000);
        s.baseline(2).mark_timeout();
        assert_eq!(s.fresh_baseline(2, 62_001), None);
    }

    #[test]
    fn offset_timeout_keeps_previous() {
        let mut s = ClockSyncState::default();
        s.record_offset(3, exchange(2.0, 4.0, 4.0), 0);
        s.offset_timeout(3);
        assert_eq!(s.offset(3), 2.0);
        assert!(s.peers[&3].aged);
        assert!(!s.offset_due(3, 1_000));
        assert!(s.offset_due(3, 30 * 60 * 1000));
        s.set_override(3, -1.0);
        assert_eq!(s.offset(3), -1.0);
    }
}
