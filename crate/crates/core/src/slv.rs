//! Server location verification.
//!
//! Servers run no cooperating code, so each verifier can only time round
//! trips to them. Half the minimum RTT stands in for the one-way delay, and
//! every verifier pair whose diameter-circle covers the asserted location
//! checks that the server sits inside that circle too.
//!
//! Servers are identified by IP address only; this module never resolves
//! names. Domains appear solely as pin-store keys.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::net::IpAddr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{circle_contains, CircleRule, GeoPoint, Metric};

/// Samples required per probed layer.
pub const MIN_SAMPLES_PER_LAYER: usize = 3;
/// Verifiers with a usable estimate required for a verdict.
pub const MIN_VERIFIERS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
#[repr(u8)]
pub enum ProbeLayer {
    TcpHandshake = 0,
    HttpRequestResponse = 1,
}

impl ProbeLayer {
    pub const ALL: [ProbeLayer; 2] = [ProbeLayer::TcpHandshake, ProbeLayer::HttpRequestResponse];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeSample {
    pub layer: ProbeLayer,
    pub rtt_ms: f64,
    pub verifier: u16,
    pub timestamp_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProbeError {
    #[error("verifier {verifier} could not probe server: {reason}")]
    ProbeFailed { verifier: u16, reason: String },
    #[error("verifier {verifier} returned {got} {layer:?} samples, need {MIN_SAMPLES_PER_LAYER}")]
    TooFewSamples { verifier: u16, layer: ProbeLayer, got: usize },
    #[error("verifier {verifier} returned a non-positive RTT")]
    BadSample { verifier: u16 },
}

/// The server location assertion under test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlvRequest {
    pub server_ip: IpAddr,
    pub asserted: GeoPoint,
    /// Pinning key only; never resolved.
    pub domain: Option<String>,
}

/// Source of RTT samples from one verifier to a server.
pub trait Prober {
    /// Layers this prober measures.
    fn layers(&self) -> Vec<ProbeLayer> {
        ProbeLayer::ALL.to_vec()
    }

    fn probe(&mut self, verifier: u16, server: IpAddr, layer: ProbeLayer, count: usize)
        -> Result<Vec<ProbeSample>, ProbeError>;
}

/// Minimum-filtered RTT of one verifier to the server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeEstimate {
    pub verifier: u16,
    pub min_rtt_ms: f64,
    pub samples: Vec<ProbeSample>,
}

/// Takes `samples_per_layer` (at least three) samples on each layer and
/// keeps the minimum across all of them.
pub fn probe_server<P: Prober + ?Sized>(
    prober: &mut P,
    verifier: u16,
    server_ip: IpAddr,
    samples_per_layer: usize,
) -> Result<ProbeEstimate, ProbeError> {
    let count = samples_per_layer.max(MIN_SAMPLES_PER_LAYER);
    let mut samples = Vec::new();
    for layer in prober.layers() {
        let got = prober.probe(verifier, server_ip, layer, count)?;
        let on_layer = got.iter().filter(|s| s.layer == layer).count();
        if on_layer < MIN_SAMPLES_PER_LAYER {
            return Err(ProbeError::TooFewSamples { verifier, layer, got: on_layer });
        }
        samples.extend(got);
    }
    estimate_from_samples(verifier, samples)
}

/// Minimum RTT over samples, rejecting non-positive values.
pub fn estimate_from_samples(verifier: u16, samples: Vec<ProbeSample>) -> Result<ProbeEstimate, ProbeError> {
    if samples.iter().any(|s| !(s.rtt_ms > 0.0)) {
        return Err(ProbeError::BadSample { verifier });
    }
    let min_rtt_ms = samples
        .iter()
        .map(|s| s.rtt_ms)
        .reduce(f64::min)
        .ok_or(ProbeError::ProbeFailed { verifier, reason: "no samples".into() })?;
    Ok(ProbeEstimate { verifier, min_rtt_ms, samples })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlvVerifier {
    pub id: u16,
    pub location: GeoPoint,
}

#[derive(Debug, Clone, Copy)]
pub struct SlvConfig {
    pub epsilon_ms: f64,
    pub rule: CircleRule,
    /// Distance used to decide which pair circles cover the assertion.
    pub metric: Metric,
}

impl Default for SlvConfig {
    fn default() -> Self {
        Self { epsilon_ms: 5.0, rule: CircleRule::RightAngle, metric: Metric::GreatCircle }
    }
}

/// Outcome of one verifier pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairResult {
    pub first: u16,
    pub second: u16,
    pub covers_assertion: bool,
    pub contains_server: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlvIndeterminate {
    TooFewVerifiers,
    /// No pair circle covers the assertion, so nothing can be checked.
    NoCoveringPair,
    MissingInterVerifierDelay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SlvCheck {
    Checked { passed: bool, pairs: Vec<PairResult> },
    Indeterminate(SlvIndeterminate),
}

impl SlvCheck {
    pub fn passed(&self) -> Option<bool> {
        match self {
            SlvCheck::Checked { passed, .. } => Some(*passed),
            SlvCheck::Indeterminate(_) => None,
        }
    }
}

/// Whether the asserted point lies in the circle on diameter `v1 v2`.
pub fn pair_covers(v1: GeoPoint, v2: GeoPoint, asserted: GeoPoint, rule: CircleRule, metric: &Metric) -> bool {
    circle_contains(
        metric.distance_km(v1, asserted),
        metric.distance_km(v2, asserted),
        metric.distance_km(v1, v2),
        0.0,
        rule,
    )
}

/// Pairwise circle verification.
///
/// `server_rtt_ms` holds the min-filtered RTT from each verifier that probed
/// successfully; `inter_owd_ms` the one-way delay between verifier pairs,
/// keyed by `(low id, high id)`. Passes iff every pair whose circle covers
/// the assertion also contains the server.
pub fn slv_verify(
    request: &SlvRequest,
    verifiers: &[SlvVerifier],
    server_rtt_ms: &BTreeMap<u16, f64>,
    inter_owd_ms: &BTreeMap<(u16, u16), f64>,
    config: &SlvConfig,
) -> SlvCheck {
    let usable: Vec<&SlvVerifier> = verifiers.iter().filter(|v| server_rtt_ms.contains_key(&v.id)).collect();
    if usable.len() < MIN_VERIFIERS {
        return SlvCheck::Indeterminate(SlvIndeterminate::TooFewVerifiers);
    }
    let mut pairs = Vec::new();
    for (i, v1) in usable.iter().enumerate() {
        for v2 in &usable[i + 1..] {
            let covers = pair_covers(v1.location, v2.location, request.asserted, config.rule, &config.metric);
            let key = (v1.id.min(v2.id), v1.id.max(v2.id));
            let contains = if covers {
                let Some(&d12) = inter_owd_ms.get(&key) else {
                    return SlvCheck::Indeterminate(SlvIndeterminate::MissingInterVerifierDelay);
                };
                let d1 = server_rtt_ms[&v1.id] / 2.0;
                let d2 = server_rtt_ms[&v2.id] / 2.0;
                circle_contains(d1, d2, d12, config.epsilon_ms, config.rule)
            } else {
                false
            };
            pairs.push(PairResult { first: key.0, second: key.1, covers_assertion: covers, contains_server: contains });
        }
    }
    let covering: Vec<&PairResult> = pairs.iter().filter(|p| p.covers_assertion).collect();
    if covering.is_empty() {
        return SlvCheck::Indeterminate(SlvIndeterminate::NoCoveringPair);
    }
    let passed = covering.iter().all(|p| p.contains_server);
    SlvCheck::Checked { passed, pairs }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SlvOutcome {
    Critical,
    Suspicious,
    Unsuspicious,
    VerifiedPinned,
}

impl SlvOutcome {
    pub fn code(self) -> u8 {
        match self {
            SlvOutcome::Critical => 0,
            SlvOutcome::Suspicious => 1,
            SlvOutcome::Unsuspicious => 2,
            SlvOutcome::VerifiedPinned => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => SlvOutcome::Critical,
            1 => SlvOutcome::Suspicious,
            2 => SlvOutcome::Unsuspicious,
            3 => SlvOutcome::VerifiedPinned,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlvVerdict {
    pub outcome: SlvOutcome,
    pub verification_passed: bool,
    pub was_pinned: bool,
}

/// The verdict table.
pub fn verdict_outcome(was_pinned: bool, verification_passed: bool) -> SlvOutcome {
    match (was_pinned, verification_passed) {
        (true, false) => SlvOutcome::Critical,
        (false, false) => SlvOutcome::Suspicious,
        (false, true) => SlvOutcome::Unsuspicious,
        (true, true) => SlvOutcome::VerifiedPinned,
    }
}

/// Classifies a verification and applies trust-on-first-use: a pass for an
/// unpinned (domain, region) creates the pin, a pass for a pinned one
/// refreshes it, and a failure never touches the store.
pub fn classify_verdict(
    domain: Option<&str>,
    asserted: GeoPoint,
    verification_passed: bool,
    pins: &mut PinStore,
    now_ms: u64,
) -> Result<SlvVerdict, PinError> {
    let Some(domain) = domain else {
        return Ok(SlvVerdict {
            outcome: verdict_outcome(false, verification_passed),
            verification_passed,
            was_pinned: false,
        });
    };
    let cell = pins.cell_of(asserted);
    let was_pinned = pins.get(domain, cell).is_some();
    if verification_passed {
        pins.put(domain, cell, now_ms)?;
    }
    Ok(SlvVerdict { outcome: verdict_outcome(was_pinned, verification_passed), verification_passed, was_pinned })
}

/// Quantized region: indices of a `cell_deg`-sized latitude/longitude cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub lat_idx: i32,
    pub lon_idx: i32,
}

/// One pin as stored on disk. `cell_lat`/`cell_lon` are the south-west
/// corner of the cell in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PinRecord {
    pub domain: String,
    pub cell_lat: f64,
    pub cell_lon: f64,
    pub first_verified: u64,
    pub last_verified: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum LogEntry {
    Put(PinRecord),
    Remove { domain: String, cell_lat: f64, cell_lon: f64 },
}

#[derive(Debug, Error)]
pub enum PinError {
    #[error("pin store {path} is corrupt at line {line}; reopen with repair enabled to discard damaged entries")]
    Corrupt { path: PathBuf, line: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Domain → pinned regions.
///
/// Persistent stores keep a snapshot (`<path>`, a JSON array of records)
/// plus an append-only log (`<path>.log`, one JSON entry per line:
/// `{"op":"put",...record}` or `{"op":"remove","domain":..,"cell_lat":..,"cell_lon":..}`).
/// Opening replays the log over the snapshot. The store has a single
/// writer; wrap it in a lock to share it.
#[derive(Debug)]
pub struct PinStore {
    cell_deg: f64,
    records: HashMap<(String, Cell), PinRecord>,
    path: Option<PathBuf>,
    log: Option<File>,
    log_entries: usize,
    snapshot_every: usize,
}

impl PinStore {
    pub const DEFAULT_CELL_DEG: f64 = 0.5;

    pub fn in_memory(cell_deg: f64) -> Self {
        Self {
            cell_deg,
            records: HashMap::new(),
            path: None,
            log: None,
            log_entries: 0,
            snapshot_every: 1000,
        }
    }

    /// Opens or creates the store at `path`. A damaged snapshot or log
    /// line is an error unless `repair` is set, in which case damaged
    /// entries are dropped and a clean snapshot is written.
    pub fn open(path: &Path, cell_deg: f64, repair: bool) -> Result<Self, PinError> {
        let mut store = Self::in_memory(cell_deg);
        store.path = Some(path.to_path_buf());
        let mut damaged = false;
        if path.exists() {
            let text = fs::read_to_string(path)?;
            match serde_json::from_str::<Vec<PinRecord>>(&text) {
                Ok(records) => {
                    for r in records {
                        store.apply(LogEntry::Put(r));
                    }
                }
                Err(_) if repair => damaged = true,
                Err(_) => return Err(PinError::Corrupt { path: path.to_path_buf(), line: 0 }),
            }
        }
        let log_path = log_path(path);
        if log_path.exists() {
            for (i, line) in BufReader::new(File::open(&log_path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<LogEntry>(&line) {
                    Ok(entry) => {
                        store.apply(entry);
                        store.log_entries += 1;
                    }
                    Err(_) if repair => damaged = true,
                    Err(_) => return Err(PinError::Corrupt { path: log_path.clone(), line: i + 1 }),
                }
            }
        }
        if damaged {
            store.snapshot()?;
        }
        store.log = Some(OpenOptions::new().create(true).append(true).open(&log_path)?);
        Ok(store)
    }

    pub fn cell_deg(&self) -> f64 {
        self.cell_deg
    }

    pub fn cell_of(&self, p: GeoPoint) -> Cell {
        Cell { lat_idx: (p.lat() / self.cell_deg).floor() as i32, lon_idx: (p.lon() / self.cell_deg).floor() as i32 }
    }

    fn cell_from_corner(&self, lat: f64, lon: f64) -> Cell {
        Cell { lat_idx: (lat / self.cell_deg).round() as i32, lon_idx: (lon / self.cell_deg).round() as i32 }
    }

    fn corner(&self, cell: Cell) -> (f64, f64) {
        (cell.lat_idx as f64 * self.cell_deg, cell.lon_idx as f64 * self.cell_deg)
    }

    fn apply(&mut self, entry: LogEntry) {
        match entry {
            LogEntry::Put(r) => {
                let cell = self.cell_from_corner(r.cell_lat, r.cell_lon);
                self.records.insert((r.domain.clone(), cell), r);
            }
            LogEntry::Remove { domain, cell_lat, cell_lon } => {
                let cell = self.cell_from_corner(cell_lat, cell_lon);
                self.records.remove(&(domain, cell));
            }
        }
    }

    fn append(&mut self, entry: &LogEntry) -> Result<(), PinError> {
        if let Some(log) = self.log.as_mut() {
            let mut line = serde_json::to_string(entry).expect("pin entries serialize");
            line.push('\n');
            log.write_all(line.as_bytes())?;
            log.flush()?;
            self.log_entries += 1;
            if self.log_entries >= self.snapshot_every {
                self.snapshot()?;
            }
        }
        Ok(())
    }

    /// All pins for `domain`, ordered by cell.
    pub fn lookup(&self, domain: &str) -> Vec<&PinRecord> {
        let mut out: Vec<(&Cell, &PinRecord)> =
            self.records.iter().filter(|((d, _), _)| d == domain).map(|((_, c), r)| (c, r)).collect();
        out.sort_by_key(|(c, _)| **c);
        out.into_iter().map(|(_, r)| r).collect()
    }

    pub fn get(&self, domain: &str, cell: Cell) -> Option<&PinRecord> {
        self.records.get(&(domain.to_string(), cell))
    }

    /// Creates the pin or refreshes `last_verified`; idempotent on
    /// (domain, cell) apart from that timestamp.
    pub fn put(&mut self, domain: &str, cell: Cell, now_ms: u64) -> Result<&PinRecord, PinError> {
        let (cell_lat, cell_lon) = self.corner(cell);
        let first_verified = self.get(domain, cell).map_or(now_ms, |r| r.first_verified);
        let record = PinRecord { domain: domain.to_string(), cell_lat, cell_lon, first_verified, last_verified: now_ms };
        self.append(&LogEntry::Put(record.clone()))?;
        self.records.insert((domain.to_string(), cell), record);
        Ok(&self.records[&(domain.to_string(), cell)])
    }

    /// Removes pins whose `last_verified` is more than `max_age_ms` old.
    pub fn expire(&mut self, max_age_ms: u64, now_ms: u64) -> Result<usize, PinError> {
        let doomed: Vec<(String, Cell)> = self
            .records
            .iter()
            .filter(|(_, r)| now_ms.saturating_sub(r.last_verified) >= max_age_ms)
            .map(|(k, _)| k.clone())
            .collect();
        for key in &doomed {
            let (cell_lat, cell_lon) = self.corner(key.1);
            self.append(&LogEntry::Remove { domain: key.0.clone(), cell_lat, cell_lon })?;
            self.records.remove(key);
        }
        Ok(doomed.len())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Writes all records to the snapshot and truncates the log.
    pub fn snapshot(&mut self) -> Result<(), PinError> {
        let Some(path) = self.path.clone() else { return Ok(()) };
        let mut records: Vec<&PinRecord> = self.records.values().collect();
        records.sort_by(|a, b| a.domain.cmp(&b.domain).then(a.cell_lat.total_cmp(&b.cell_lat)).then(a.cell_lon.total_cmp(&b.cell_lon)));
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, serde_json::to_vec_pretty(&records).expect("pins serialize"))?;
        fs::rename(&tmp, &path)?;
        let log_path = log_path(&path);
        self.log = Some(OpenOptions::new().create(true).write(true).truncate(true).open(&log_path)?);
        self.log = Some(OpenOptions::new().append(true).open(&log_path)?);
        self.log_entries = 0;
        Ok(())
    }
}

fn log_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".log");
    PathBuf::from(s)
}
