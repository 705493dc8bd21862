//! Request orchestration: verifier selection, session grants, central
//! verdicts, and the results log.
//!
//! Verifiers only measure. The Manager picks the triangle, hands the client
//! a signed grant, runs the presence rounds through a backend, and decides.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::net::IpAddr;
use std::path::Path;

use ed25519_dalek::SigningKey;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cpv::{verify_presence, CalibrationParams, CpvError, Decision, IndeterminateReason, VerificationResult, VerifyOptions};
use crate::geometry::{geographic_area_km2, great_circle_km, spherical_triangle_contains, Baseline, GeoPoint};
use crate::mp::RelayChannel;
use crate::slv::{
    classify_verdict, slv_verify, PinError, PinStore, ProbeError, ProbeEstimate, SlvCheck, SlvConfig, SlvIndeterminate,
    SlvRequest, SlvVerdict, SlvVerifier,
};
use crate::wire::SessionGrant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Health {
    #[default]
    Ok,
    Degraded,
    Down,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegisteredVerifier {
    pub id: u16,
    pub location: GeoPoint,
    pub address: String,
    #[serde(default)]
    pub health: Health,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VerifierRegistry {
    pub verifiers: Vec<RegisteredVerifier>,
}

impl VerifierRegistry {
    pub fn new(verifiers: Vec<RegisteredVerifier>) -> Self {
        Self { verifiers }
    }

    pub fn get(&self, id: u16) -> Option<&RegisteredVerifier> {
        self.verifiers.iter().find(|v| v.id == id)
    }

    pub fn set_health(&mut self, id: u16, health: Health) -> bool {
        match self.verifiers.iter_mut().find(|v| v.id == id) {
            Some(v) => {
                v.health = health;
                true
            }
            None => false,
        }
    }

    pub fn healthy(&self) -> impl Iterator<Item = &RegisteredVerifier> {
        self.verifiers.iter().filter(|v| v.health == Health::Ok)
    }
}

#[derive(Debug, Error)]
pub enum ManagerError {
    #[error("only {available} verifiers are healthy, need 3")]
    TooFewVerifiers { available: usize },
    #[error("no verifier triangle contains the asserted location; nearest verifiers {nearest:?}")]
    NoCoverage { nearest: [u16; 3] },
    #[error(transparent)]
    Cpv(#[from] CpvError),
    #[error(transparent)]
    Pins(#[from] PinError),
    #[error("results log: {0}")]
    Log(#[from] std::io::Error),
}

/// A verifier triple chosen for an assertion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedTriangle {
    /// Ascending; roles A, B, C in this order.
    pub ids: [u16; 3],
    pub vertices: [GeoPoint; 3],
    pub area_km2: f64,
}

/// Smallest-area healthy triple whose geographic triangle contains
/// `asserted`; ties go to the lexicographically smallest id triple.
pub fn select_triangle(asserted: GeoPoint, registry: &VerifierRegistry) -> Result<SelectedTriangle, ManagerError> {
    let mut ok: Vec<&RegisteredVerifier> = registry.healthy().collect();
    if ok.len() < 3 {
        return Err(ManagerError::TooFewVerifiers { available: ok.len() });
    }
    ok.sort_by_key(|v| v.id);
    let mut best: Option<SelectedTriangle> = None;
    for i in 0..ok.len() {
        for j in i + 1..ok.len() {
            for k in j + 1..ok.len() {
                let vertices = [ok[i].location, ok[j].location, ok[k].location];
                if !spherical_triangle_contains(&vertices, asserted) {
                    continue;
                }
                let area_km2 = geographic_area_km2(&vertices);
                if area_km2 <= 0.0 {
                    continue;
                }
                // Iteration order is lexicographic, so strict improvement keeps the first tie.
                if best.as_ref().map_or(true, |b| area_km2 < b.area_km2) {
                    best = Some(SelectedTriangle { ids: [ok[i].id, ok[j].id, ok[k].id], vertices, area_km2 });
                }
            }
        }
    }
    best.ok_or_else(|| {
        ok.sort_by(|a, b| {
            great_circle_km(a.location, asserted).total_cmp(&great_circle_km(b.location, asserted)).then(a.id.cmp(&b.id))
        });
        let mut nearest = [ok[0].id, ok[1].id, ok[2].id];
        nearest.sort_unstable();
        ManagerError::NoCoverage { nearest }
    })
}

/// Transport used by the Manager to run a presence verification.
pub trait CpvBackend {
    /// Current baseline (x = AB, y = BC, z = CA) and the age of its oldest
    /// component, or `None` when any is missing or stale.
    fn baselines(&mut self, triangle: &SelectedTriangle) -> Option<(Baseline, f64)>;

    /// Connects the granted client to all three verifiers. `None` when the
    /// client did not reach every verifier in time.
    fn open_session<'a>(
        &'a mut self,
        grant: &SessionGrant,
        triangle: &SelectedTriangle,
    ) -> Option<Box<dyn RelayChannel + 'a>>;
}

/// Transport used by the Manager for server probes.
pub trait SlvBackend {
    /// Probes `server` from each verifier; entries align with `verifiers`.
    /// Implementations may run the probes concurrently.
    fn probe_all(&mut self, verifiers: &[RegisteredVerifier], server: IpAddr) -> Vec<Result<ProbeEstimate, ProbeError>>;

    /// Current inter-verifier one-way delay, if fresh.
    fn inter_verifier_owd(&mut self, a: u16, b: u16) -> Option<f64>;
}

/// One line of the results log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultEntry {
    pub request_id: u64,
    pub at_ms: u64,
    pub asserted: GeoPoint,
    #[serde(flatten)]
    pub outcome: LoggedOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LoggedOutcome {
    Cpv {
        decision: Decision,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reason: Option<IndeterminateReason>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        verifiers: Option<[u16; 3]>,
        valid: u32,
        passed: u32,
        total: u32,
    },
    Slv {
        server_ip: IpAddr,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        domain: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        verdict: Option<SlvVerdict>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        indeterminate: Option<String>,
    },
}

/// Append-only JSON-lines results log; single writer.
#[derive(Debug, Default)]
pub struct ResultsLog {
    file: Option<File>,
    entries: Vec<ResultEntry>,
}

impl ResultsLog {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn open(path: &Path) -> std::io::Result<Self> {
        Ok(Self { file: Some(OpenOptions::new().create(true).append(true).open(path)?), entries: Vec::new() })
    }

    pub fn append(&mut self, entry: ResultEntry) -> std::io::Result<()> {
        if let Some(f) = self.file.as_mut() {
            let mut line = serde_json::to_string(&entry).expect("results serialize");
            line.push('\n');
            f.write_all(line.as_bytes())?;
            f.flush()?;
        }
        self.entries.push(entry);
        Ok(())
    }

    /// Entries written by this process.
    pub fn entries(&self) -> &[ResultEntry] {
        &self.entries
    }
}

/// Response to an SLV request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlvResponse {
    pub verifiers: [u16; 3],
    pub check: SlvCheck,
    /// `None` when the check was indeterminate.
    pub verdict: Option<SlvVerdict>,
}

#[derive(Debug, Clone)]
pub struct ManagerConfig {
    /// `None` means no calibration is available; CPV requests then end
    /// indeterminate.
    pub params: Option<CalibrationParams>,
    pub verify: VerifyOptions,
    pub slv: SlvConfig,
    pub grant_lifetime_ms: u64,
}

impl Default for ManagerConfig {
    fn default() -> Self {
        Self {
            params: Some(CalibrationParams::demo_defaults()),
            verify: VerifyOptions::default(),
            slv: SlvConfig::default(),
            grant_lifetime_ms: 120_000,
        }
    }
}

/// A CPV request that passed selection and holds a grant.
#[derive(Debug, Clone)]
pub struct CpvTicket {
    pub asserted: GeoPoint,
    pub triangle: SelectedTriangle,
    pub params: CalibrationParams,
    pub grant: SessionGrant,
}

/// Measures a ticket's client through `backend`. Stale or missing
/// baselines and unreachable clients end indeterminate without measuring.
pub fn run_cpv<B: CpvBackend + ?Sized>(
    ticket: &CpvTicket,
    backend: &mut B,
    opts: &VerifyOptions,
) -> Result<VerificationResult, ManagerError> {
    let Some((baseline, age_ms)) = backend.baselines(&ticket.triangle) else {
        return Ok(VerificationResult::indeterminate(IndeterminateReason::StaleBaseline));
    };
    Ok(match backend.open_session(&ticket.grant, &ticket.triangle) {
        None => VerificationResult::indeterminate(IndeterminateReason::NotConnected),
        Some(mut channel) => verify_presence(channel.as_mut(), baseline, age_ms, &ticket.params, opts)?,
    })
}

pub struct Manager {
    pub registry: VerifierRegistry,
    pub config: ManagerConfig,
    /// Per-triangle calibrated parameters, overriding `config.params`.
    pub calibrated: BTreeMap<[u16; 3], CalibrationParams>,
    pub pins: PinStore,
    pub results: ResultsLog,
    signing_key: SigningKey,
    rng: ChaCha20Rng,
    next_request: u64,
}

impl Manager {
    pub fn new(registry: VerifierRegistry, config: ManagerConfig, signing_key: SigningKey, pins: PinStore, results: ResultsLog) -> Self {
        Self {
            registry,
            config,
            calibrated: BTreeMap::new(),
            pins,
            results,
            signing_key,
            rng: ChaCha20Rng::from_entropy(),
            next_request: 0,
        }
    }

    /// Replaces the grant RNG with a seeded one (reproducible session ids).
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng = ChaCha20Rng::seed_from_u64(seed);
        self
    }

    pub fn verifying_key(&self) -> ed25519_dalek::VerifyingKey {
        self.signing_key.verifying_key()
    }

    pub fn issue_grant(&mut self, asserted: GeoPoint, now_ms: u64) -> SessionGrant {
        SessionGrant::issue(&self.signing_key, asserted, now_ms + self.config.grant_lifetime_ms, &mut self.rng)
    }

    fn log(&mut self, asserted: GeoPoint, now_ms: u64, outcome: LoggedOutcome) -> Result<(), ManagerError> {
        let request_id = self.next_request;
        self.next_request += 1;
        self.results.append(ResultEntry { request_id, at_ms: now_ms, asserted, outcome })?;
        Ok(())
    }

    fn log_cpv(&mut self, asserted: GeoPoint, now_ms: u64, ids: Option<[u16; 3]>, r: &VerificationResult) -> Result<(), ManagerError> {
        self.log(
            asserted,
            now_ms,
            LoggedOutcome::Cpv {
                decision: r.decision,
                reason: r.indeterminate_reason,
                verifiers: ids,
                valid: r.iterations_valid,
                passed: r.iterations_passed,
                total: r.iterations_total,
            },
        )
    }

    /// Full presence verification. Every call that returns `Ok` has logged
    /// exactly one entry; coverage failures are logged as indeterminate.
    pub fn handle_cpv_request<B: CpvBackend + ?Sized>(
        &mut self,
        asserted: GeoPoint,
        backend: &mut B,
        now_ms: u64,
    ) -> Result<(VerificationResult, Option<SessionGrant>), ManagerError> {
        let ticket = match self.begin_cpv(asserted, now_ms)? {
            Ok(t) => t,
            Err(r) => return Ok((r, None)),
        };
        let result = run_cpv(&ticket, backend, &self.config.verify)?;
        self.finish_cpv(&ticket, &result, now_ms)?;
        Ok((result, Some(ticket.grant)))
    }

    /// First half of [`Self::handle_cpv_request`]: selects the triangle and
    /// issues the grant. An early indeterminate result is logged here and
    /// returned as `Ok(Err(_))`.
    ///
    /// Services that measure many clients at once call this, run
    /// [`run_cpv`] without holding the Manager, then [`Self::finish_cpv`].
    pub fn begin_cpv(&mut self, asserted: GeoPoint, now_ms: u64) -> Result<Result<CpvTicket, VerificationResult>, ManagerError> {
        let triangle = match select_triangle(asserted, &self.registry) {
            Ok(t) => t,
            Err(ManagerError::NoCoverage { .. } | ManagerError::TooFewVerifiers { .. }) => {
                let r = VerificationResult::indeterminate(IndeterminateReason::NoCoverage);
                self.log_cpv(asserted, now_ms, None, &r)?;
                return Ok(Err(r));
            }
            Err(e) => return Err(e),
        };
        let Some(params) = self.calibrated.get(&triangle.ids).copied().or(self.config.params) else {
            let r = VerificationResult::indeterminate(IndeterminateReason::MissingCalibration);
            self.log_cpv(asserted, now_ms, Some(triangle.ids), &r)?;
            return Ok(Err(r));
        };
        let grant = self.issue_grant(asserted, now_ms);
        Ok(Ok(CpvTicket { asserted, triangle, params, grant }))
    }

    /// Logs the outcome of a ticket's verification.
    pub fn finish_cpv(&mut self, ticket: &CpvTicket, result: &VerificationResult, now_ms: u64) -> Result<(), ManagerError> {
        self.log_cpv(ticket.asserted, now_ms, Some(ticket.triangle.ids), result)
    }

    /// Server location verification with verdict classification. Pins
    /// change only on a completed, passing check.
    pub fn handle_slv_request<B: SlvBackend + ?Sized>(
        &mut self,
        request: &SlvRequest,
        backend: &mut B,
        now_ms: u64,
    ) -> Result<Option<SlvResponse>, ManagerError> {
        let triangle = match select_triangle(request.asserted, &self.registry) {
            Ok(t) => t,
            Err(ManagerError::NoCoverage { .. } | ManagerError::TooFewVerifiers { .. }) => {
                self.log_slv(request, now_ms, None, Some("no_coverage".into()))?;
                return Ok(None);
            }
            Err(e) => return Err(e),
        };
        let chosen: Vec<RegisteredVerifier> =
            triangle.ids.iter().filter_map(|id| self.registry.get(*id).cloned()).collect();
        let probes = backend.probe_all(&chosen, request.server_ip);
        let mut rtts = BTreeMap::new();
        for (v, probe) in chosen.iter().zip(probes) {
            if let Ok(est) = probe {
                rtts.insert(v.id, est.min_rtt_ms);
            }
        }
        let mut inter = BTreeMap::new();
        for (i, a) in triangle.ids.iter().enumerate() {
            for b in &triangle.ids[i + 1..] {
                if let Some(d) = backend.inter_verifier_owd(*a, *b) {
                    inter.insert(((*a).min(*b), (*a).max(*b)), d);
                }
            }
        }
        let verifiers: Vec<SlvVerifier> = chosen.iter().map(|v| SlvVerifier { id: v.id, location: v.location }).collect();
        let check = slv_verify(request, &verifiers, &rtts, &inter, &self.config.slv);
        let verdict = match &check {
            SlvCheck::Checked { passed, .. } => {
                Some(classify_verdict(request.domain.as_deref(), request.asserted, *passed, &mut self.pins, now_ms)?)
            }
            SlvCheck::Indeterminate(_) => None,
        };
        let reason = match &check {
            SlvCheck::Indeterminate(r) => Some(indeterminate_label(*r).to_string()),
            _ => None,
        };
        self.log_slv(request, now_ms, verdict, reason)?;
        Ok(Some(SlvResponse { verifiers: triangle.ids, check, verdict }))
    }

    fn log_slv(&mut self, request: &SlvRequest, now_ms: u64, verdict: Option<SlvVerdict>, indeterminate: Option<String>) -> Result<(), ManagerError> {
        self.log(
            request.asserted,
            now_ms,
            LoggedOutcome::Slv { server_ip: request.server_ip, domain: request.domain.clone(), verdict, indeterminate },
        )
    }
}

fn indeterminate_label(r: SlvIndeterminate) -> &'static str {
    match r {
        SlvIndeterminate::TooFewVerifiers => "too_few_verifiers",
        SlvIndeterminate::NoCoveringPair => "no_covering_pair",
        SlvIndeterminate::MissingInterVerifierDelay => "missing_inter_verifier_delay",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mp::{RawRelay, RelayError, Role};
    use crate::slv::{ProbeLayer, ProbeSample, SlvOutcome};

    fn gp(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    fn reg(points: &[(u16, f64, f64)]) -> VerifierRegistry {
        VerifierRegistry::new(
            points
                .iter()
                .map(|&(id, lat, lon)| RegisteredVerifier { id, location: gp(lat, lon), address: String::new(), health: Health::Ok })
                .collect(),
        )
    }

    #[test]
    fn single_triple_selected_at_centroid() {
        let r = reg(&[(1, 40.0, -100.0), (2, 40.0, -96.0), (3, 43.0, -98.0)]);
        let c = GeoPoint::centroid(&[gp(40.0, -100.0), gp(40.0, -96.0), gp(43.0, -98.0)]);
        assert_eq!(select_triangle(c, &r).unwrap().ids, [1, 2, 3]);
    }

    #[test]
    fn outside_hull_is_no_coverage() {
        let r = reg(&[(1, 40.0, -100.0), (2, 40.0, -96.0), (3, 43.0, -98.0), (4, 30.0, -80.0)]);
        match select_triangle(gp(10.0, -50.0), &r) {
            Err(ManagerError::NoCoverage { nearest }) => assert_eq!(nearest.len(), 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn nested_triples_pick_smaller() {
        let r = reg(&[(1, 30.0, -110.0), (2, 30.0, -90.0), (3, 45.0, -100.0), (4, 36.0, -101.0), (5, 36.0, -99.0), (6, 38.0, -100.0)]);
        let t = select_triangle(gp(36.7, -100.0), &r).unwrap();
        assert_eq!(t.ids, [4, 5, 6]);
        let mut degraded = r.clone();
        degraded.set_health(5, Health::Degraded);
        assert!(!select_triangle(gp(36.7, -100.0), &degraded).unwrap().ids.contains(&5));
    }

    #[test]
    fn too_few_healthy() {
        let mut r = reg(&[(1, 40.0, -100.0), (2, 40.0, -96.0), (3, 43.0, -98.0)]);
        r.set_health(2, Health::Down);
        assert!(matches!(select_triangle(gp(41.0, -98.0), &r), Err(ManagerError::TooFewVerifiers { available: 2 })));
    }

    struct FakeSlv {
        rtt: BTreeMap<u16, f64>,
        inter: f64,
    }

    impl SlvBackend for FakeSlv {
        fn probe_all(&mut self, verifiers: &[RegisteredVerifier], _: IpAddr) -> Vec<Result<ProbeEstimate, ProbeError>> {
            verifiers
                .iter()
                .map(|v| match self.rtt.get(&v.id) {
                    Some(&rtt_ms) => Ok(ProbeEstimate {
                        verifier: v.id,
                        min_rtt_ms: rtt_ms,
                        samples: vec![ProbeSample { layer: ProbeLayer::TcpHandshake, rtt_ms, verifier: v.id, timestamp_ms: 0 }],
                    }),
                    None => Err(ProbeError::ProbeFailed { verifier: v.id, reason: "down".into() }),
                })
                .collect()
        }

        fn inter_verifier_owd(&mut self, _: u16, _: u16) -> Option<f64> {
            Some(self.inter)
        }
    }

    fn manager() -> Manager {
        let r = reg(&[(1, 40.0, -100.0), (2, 40.0, -96.0), (3, 43.0, -98.0)]);
        let key = SigningKey::from_bytes(&[7; 32]);
        Manager::new(r, ManagerConfig::default(), key, PinStore::in_memory(0.5), ResultsLog::in_memory()).with_seed(1)
    }

    #[test]
    fn slv_verdict_sequence_and_log() {
        let mut m = manager();
        let req = SlvRequest { server_ip: "192.0.2.1".parse().unwrap(), asserted: gp(41.0, -98.0), domain: Some("shop.test".into()) };
        let near = BTreeMap::from([(1, 3.0), (2, 3.0), (3, 3.0)]);
        let far = BTreeMap::from([(1, 40.0), (2, 40.0), (3, 40.0)]);

        let mut b = FakeSlv { rtt: far.clone(), inter: 2.0 };
        let r = m.handle_slv_request(&req, &mut b, 1).unwrap().unwrap();
        assert_eq!(r.verdict.unwrap().outcome, SlvOutcome::Suspicious);

        b.rtt = near;
        let r = m.handle_slv_request(&req, &mut b, 2).unwrap().unwrap();
        assert_eq!(r.verdict.unwrap().outcome, SlvOutcome::Unsuspicious);

        b.rtt = far;
        let r = m.handle_slv_request(&req, &mut b, 3).unwrap().unwrap();
        assert_eq!(r.verdict.unwrap().outcome, SlvOutcome::Critical);

        b.rtt = BTreeMap::from([(1, 3.0), (2, 3.0)]);
        let r = m.handle_slv_request(&req, &mut b, 4).unwrap().unwrap();
        assert_eq!(r.verdict, None);
        assert_eq!(m.pins.lookup("shop.test")[0].last_verified, 2);
        let ids: Vec<u64> = m.results.entries().iter().map(|e| e.request_id).collect();
        assert_eq!(ids, vec![0, 1, 2, 3]);
    }

    struct NoClient;

    impl CpvBackend for NoClient {
        fn baselines(&mut self, _: &SelectedTriangle) -> Option<(Baseline, f64)> {
            Some((Baseline { x: 2.0, y: 2.0, z: 2.0 }, 0.0))
        }

        fn open_session<'a>(&'a mut self, _: &SessionGrant, _: &SelectedTriangle) -> Option<Box<dyn RelayChannel + 'a>> {
            None
        }
    }

    struct Silent;

    impl RelayChannel for Silent {
        fn relay_turn(&mut self, _: Role, _: u32) -> Result<Vec<RawRelay>, RelayError> {
            Ok(Vec::new())
        }
    }

    struct PartialClient;

    impl CpvBackend for PartialClient {
        fn baselines(&mut self, _: &SelectedTriangle) -> Option<(Baseline, f64)> {
            Some((Baseline { x: 2.0, y: 2.0, z: 2.0 }, 0.0))
        }

        fn open_session<'a>(&'a mut self, _: &SessionGrant, _: &SelectedTriangle) -> Option<Box<dyn RelayChannel + 'a>> {
            Some(Box::new(Silent))
        }
    }

    #[test]
    fn cpv_indeterminate_paths_are_logged_once() {
        let mut m = manager();
        let inside = gp(41.0, -98.0);
        let (r, grant) = m.handle_cpv_request(inside, &mut NoClient, 10).unwrap();
        assert_eq!(r.indeterminate_reason, Some(IndeterminateReason::NotConnected));
        grant.unwrap().verify(&m.verifying_key(), 10).unwrap();

        let (r, _) = m.handle_cpv_request(inside, &mut PartialClient, 11).unwrap();
        assert_eq!(r.decision, Decision::Indeterminate);

        let (r, _) = m.handle_cpv_request(gp(0.0, 0.0), &mut NoClient, 12).unwrap();
        assert_eq!(r.indeterminate_reason, Some(IndeterminateReason::NoCoverage));

        m.config.params = None;
        let (r, _) = m.handle_cpv_request(inside, &mut NoClient, 13).unwrap();
        assert_eq!(r.indeterminate_reason, Some(IndeterminateReason::MissingCalibration));
        assert_eq!(m.results.entries().len(), 4);
    }
}
