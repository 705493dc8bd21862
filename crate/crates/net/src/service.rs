//! The Manager service: accepts client requests, drives verifiers, and
//! answers with verdicts.
//!
//! CPV requests measure concurrently: the Manager is locked only to select
//! the triangle and issue the grant, and again to log the outcome.

use std::collections::HashMap;
use std::net::{IpAddr, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use geoverity::cpv::{Decision, VerificationResult};
use geoverity::geometry::Baseline;
use geoverity::manager::{
    run_cpv, CpvBackend, Health, Manager, RegisteredVerifier, ResultEntry, SelectedTriangle, SlvBackend,
};
use geoverity::mp::{RawRelay, RelayChannel, RelayError, Role};
use geoverity::slv::{estimate_from_samples, ProbeError, ProbeEstimate, SlvCheck, SlvRequest};
use geoverity::wire::{
    frame_decode, session_key, Endpoint, KeyRing, MsgType, SessionGrant, VerifyRequest, VerifyResponse, WireMessage,
    CLIENT_ID, MANAGER_ID,
};

use crate::conn::{self, message, wall_ms, SharedWriter};
use crate::{NetError, Result};

/// Indeterminate SLV outcome code on the wire.
pub const SLV_INDETERMINATE: u8 = 4;

pub fn decision_code(d: Decision) -> u8 {
    match d {
        Decision::Accepted => 0,
        Decision::Rejected => 1,
        Decision::Indeterminate => 2,
    }
}

pub fn decision_from_code(c: u8) -> Option<Decision> {
    Some(match c {
        0 => Decision::Accepted,
        1 => Decision::Rejected,
        2 => Decision::Indeterminate,
        _ => return None,
    })
}

#[derive(Debug, Clone)]
pub struct ManagerServiceConfig {
    pub listen: String,
    /// Keys shared between the Manager (id 0) and every verifier.
    pub keys: KeyRing,
    /// Per-command response timeout (baseline queries, session setup).
    pub command_timeout: Duration,
    /// How long the client has to reach all three verifiers.
    pub join_timeout: Duration,
    /// How long one turn may take before missing relays count as lost.
    pub turn_timeout: Duration,
    /// Port probed on servers under SLV.
    pub probe_port: u16,
    pub probe_samples: u8,
    /// Puzzle difficulty attached to relayed timestamps.
    pub difficulty: u8,
    /// Interval of the verifier health check; `None` disables it.
    pub health_period: Option<Duration>,
}

impl ManagerServiceConfig {
    pub fn new(listen: impl Into<String>, keys: KeyRing) -> Self {
        Self {
            listen: listen.into(),
            keys,
            command_timeout: Duration::from_secs(5),
            join_timeout: Duration::from_secs(5),
            turn_timeout: Duration::from_secs(2),
            probe_port: 443,
            probe_samples: 3,
            difficulty: 8,
            health_period: Some(Duration::from_secs(30)),
        }
    }
}

pub struct ManagerHandle {
    pub addr: SocketAddr,
    manager: Arc<Mutex<Manager>>,
    stop: Arc<AtomicBool>,
}

impl ManagerHandle {
    pub fn results(&self) -> Vec<ResultEntry> {
        self.manager.lock().expect("manager lock").results.entries().to_vec()
    }

    /// Runs `f` with the Manager locked (registry edits, calibration).
    pub fn with_manager<T>(&self, f: impl FnOnce(&mut Manager) -> T) -> T {
        f(&mut self.manager.lock().expect("manager lock"))
    }

    pub fn stop(&self) {
        self.stop.store(true, Ordering::Relaxed);
    }
}

impl Drop for ManagerHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

struct Service {
    cfg: ManagerServiceConfig,
    manager: Arc<Mutex<Manager>>,
}

pub fn spawn_manager(manager: Manager, cfg: ManagerServiceConfig) -> Result<ManagerHandle> {
    let listener = TcpListener::bind(&cfg.listen)?;
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let manager = Arc::new(Mutex::new(manager));
    let svc = Arc::new(Service { cfg, manager: Arc::clone(&manager) });
    if let Some(period) = svc.cfg.health_period {
        let checker = Arc::clone(&svc);
        let stop = Arc::clone(&stop);
        thread::spawn(move || {
            while !stop.load(Ordering::Relaxed) {
                checker.check_health();
                thread::sleep(period);
            }
        });
    }
    let serving = Arc::clone(&svc);
    conn::serve(listener, Arc::clone(&stop), move |s| serving.handle_client(s))?;
    log::info!("manager listening on {addr}");
    Ok(ManagerHandle { addr, manager, stop })
}

/// One request/response exchange with a verifier over a fresh connection.
fn command(keys: &KeyRing, addr: &str, vid: u16, req: &VerifyRequest, timeout: Duration) -> Result<VerifyResponse> {
    let key = *keys.get(MANAGER_ID, vid)?;
    let mut s = conn::connect(addr, timeout)?;
    s.set_read_timeout(Some(timeout))?;
    let sid: [u8; 16] = rand::random();
    conn::send(&mut s, &message(MsgType::VerifyRequest, sid, 0, MANAGER_ID, wall_ms() as i64, req.encode()), &key)?;
    let m = conn::recv_with(&mut s, &key)?;
    if m.origin_id != vid || m.msg_type != MsgType::VerifyResponse {
        return Err(NetError::Protocol(format!("unexpected reply from verifier {vid}")));
    }
    Ok(VerifyResponse::decode(&m.payload, vid)?)
}

impl Service {
    fn registry(&self) -> Vec<RegisteredVerifier> {
        self.manager.lock().expect("manager lock").registry.verifiers.clone()
    }

    fn check_health(&self) {
        for v in self.registry() {
            let ok = matches!(
                command(&self.cfg.keys, &v.address, v.id, &VerifyRequest::BaselineQuery, self.cfg.command_timeout),
                Ok(VerifyResponse::BaselineReport { .. })
            );
            let health = if ok { Health::Ok } else { Health::Down };
            if health != v.health {
                log::warn!("verifier {} is now {health:?}", v.id);
            }
            self.manager.lock().expect("manager lock").registry.set_health(v.id, health);
        }
    }

    fn handle_client(&self, stream: TcpStream) {
        let Ok(w) = stream.try_clone() else { return };
        let writer: SharedWriter = Arc::new(Mutex::new(w));
        let mut reader = stream;
        while let Ok(bytes) = conn::recv(&mut reader) {
            if let Err(e) = self.request(&bytes, &writer) {
                log::debug!("manager: request failed: {e}");
            }
        }
    }

    fn request(&self, bytes: &[u8], w: &SharedWriter) -> Result<()> {
        let h = geoverity::wire::peek_header(bytes)?;
        if h.origin_id != CLIENT_ID {
            return Err(NetError::Protocol(format!("request from non-client origin {}", h.origin_id)));
        }
        let key = session_key(&h.session_id);
        let msg = frame_decode(bytes, &key)?;
        if msg.msg_type != MsgType::VerifyRequest {
            return Err(NetError::Protocol(format!("unexpected {:?} from client", msg.msg_type)));
        }
        let respond = |resp: VerifyResponse| {
            let m = message(MsgType::VerifyResponse, msg.session_id, msg.seq, MANAGER_ID, wall_ms() as i64, resp.encode());
            conn::send_shared(w, &m, &key)
        };
        match VerifyRequest::decode(&msg.payload)? {
            VerifyRequest::Cpv { asserted } => {
                let result = self.cpv(asserted, w, &msg)?;
                respond(VerifyResponse::CpvResult {
                    decision: decision_code(result.decision),
                    total: result.iterations_total,
                    valid: result.iterations_valid,
                    passed: result.iterations_passed,
                })
            }
            VerifyRequest::Slv { ip, asserted, domain } => {
                let req = SlvRequest { server_ip: ip, asserted, domain };
                let mut backend = self.backend(None);
                // Probing happens under the lock: the pin store must see the
                // check and its verdict atomically.
                let resp = self.manager.lock().expect("manager lock").handle_slv_request(&req, &mut backend, wall_ms())?;
                let (outcome, verification_passed, pairs) = match resp {
                    None => (SLV_INDETERMINATE, false, Vec::new()),
                    Some(r) => {
                        let pairs = match r.check {
                            SlvCheck::Checked { pairs, .. } => pairs,
                            SlvCheck::Indeterminate(_) => Vec::new(),
                        };
                        let outcome = r.verdict.map_or(SLV_INDETERMINATE, |v| v.outcome.code());
                        (outcome, r.verdict.is_some_and(|v| v.verification_passed), pairs)
                    }
                };
                respond(VerifyResponse::Slv { outcome, verification_passed, pairs })
            }
            other => respond(VerifyResponse::Error { message: format!("the Manager does not serve {other:?}") }),
        }
    }

    fn cpv(&self, asserted: geoverity::geometry::GeoPoint, w: &SharedWriter, req: &WireMessage) -> Result<VerificationResult> {
        let (ticket, opts) = {
            let mut m = self.manager.lock().expect("manager lock");
            match m.begin_cpv(asserted, wall_ms())? {
                Err(early) => return Ok(early),
                Ok(t) => (t, m.config.verify),
            }
        };
        let mut backend = self.backend(Some((Arc::clone(w), req.session_id, req.seq)));
        let result = run_cpv(&ticket, &mut backend, &opts)?;
        self.manager.lock().expect("manager lock").finish_cpv(&ticket, &result, wall_ms())?;
        log::info!("cpv {:?}: {:?} ({}/{} valid passed)", ticket.triangle.ids, result.decision, result.iterations_passed, result.iterations_valid);
        Ok(result)
    }

    fn backend(&self, client: Option<(SharedWriter, [u8; 16], u32)>) -> LiveBackend {
        LiveBackend { cfg: self.cfg.clone(), registry: self.registry(), client, reports: HashMap::new() }
    }
}

/// Manager-side transport over live verifier connections.
pub struct LiveBackend {
    cfg: ManagerServiceConfig,
    registry: Vec<RegisteredVerifier>,
    /// Client request connection, its session id and request seq.
    client: Option<(SharedWriter, [u8; 16], u32)>,
    reports: HashMap<u16, HashMap<u16, f64>>,
}

impl LiveBackend {
    fn address(&self, id: u16) -> Option<&str> {
        self.registry.iter().find(|v| v.id == id).map(|v| v.address.as_str())
    }

    fn report(&mut self, id: u16) -> &HashMap<u16, f64> {
        if !self.reports.contains_key(&id) {
            let got = match self.address(id) {
                Some(addr) => {
                    match command(&self.cfg.keys, addr, id, &VerifyRequest::BaselineQuery, self.cfg.command_timeout) {
                        Ok(VerifyResponse::BaselineReport { entries }) => {
                            entries.into_iter().filter(|(_, v)| v.is_finite()).collect()
                        }
                        _ => HashMap::new(),
                    }
                }
                None => HashMap::new(),
            };
            self.reports.insert(id, got);
        }
        &self.reports[&id]
    }

    /// Both endpoints' views of the pair; the smaller wins.
    fn pair_owd(&mut self, a: u16, b: u16) -> Option<f64> {
        let ab = self.report(a).get(&b).copied();
        let ba = self.report(b).get(&a).copied();
        match (ab, ba) {
            (Some(x), Some(y)) => Some(x.min(y)),
            (x, y) => x.or(y),
        }
    }
}

impl CpvBackend for LiveBackend {
    fn baselines(&mut self, t: &SelectedTriangle) -> Option<(Baseline, f64)> {
        let [a, b, c] = t.ids;
        let x = self.pair_owd(a, b)?;
        let y = self.pair_owd(b, c)?;
        let z = self.pair_owd(c, a)?;
        // Verifiers only report baselines that are fresh.
        Some((Baseline { x, y, z }, 0.0))
    }

    fn open_session<'a>(&'a mut self, grant: &SessionGrant, t: &SelectedTriangle) -> Option<Box<dyn RelayChannel + 'a>> {
        match LiveSession::open(self, grant, t) {
            Ok(s) => Some(Box::new(s)),
            Err(e) => {
                log::info!("session {:?} not established: {e}", t.ids);
                None
            }
        }
    }
}

impl SlvBackend for LiveBackend {
    fn probe_all(&mut self, verifiers: &[RegisteredVerifier], server: IpAddr) -> Vec<Result<ProbeEstimate, ProbeError>> {
        let req = VerifyRequest::Probe { ip: server, port: self.cfg.probe_port, samples: self.cfg.probe_samples };
        let workers: Vec<_> = verifiers
            .iter()
            .map(|v| {
                let (keys, addr, id, req) = (self.cfg.keys.clone(), v.address.clone(), v.id, req.clone());
                // Each verifier probes every layer `samples` times.
                let timeout = self.cfg.command_timeout * 4;
                thread::spawn(move || match command(&keys, &addr, id, &req, timeout) {
                    Ok(VerifyResponse::ProbeResult { samples }) => estimate_from_samples(id, samples),
                    Ok(VerifyResponse::Error { message }) => Err(ProbeError::ProbeFailed { verifier: id, reason: message }),
                    Ok(other) => Err(ProbeError::ProbeFailed { verifier: id, reason: format!("unexpected {other:?}") }),
                    Err(e) => Err(ProbeError::ProbeFailed { verifier: id, reason: e.to_string() }),
                })
            })
            .collect();
        workers
            .into_iter()
            .zip(verifiers)
            .map(|(h, v)| {
                h.join().unwrap_or_else(|_| Err(ProbeError::ProbeFailed { verifier: v.id, reason: "probe thread panicked".into() }))
            })
            .collect()
    }

    fn inter_verifier_owd(&mut self, a: u16, b: u16) -> Option<f64> {
        self.pair_owd(a, b)
    }
}

enum Event {
    Frame(u16, WireMessage, VerifyResponse),
    Closed(u16),
}

/// Watcher connections to the three verifiers of one session.
struct LiveSession {
    ids: [u16; 3],
    sid: [u8; 16],
    streams: Vec<TcpStream>,
    keys: [[u8; 32]; 3],
    events: Receiver<Event>,
    turn_timeout: Duration,
    difficulty: u8,
}

impl LiveSession {
    fn open(backend: &LiveBackend, grant: &SessionGrant, t: &SelectedTriangle) -> Result<Self> {
        let Some((client, client_sid, client_seq)) = &backend.client else {
            return Err(NetError::Protocol("no client connection".into()));
        };
        let cfg = &backend.cfg;
        let mut verifiers = Vec::with_capacity(3);
        for id in t.ids {
            let addr = backend.address(id).ok_or_else(|| NetError::Protocol(format!("verifier {id} not registered")))?;
            verifiers.push(Endpoint { id, addr: addr.to_string() });
        }
        let offer = VerifyResponse::CpvGrant { grant: grant.to_bytes(), verifiers: verifiers.clone() };
        conn::send_shared(
            client,
            &message(MsgType::VerifyResponse, *client_sid, *client_seq, MANAGER_ID, wall_ms() as i64, offer.encode()),
            &session_key(client_sid),
        )?;

        let mut init = grant.to_bytes();
        for id in t.ids {
            init.extend_from_slice(&id.to_be_bytes());
        }
        let (tx, rx) = mpsc::channel();
        let mut streams = Vec::with_capacity(3);
        let mut keys = [[0u8; 32]; 3];
        for (i, v) in verifiers.iter().enumerate() {
            let key = *cfg.keys.get(MANAGER_ID, v.id)?;
            keys[i] = key;
            let mut s = conn::connect(&v.addr, cfg.command_timeout)?;
            let hello = message(MsgType::SessionInit, grant.session_id, 0, MANAGER_ID, wall_ms() as i64, init.clone());
            conn::send(&mut s, &hello, &key)?;
            spawn_reader(s.try_clone()?, v.id, key, tx.clone());
            streams.push(s);
        }
        let session = Self {
            ids: t.ids,
            sid: grant.session_id,
            streams,
            keys,
            events: rx,
            turn_timeout: cfg.turn_timeout,
            difficulty: cfg.difficulty,
        };
        session.await_joins(cfg.join_timeout)?;
        Ok(session)
    }

    fn await_joins(&self, timeout: Duration) -> Result<()> {
        let deadline = Instant::now() + timeout;
        let mut joined = [false; 3];
        while !joined.iter().all(|j| *j) {
            let left = deadline.saturating_duration_since(Instant::now());
            match self.events.recv_timeout(left) {
                Ok(Event::Frame(id, _, VerifyResponse::ClientJoined)) => {
                    if let Some(i) = self.role_of(id) {
                        joined[i] = true;
                    }
                }
                Ok(Event::Frame(id, _, VerifyResponse::Error { message })) => {
                    return Err(NetError::Protocol(format!("verifier {id}: {message}")))
                }
                Ok(Event::Frame(..)) => {}
                Ok(Event::Closed(id)) => return Err(NetError::Protocol(format!("verifier {id} closed the session"))),
                Err(_) => return Err(NetError::Protocol("client did not reach every verifier in time".into())),
            }
        }
        Ok(())
    }

    fn role_of(&self, id: u16) -> Option<usize> {
        self.ids.iter().position(|v| *v == id)
    }
}

fn spawn_reader(mut s: TcpStream, id: u16, key: [u8; 32], tx: Sender<Event>) {
    thread::spawn(move || loop {
        let frame = conn::recv_with(&mut s, &key).and_then(|m| {
            let resp = VerifyResponse::decode(&m.payload, id)?;
            Ok((m, resp))
        });
        let event = match frame {
            Ok((m, _)) if m.origin_id != id => continue,
            Ok((m, resp)) => Event::Frame(id, m, resp),
            Err(_) => Event::Closed(id),
        };
        let closed = matches!(event, Event::Closed(_));
        if tx.send(event).is_err() || closed {
            return;
        }
    });
}

impl RelayChannel for LiveSession {
    fn relay_turn(&mut self, origin: Role, seq: u32) -> Result<Vec<RawRelay>, RelayError> {
        let o = origin.index();
        let cmd = message(
            MsgType::VerifyRequest,
            self.sid,
            seq,
            MANAGER_ID,
            wall_ms() as i64,
            VerifyRequest::RunTurn { difficulty: self.difficulty }.encode(),
        );
        conn::send(&mut self.streams[o], &cmd, &self.keys[o]).map_err(|e| RelayError::Closed(e.to_string()))?;
        let deadline = Instant::now() + self.turn_timeout;
        let mut relays: Vec<RawRelay> = Vec::with_capacity(2);
        while relays.len() < 2 {
            let left = deadline.saturating_duration_since(Instant::now());
            let (id, m, resp) = match self.events.recv_timeout(left) {
                Ok(Event::Frame(id, m, resp)) => (id, m, resp),
                Ok(Event::Closed(id)) => return Err(RelayError::Closed(format!("verifier {id} disconnected"))),
                Err(RecvTimeoutError::Timeout) => break,
                Err(RecvTimeoutError::Disconnected) => return Err(RelayError::Closed("all readers gone".into())),
            };
            let Some(observer) = self.role_of(id).and_then(Role::from_index) else { continue };
            match resp {
                VerifyResponse::Observation { origin: from, send_ts_ms, recv_ts_ms, correction_ms }
                    if from == self.ids[o] && m.seq == seq && observer != origin =>
                {
                    if relays.iter().all(|r| r.observer != observer) {
                        // Offsets are applied here: the verifier knows its own.
                        relays.push(RawRelay {
                            observer,
                            send_ts: send_ts_ms as f64,
                            recv_ts: recv_ts_ms as f64 + correction_ms,
                        });
                    }
                }
                VerifyResponse::Tampered { origin: from } => {
                    let origin = self.role_of(from).and_then(Role::from_index).unwrap_or(origin);
                    return Err(RelayError::Tampered { origin, observer });
                }
                _ => {}
            }
        }
        Ok(relays)
    }

    fn pause(&mut self, ms: f64) {
        thread::sleep(Duration::from_secs_f64(ms.max(0.0) / 1e3));
    }
}

impl Drop for LiveSession {
    fn drop(&mut self) {
        for s in &self.streams {
            let _ = s.shutdown(std::net::Shutdown::Both);
        }
    }
}
