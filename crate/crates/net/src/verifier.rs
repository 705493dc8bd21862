//! The verifier daemon.
//!
//! A verifier measures and relays; it never decides. It keeps per-peer
//! clock offsets and baselines fresh in the background, emits timestamps
//! when the Manager starts its turn, authenticates relayed timestamps from
//! its peers, and reports each arrival to the Manager's session watcher.

use std::collections::HashMap;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use ed25519_dalek::VerifyingKey;
use geoverity::puzzle::{puzzle_generate, puzzle_verify};
use geoverity::slv::{probe_server, ProbeLayer};
use geoverity::wire::{
    exchange_rtt, frame_decode, peek_header, BaselinePayload, ClockSyncState, KeyRing, MsgType, OffsetPayload,
    RelayPayload, SessionGrant, TimestampPayload, VerifyRequest, VerifyResponse, WireMessage, CLIENT_ID, GRANT_LEN,
    MANAGER_ID,
};

use crate::conn::{self, inbound_key, message, send_shared, turn_digest, Clock, SharedWriter};
use crate::probe::HttpProber;
use crate::{NetError, Result};

/// Offset requests per measurement.
const OFFSET_BURST: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeerConfig {
    pub id: u16,
    /// Where this verifier dials the peer (a delay link in lab setups).
    pub address: String,
}

#[derive(Debug, Clone)]
pub struct VerifierConfig {
    pub id: u16,
    pub listen: String,
    pub peers: Vec<PeerConfig>,
    pub keys: KeyRing,
    /// Grants are accepted only under this key.
    pub manager_key: VerifyingKey,
    pub baseline_period: Duration,
    pub offset_period: Duration,
    pub staleness_ms: u64,
    pub peer_timeout: Duration,
    pub probe_layers: Vec<ProbeLayer>,
    pub probe_timeout: Duration,
    /// Added to this verifier's clock (lab only).
    pub clock_skew_ms: i64,
    /// Fixed offsets (peer minus local, ms) that replace measured ones.
    pub static_offsets: Vec<(u16, f64)>,
    /// Lab routing for server probes, see [`HttpProber::via`].
    pub probe_via: HashMap<SocketAddr, String>,
}

impl VerifierConfig {
    pub fn new(id: u16, listen: impl Into<String>, keys: KeyRing, manager_key: VerifyingKey) -> Self {
        Self {
            id,
            listen: listen.into(),
            peers: Vec::new(),
            keys,
            manager_key,
            baseline_period: Duration::from_secs(6),
            offset_period: Duration::from_secs(30 * 60),
            staleness_ms: 60_000,
            peer_timeout: Duration::from_secs(2),
            probe_layers: ProbeLayer::ALL.to_vec(),
            probe_timeout: Duration::from_secs(3),
            clock_skew_ms: 0,
            static_offsets: Vec::new(),
            probe_via: HashMap::new(),
        }
    }
}

#[derive(Default)]
struct Session {
    grant: Option<SessionGrant>,
    triangle: Option<[u16; 3]>,
    watcher: Option<SharedWriter>,
    client: Option<SharedWriter>,
}

struct Inner {
    cfg: VerifierConfig,
    clock: Clock,
    sync: Mutex<ClockSyncState>,
    sessions: Mutex<HashMap<[u8; 16], Session>>,
    stop: Arc<AtomicBool>,
}

pub struct VerifierHandle {
    pub addr: SocketAddr,
    inner: Arc<Inner>,
}

impl VerifierHandle {
    pub fn stop(&self) {
        self.inner.stop.store(true, Ordering::Relaxed);
    }

    /// Fresh baseline to `peer` as this verifier currently sees it.
    pub fn baseline(&self, peer: u16) -> Option<f64> {
        self.inner.fresh_baseline(peer)
    }

    pub fn offset(&self, peer: u16) -> f64 {
        self.inner.sync.lock().expect("sync lock").offset(peer)
    }
}

impl Drop for VerifierHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

pub fn spawn_verifier(cfg: VerifierConfig) -> Result<VerifierHandle> {
    let listener = TcpListener::bind(&cfg.listen)?;
    spawn_verifier_on(listener, cfg)
}

/// Like [`spawn_verifier`] on an already bound listener (`cfg.listen` is
/// ignored), so peers' links can be set up before the verifier starts.
pub fn spawn_verifier_on(listener: TcpListener, cfg: VerifierConfig) -> Result<VerifierHandle> {
    let addr = listener.local_addr()?;
    let mut sync = ClockSyncState {
        offset_period_ms: cfg.offset_period.as_millis() as u64,
        baseline_period_ms: cfg.baseline_period.as_millis() as u64,
        staleness_ms: cfg.staleness_ms,
        ..ClockSyncState::default()
    };
    for (peer, off) in &cfg.static_offsets {
        sync.set_override(*peer, *off);
    }
    let inner = Arc::new(Inner {
        clock: Clock { skew_ms: cfg.clock_skew_ms },
        cfg,
        sync: Mutex::new(sync),
        sessions: Mutex::new(HashMap::new()),
        stop: Arc::new(AtomicBool::new(false)),
    });
    let serving = Arc::clone(&inner);
    conn::serve(listener, Arc::clone(&inner.stop), move |s| serving.handle_connection(s))?;
    for peer in inner.cfg.peers.clone() {
        let sampler = Arc::clone(&inner);
        thread::spawn(move || sampler.sample_peer(peer));
    }
    log::info!("verifier {} listening on {addr}", inner.cfg.id);
    Ok(VerifierHandle { addr, inner })
}

/// What a connection turned out to be, for cleanup when it closes.
enum Role {
    Unknown,
    Watcher([u8; 16]),
    Client([u8; 16]),
}

impl Inner {
    fn now(&self) -> i64 {
        self.clock.now_ms()
    }

    fn fresh_baseline(&self, peer: u16) -> Option<f64> {
        self.sync.lock().expect("sync lock").fresh_baseline(peer, self.now().max(0) as u64)
    }

    fn pair_key(&self, other: u16) -> Result<[u8; 32]> {
        Ok(*self.cfg.keys.get(self.cfg.id, other)?)
    }

    fn reply(&self, w: &SharedWriter, to: &WireMessage, msg_type: MsgType, payload: Vec<u8>, key: &[u8]) -> Result<()> {
        let m = message(msg_type, to.session_id, to.seq, self.cfg.id, self.now(), payload);
        send_shared(w, &m, key)
    }

    fn handle_connection(&self, stream: TcpStream) {
        let writer: SharedWriter = match stream.try_clone() {
            Ok(w) => Arc::new(Mutex::new(w)),
            Err(_) => return,
        };
        let mut reader = stream;
        let mut role = Role::Unknown;
        loop {
            let bytes = match conn::recv(&mut reader) {
                Ok(b) => b,
                Err(_) => break,
            };
            if let Err(e) = self.dispatch(&bytes, &writer, &mut role) {
                log::debug!("verifier {}: dropped frame: {e}", self.cfg.id);
            }
        }
        let mut sessions = self.sessions.lock().expect("sessions lock");
        match role {
            Role::Watcher(sid) => {
                sessions.remove(&sid);
            }
            Role::Client(sid) => {
                if let Some(s) = sessions.get_mut(&sid) {
                    s.client = None;
                }
            }
            Role::Unknown => {}
        }
    }

    fn dispatch(&self, bytes: &[u8], w: &SharedWriter, role: &mut Role) -> Result<()> {
        let key = inbound_key(&self.cfg.keys, self.cfg.id, bytes)?;
        let msg = frame_decode(bytes, &key)?;
        match (msg.msg_type, msg.origin_id) {
            (MsgType::BaselineProbe, peer) if peer != CLIENT_ID && peer != MANAGER_ID => {
                let observed_raw_ms = (self.now() - msg.sent_ts_ms as i64) as f64;
                self.reply(w, &msg, MsgType::BaselineProbe, BaselinePayload::Reply { observed_raw_ms }.encode(), &key)
            }
            (MsgType::OffsetProbe, peer) if peer != CLIENT_ID && peer != MANAGER_ID => {
                let OffsetPayload::Request { t1 } = OffsetPayload::decode(&msg.payload)? else {
                    return Err(NetError::Protocol("unsolicited offset response".into()));
                };
                let t2 = self.now();
                let resp = OffsetPayload::Response { t1, t2, t3: self.now() };
                self.reply(w, &msg, MsgType::OffsetProbe, resp.encode(), &key)
            }
            (MsgType::SessionInit, MANAGER_ID) => self.watch(&msg, w, &key, role),
            (MsgType::SessionInit, CLIENT_ID) => self.join(&msg, w, &key, role),
            (MsgType::VerifyRequest, MANAGER_ID) => self.command(&msg, w, &key),
            (MsgType::Relay, CLIENT_ID) => self.relayed(&msg),
            (t, o) => Err(NetError::Protocol(format!("unexpected {t:?} from {o}"))),
        }
    }

    fn check_grant(&self, bytes: &[u8], sid: &[u8; 16]) -> Result<SessionGrant> {
        let grant = SessionGrant::from_bytes(bytes)?;
        grant.verify(&self.cfg.manager_key, self.now().max(0) as u64)?;
        if grant.session_id != *sid {
            return Err(NetError::Protocol("grant is for another session".into()));
        }
        Ok(grant)
    }

    /// The Manager opens a session: grant followed by the triangle ids.
    fn watch(&self, msg: &WireMessage, w: &SharedWriter, key: &[u8], role: &mut Role) -> Result<()> {
        if msg.payload.len() != GRANT_LEN + 6 {
            return Err(NetError::Protocol("bad watcher init".into()));
        }
        let grant = self.check_grant(&msg.payload[..GRANT_LEN], &msg.session_id)?;
        let ids: Vec<u16> =
            msg.payload[GRANT_LEN..].chunks(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect();
        let triangle = [ids[0], ids[1], ids[2]];
        if !triangle.contains(&self.cfg.id) {
            return Err(NetError::Protocol("not part of this triangle".into()));
        }
        let joined = {
            let mut sessions = self.sessions.lock().expect("sessions lock");
            let s = sessions.entry(msg.session_id).or_default();
            s.grant = Some(grant);
            s.triangle = Some(triangle);
            s.watcher = Some(Arc::clone(w));
            s.client.is_some()
        };
        *role = Role::Watcher(msg.session_id);
        self.reply(w, msg, MsgType::VerifyResponse, VerifyResponse::Ack.encode(), key)?;
        if joined {
            self.reply(w, msg, MsgType::VerifyResponse, VerifyResponse::ClientJoined.encode(), key)?;
        }
        Ok(())
    }

    /// The granted client connects.
    fn join(&self, msg: &WireMessage, w: &SharedWriter, key: &[u8], role: &mut Role) -> Result<()> {
        let grant = self.check_grant(&msg.payload, &msg.session_id)?;
        let watcher = {
            let mut sessions = self.sessions.lock().expect("sessions lock");
            let s = sessions.entry(msg.session_id).or_default();
            s.grant.get_or_insert(grant);
            s.client = Some(Arc::clone(w));
            s.watcher.clone()
        };
        *role = Role::Client(msg.session_id);
        self.reply(w, msg, MsgType::VerifyResponse, VerifyResponse::Ack.encode(), key)?;
        if let Some(watcher) = watcher {
            let mkey = self.pair_key(MANAGER_ID)?;
            self.reply(&watcher, msg, MsgType::VerifyResponse, VerifyResponse::ClientJoined.encode(), &mkey)?;
        }
        Ok(())
    }

    fn command(&self, msg: &WireMessage, w: &SharedWriter, key: &[u8]) -> Result<()> {
        let resp = match VerifyRequest::decode(&msg.payload)? {
            VerifyRequest::RunTurn { difficulty } => self.run_turn(msg, difficulty).unwrap_or_else(|e| {
                VerifyResponse::Error { message: e.to_string() }
            }),
            VerifyRequest::BaselineQuery => {
                let entries =
                    self.cfg.peers.iter().map(|p| (p.id, self.fresh_baseline(p.id).unwrap_or(f64::NAN))).collect();
                VerifyResponse::BaselineReport { entries }
            }
            VerifyRequest::Probe { ip, port, samples } => {
                let mut prober = HttpProber {
                    layers: self.cfg.probe_layers.clone(),
                    port,
                    timeout: self.cfg.probe_timeout,
                    via: self.cfg.probe_via.clone(),
                };
                match probe_server(&mut prober, self.cfg.id, ip, samples as usize) {
                    Ok(est) => VerifyResponse::ProbeResult { samples: est.samples },
                    Err(e) => VerifyResponse::Error { message: e.to_string() },
                }
            }
            other => VerifyResponse::Error { message: format!("verifiers do not serve {other:?}") },
        };
        self.reply(w, msg, MsgType::VerifyResponse, resp.encode(), key)
    }

    /// Sends this verifier's timestamp for round `msg.seq` toward each other
    /// vertex, through the client.
    fn run_turn(&self, msg: &WireMessage, difficulty: u8) -> Result<VerifyResponse> {
        let (client, triangle) = {
            let sessions = self.sessions.lock().expect("sessions lock");
            let s = sessions.get(&msg.session_id).ok_or_else(|| NetError::Protocol("no such session".into()))?;
            if s.grant.as_ref().map_or(true, |g| g.expiry_ms < self.now().max(0) as u64) {
                return Err(NetError::Protocol("session grant expired".into()));
            }
            (s.client.clone(), s.triangle)
        };
        let (Some(client), Some(triangle)) = (client, triangle) else {
            return Err(NetError::Protocol("client not connected".into()));
        };
        let mut rng = rand::thread_rng();
        for dest in triangle.into_iter().filter(|d| *d != self.cfg.id) {
            let ts = self.now().max(0) as u64;
            let digest = turn_digest(&msg.session_id, msg.seq, self.cfg.id, dest, ts);
            let puzzle = if difficulty > 0 {
                Some(puzzle_generate(digest, difficulty, &mut rng).map_err(|e| NetError::Protocol(e.to_string()))?)
            } else {
                None
            };
            let payload = TimestampPayload { destination: dest, puzzle }.encode();
            let stamp = WireMessage {
                msg_type: MsgType::Timestamp,
                session_id: msg.session_id,
                seq: msg.seq,
                origin_id: self.cfg.id,
                sent_ts_ms: ts,
                payload,
            };
            send_shared(&client, &stamp, &self.pair_key(dest)?)?;
        }
        Ok(VerifyResponse::Ack)
    }

    /// A peer's timestamp relayed by the client.
    fn relayed(&self, outer: &WireMessage) -> Result<()> {
        let watcher = {
            let sessions = self.sessions.lock().expect("sessions lock");
            let s = sessions.get(&outer.session_id).ok_or_else(|| NetError::Protocol("no such session".into()))?;
            s.watcher.clone().ok_or_else(|| NetError::Protocol("session has no watcher".into()))?
        };
        let mkey = self.pair_key(MANAGER_ID)?;
        let relay = RelayPayload::decode(&outer.payload)?;
        let claimed = peek_header(&relay.inner)?.origin_id;
        let notify = |resp: VerifyResponse, seq: u32| {
            let m = message(MsgType::VerifyResponse, outer.session_id, seq, self.cfg.id, self.now(), resp.encode());
            send_shared(&watcher, &m, &mkey)
        };
        let inner = match self.cfg.keys.get(claimed, self.cfg.id) {
            Ok(k) => frame_decode(&relay.inner, k).ok(),
            Err(_) => None,
        };
        let Some(inner) = inner.filter(|m| m.session_id == outer.session_id && m.msg_type == MsgType::Timestamp)
        else {
            return notify(VerifyResponse::Tampered { origin: claimed }, outer.seq);
        };
        let stamp = TimestampPayload::decode(&inner.payload)?;
        if stamp.destination != self.cfg.id {
            return notify(VerifyResponse::Tampered { origin: claimed }, inner.seq);
        }
        if let Some(spec) = &stamp.puzzle {
            let digest = turn_digest(&inner.session_id, inner.seq, inner.origin_id, self.cfg.id, inner.sent_ts_ms);
            if !puzzle_verify(spec, &relay.solution, &digest) {
                return Err(NetError::Protocol("puzzle solution rejected".into()));
            }
        }
        let recv_ts_ms = self.now();
        let correction_ms = self.sync.lock().expect("sync lock").offset(inner.origin_id);
        notify(
            VerifyResponse::Observation {
                origin: inner.origin_id,
                send_ts_ms: inner.sent_ts_ms as i64,
                recv_ts_ms,
                correction_ms,
            },
            inner.seq,
        )
    }

    fn sleep_unless_stopped(&self, d: Duration) -> bool {
        let step = Duration::from_millis(20);
        let mut left = d;
        while !left.is_zero() {
            if self.stop.load(Ordering::Relaxed) {
                return false;
            }
            let s = left.min(step);
            thread::sleep(s);
            left -= s;
        }
        !self.stop.load(Ordering::Relaxed)
    }

    /// Keeps one connection to `peer` and refreshes offset and baseline.
    fn sample_peer(&self, peer: PeerConfig) {
        let Ok(key) = self.pair_key(peer.id) else {
            log::error!("verifier {}: no key shared with peer {}", self.cfg.id, peer.id);
            return;
        };
        let mut stream: Option<TcpStream> = None;
        let mut seq = 0u32;
        while !self.stop.load(Ordering::Relaxed) {
            if stream.is_none() {
                match conn::connect(&peer.address, self.cfg.peer_timeout) {
                    Ok(s) if s.set_read_timeout(Some(self.cfg.peer_timeout)).is_ok() => stream = Some(s),
                    _ => {
                        self.sync.lock().expect("sync lock").baseline(peer.id).mark_timeout();
                        if !self.sleep_unless_stopped(self.cfg.peer_timeout) {
                            return;
                        }
                        continue;
                    }
                }
            }
            let s = stream.as_mut().expect("connected");
            seq = seq.wrapping_add(1);
            let outcome = self.exchange(s, &key, peer.id, seq);
            if let Err(e) = outcome {
                log::debug!("verifier {}: exchange with {} failed: {e}", self.cfg.id, peer.id);
                let mut sync = self.sync.lock().expect("sync lock");
                sync.baseline(peer.id).mark_timeout();
                sync.offset_timeout(peer.id);
                stream = None;
            }
            if !self.sleep_unless_stopped(self.cfg.baseline_period) {
                return;
            }
        }
    }

    fn exchange(&self, s: &mut TcpStream, key: &[u8], peer: u16, seq: u32) -> Result<()> {
        let sid = [0u8; 16];
        let due = self.sync.lock().expect("sync lock").offset_due(peer, self.now().max(0) as u64);
        if due {
            // The first request on a connection also pays for setup; keep the
            // exchange with the smallest round trip.
            let mut best: Option<[f64; 4]> = None;
            for _ in 0..OFFSET_BURST {
                let t1 = self.now();
                conn::send(s, &message(MsgType::OffsetProbe, sid, seq, self.cfg.id, t1, OffsetPayload::Request { t1 }.encode()), key)?;
                let resp = self.expect_from(s, key, peer, MsgType::OffsetProbe, seq)?;
                let t4 = self.now();
                if let OffsetPayload::Response { t1, t2, t3 } = OffsetPayload::decode(&resp.payload)? {
                    let t = [t1 as f64, t2 as f64, t3 as f64, t4 as f64];
                    if best.map_or(true, |b| exchange_rtt(t[0], t[1], t[2], t[3]) < exchange_rtt(b[0], b[1], b[2], b[3])) {
                        best = Some(t);
                    }
                }
            }
            if let Some(t) = best {
                let off = self.sync.lock().expect("sync lock").record_offset(peer, t, self.now().max(0) as u64);
                log::debug!("verifier {}: offset to {peer} = {off:.1} ms", self.cfg.id);
            }
        }
        conn::send(s, &message(MsgType::BaselineProbe, sid, seq, self.cfg.id, self.now(), BaselinePayload::Probe.encode()), key)?;
        let resp = self.expect_from(s, key, peer, MsgType::BaselineProbe, seq)?;
        let recv = self.now();
        let BaselinePayload::Reply { observed_raw_ms } = BaselinePayload::decode(&resp.payload)? else {
            return Err(NetError::Protocol("baseline probe answered with a probe".into()));
        };
        let reverse_raw = (recv - resp.sent_ts_ms as i64) as f64;
        let mut sync = self.sync.lock().expect("sync lock");
        let offset = sync.offset(peer);
        sync.baseline(peer).record_exchange(observed_raw_ms, reverse_raw, offset, recv.max(0) as u64);
        Ok(())
    }

    fn expect_from(&self, s: &mut TcpStream, key: &[u8], peer: u16, t: MsgType, seq: u32) -> Result<WireMessage> {
        loop {
            let m = conn::recv_with(s, key)?;
            if m.origin_id == peer && m.msg_type == t && m.seq == seq {
                return Ok(m);
            }
        }
    }
}
