//! The client side: asks the Manager for a verification and, for CPV,
//! relays verifier timestamps between the three verifiers of its grant.
//!
//! The client cannot authenticate the timestamps it carries; it reads the
//! destination and puzzle from the untrusted payload, solves, and forwards
//! the frame untouched (unless told to misbehave).

use std::collections::HashMap;
use std::net::{IpAddr, Shutdown, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use geoverity::cpv::Decision;
use geoverity::geometry::GeoPoint;
use geoverity::puzzle::{puzzle_solve, PuzzleSolution};
use geoverity::slv::{PairResult, SlvOutcome};
use geoverity::wire::{
    peek_header, session_key, MsgType, RelayPayload, SessionGrant, TimestampPayload, VerifyRequest, VerifyResponse,
    CLIENT_ID, MANAGER_ID,
};

use crate::conn::{self, message, untrusted_payload, wall_ms, SharedWriter};
use crate::service::{decision_from_code, SLV_INDETERMINATE};
use crate::{NetError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClientBehavior {
    #[default]
    Honest,
    /// Shifts every relayed timestamp back by this many ms (and so breaks
    /// its MAC). Used to exercise tamper detection.
    RewriteTimestamps(u64),
}

#[derive(Debug, Clone, Default)]
pub struct ClientOptions {
    pub connect_timeout: Duration,
    /// Upper bound on the whole verification.
    pub result_timeout: Duration,
    pub behavior: ClientBehavior,
    /// Dial these addresses instead of the ones in the grant (lab routing).
    pub route: HashMap<u16, String>,
}

impl ClientOptions {
    pub fn new() -> Self {
        Self { connect_timeout: Duration::from_secs(5), result_timeout: Duration::from_secs(120), ..Self::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CpvAnswer {
    pub decision: Decision,
    pub total: u32,
    pub valid: u32,
    pub passed: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlvAnswer {
    /// `None` when the check was indeterminate.
    pub outcome: Option<SlvOutcome>,
    pub verification_passed: bool,
    pub pairs: Vec<PairResult>,
}

/// Opens a request connection and sends `req`.
fn ask(manager: &str, req: &VerifyRequest, opts: &ClientOptions) -> Result<(TcpStream, [u8; 16], [u8; 32])> {
    let sid: [u8; 16] = rand::random();
    let key = session_key(&sid);
    let mut s = conn::connect(manager, opts.connect_timeout)?;
    s.set_read_timeout(Some(opts.result_timeout))?;
    conn::send(&mut s, &message(MsgType::VerifyRequest, sid, 1, CLIENT_ID, wall_ms() as i64, req.encode()), &key)?;
    Ok((s, sid, key))
}

fn next_response(s: &mut TcpStream, key: &[u8]) -> Result<VerifyResponse> {
    let m = conn::recv_with(s, key)?;
    if m.origin_id != MANAGER_ID || m.msg_type != MsgType::VerifyResponse {
        return Err(NetError::Protocol("unexpected frame from the Manager".into()));
    }
    Ok(VerifyResponse::decode(&m.payload, MANAGER_ID)?)
}

/// Asks the Manager to verify presence at `asserted` and takes part in the
/// measurement. Returns once the Manager has decided.
pub fn run_cpv_client(manager: &str, asserted: GeoPoint, opts: &ClientOptions) -> Result<CpvAnswer> {
    let (mut s, _, key) = ask(manager, &VerifyRequest::Cpv { asserted }, opts)?;
    let mut links = Vec::new();
    let answer = loop {
        match next_response(&mut s, &key)? {
            VerifyResponse::CpvGrant { grant, verifiers } => {
                let grant = SessionGrant::from_bytes(&grant)?;
                links = join_verifiers(&grant, &verifiers, opts)?;
            }
            VerifyResponse::CpvResult { decision, total, valid, passed } => {
                let decision =
                    decision_from_code(decision).ok_or_else(|| NetError::Protocol(format!("decision code {decision}")))?;
                break CpvAnswer { decision, total, valid, passed };
            }
            VerifyResponse::Error { message } => return Err(NetError::Protocol(message)),
            other => return Err(NetError::Protocol(format!("unexpected {other:?}"))),
        }
    };
    for l in links {
        let _ = l.shutdown(Shutdown::Both);
    }
    Ok(answer)
}

/// Connects to every verifier of the grant and starts relaying.
fn join_verifiers(
    grant: &SessionGrant,
    verifiers: &[geoverity::wire::Endpoint],
    opts: &ClientOptions,
) -> Result<Vec<TcpStream>> {
    let sid = grant.session_id;
    let key = session_key(&sid);
    let mut writers: HashMap<u16, SharedWriter> = HashMap::new();
    let mut readers = Vec::new();
    for v in verifiers {
        let addr = opts.route.get(&v.id).unwrap_or(&v.addr);
        let mut s = conn::connect(addr, opts.connect_timeout)?;
        conn::send(&mut s, &message(MsgType::SessionInit, sid, 0, CLIENT_ID, wall_ms() as i64, grant.to_bytes()), &key)?;
        writers.insert(v.id, Arc::new(Mutex::new(s.try_clone()?)));
        readers.push(s);
    }
    let writers = Arc::new(writers);
    let mut handles = Vec::new();
    for r in readers {
        handles.push(r.try_clone()?);
        let writers = Arc::clone(&writers);
        let behavior = opts.behavior;
        thread::spawn(move || relay_loop(r, sid, key, writers, behavior));
    }
    Ok(handles)
}

fn relay_loop(
    mut from: TcpStream,
    sid: [u8; 16],
    key: [u8; 32],
    to: Arc<HashMap<u16, SharedWriter>>,
    behavior: ClientBehavior,
) {
    while let Ok(frame) = conn::recv(&mut from) {
        if let Err(e) = relay_one(frame, sid, &key, &to, behavior) {
            log::debug!("client: not relayed: {e}");
        }
    }
}

fn relay_one(
    mut frame: Vec<u8>,
    sid: [u8; 16],
    key: &[u8],
    to: &HashMap<u16, SharedWriter>,
    behavior: ClientBehavior,
) -> Result<()> {
    let h = peek_header(&frame)?;
    if h.msg_type != MsgType::Timestamp as u8 {
        return Ok(());
    }
    let stamp = TimestampPayload::decode(untrusted_payload(&frame)?)?;
    let solution = match &stamp.puzzle {
        Some(spec) => puzzle_solve(spec).map_err(|e| NetError::Protocol(e.to_string()))?.solution,
        None => PuzzleSolution::default(),
    };
    let seq = u32::from_be_bytes([frame[18], frame[19], frame[20], frame[21]]);
    if let ClientBehavior::RewriteTimestamps(shift) = behavior {
        let ts = u64::from_be_bytes(frame[24..32].try_into().expect("8 bytes"));
        frame[24..32].copy_from_slice(&ts.saturating_sub(shift).to_be_bytes());
    }
    let dest = to.get(&stamp.destination).ok_or_else(|| NetError::Protocol(format!("no link to {}", stamp.destination)))?;
    let relay = RelayPayload { inner: frame, solution };
    conn::send_shared(dest, &message(MsgType::Relay, sid, seq, CLIENT_ID, wall_ms() as i64, relay.encode()), key)
}

/// Asks the Manager to verify that `server` is at `asserted`.
pub fn request_slv(
    manager: &str,
    server: IpAddr,
    asserted: GeoPoint,
    domain: Option<String>,
    opts: &ClientOptions,
) -> Result<SlvAnswer> {
    let (mut s, _, key) = ask(manager, &VerifyRequest::Slv { ip: server, asserted, domain }, opts)?;
    match next_response(&mut s, &key)? {
        VerifyResponse::Slv { outcome, verification_passed, pairs } => Ok(SlvAnswer {
            outcome: if outcome == SLV_INDETERMINATE { None } else { SlvOutcome::from_code(outcome) },
            verification_passed,
            pairs,
        }),
        VerifyResponse::Error { message } => Err(NetError::Protocol(message)),
        other => Err(NetError::Protocol(format!("unexpected {other:?}"))),
    }
}
