//! Payload layouts carried inside authenticated frames.
//!
//! All integers are big-endian; floats are IEEE-754 binary64, big-endian.
//! Strings are a one-byte length followed by UTF-8 bytes.

use std::net::IpAddr;

use thiserror::Error;

use crate::geometry::GeoPoint;
use crate::puzzle::{PuzzleSolution, PuzzleSpec, ENCODED_LEN};
use crate::slv::{PairResult, ProbeLayer, ProbeSample};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PayloadError {
    #[error("payload truncated")]
    Truncated,
    #[error("unexpected trailing bytes")]
    Trailing,
    #[error("unknown payload kind {0:#04x}")]
    UnknownKind(u8),
    #[error("invalid field: {0}")]
    Invalid(&'static str),
}

#[derive(Default)]
pub(crate) struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) -> &mut Self {
        self.0.push(v);
        self
    }
    fn u16(&mut self, v: u16) -> &mut Self {
        self.0.extend_from_slice(&v.to_be_bytes());
        self
    }
    fn u32(&mut self, v: u32) -> &mut Self {
        self.0.extend_from_slice(&v.to_be_bytes());
        self
    }
    fn i64(&mut self, v: i64) -> &mut Self {
        self.0.extend_from_slice(&v.to_be_bytes());
        self
    }
    fn f64(&mut self, v: f64) -> &mut Self {
        self.0.extend_from_slice(&v.to_be_bytes());
        self
    }
    fn bytes(&mut self, v: &[u8]) -> &mut Self {
        self.0.extend_from_slice(v);
        self
    }
    fn string(&mut self, s: &str) -> &mut Self {
        let b = &s.as_bytes()[..s.len().min(255)];
        self.u8(b.len() as u8).bytes(b)
    }
    fn ip(&mut self, ip: IpAddr) -> &mut Self {
        match ip {
            IpAddr::V4(v4) => self.u8(4).bytes(&v4.octets()),
            IpAddr::V6(v6) => self.u8(6).bytes(&v6.octets()),
        }
    }
    fn point(&mut self, p: GeoPoint) -> &mut Self {
        self.f64(p.lat()).f64(p.lon())
    }
    fn finish(&mut self) -> Vec<u8> {
        std::mem::take(&mut self.0)
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8], PayloadError> {
        if self.buf.len() < n {
            return Err(PayloadError::Truncated);
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }
    fn u8(&mut self) -> Result<u8, PayloadError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, PayloadError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().expect("2")))
    }
    fn u32(&mut self) -> Result<u32, PayloadError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().expect("4")))
    }
    fn i64(&mut self) -> Result<i64, PayloadError> {
        Ok(i64::from_be_bytes(self.take(8)?.try_into().expect("8")))
    }
    fn f64(&mut self) -> Result<f64, PayloadError> {
        Ok(f64::from_be_bytes(self.take(8)?.try_into().expect("8")))
    }
    fn string(&mut self) -> Result<String, PayloadError> {
        let n = self.u8()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| PayloadError::Invalid("utf-8"))
    }
    fn ip(&mut self) -> Result<IpAddr, PayloadError> {
        match self.u8()? {
            4 => {
                let o: [u8; 4] = self.take(4)?.try_into().expect("4");
                Ok(IpAddr::from(o))
            }
            6 => {
                let o: [u8; 16] = self.take(16)?.try_into().expect("16");
                Ok(IpAddr::from(o))
            }
            _ => Err(PayloadError::Invalid("ip family")),
        }
    }
    fn point(&mut self) -> Result<GeoPoint, PayloadError> {
        let (lat, lon) = (self.f64()?, self.f64()?);
        GeoPoint::new(lat, lon).map_err(|_| PayloadError::Invalid("coordinates"))
    }
    fn rest(&mut self) -> &'a [u8] {
        std::mem::take(&mut self.buf)
    }
    fn done(&self) -> Result<(), PayloadError> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(PayloadError::Trailing)
        }
    }
}

/// Payload of a TIMESTAMP frame: the verifier it is addressed to and the
/// puzzle the client must solve before forwarding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimestampPayload {
    pub destination: u16,
    pub puzzle: Option<PuzzleSpec>,
}

impl TimestampPayload {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.u16(self.destination);
        match &self.puzzle {
            Some(p) => w.u8(1).bytes(&p.to_bytes()),
            None => w.u8(0),
        };
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, PayloadError> {
        let mut r = Reader::new(bytes);
        let destination = r.u16()?;
        let puzzle = match r.u8()? {
            0 => None,
            1 => Some(PuzzleSpec::from_bytes(r.take(ENCODED_LEN)?).map_err(|_| PayloadError::Invalid("puzzle"))?),
            _ => return Err(PayloadError::Invalid("puzzle flag")),
        };
        r.done()?;
        Ok(Self { destination, puzzle })
    }
}

/// Payload of a RELAY frame: the untouched inner TIMESTAMP frame followed
/// by the client's puzzle solution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelayPayload {
    pub inner: Vec<u8>,
    pub solution: PuzzleSolution,
}

impl RelayPayload {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.u16(self.inner.len() as u16).bytes(&self.inner);
        w.u8(self.solution.solution.len() as u8).bytes(&self.solution.solution);
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, PayloadError> {
        let mut r = Reader::new(bytes);
        let n = r.u16()? as usize;
        let inner = r.take(n)?.to_vec();
        let m = r.u8()? as usize;
        let solution = PuzzleSolution { solution: r.take(m)?.to_vec() };
        r.done()?;
        Ok(Self { inner, solution })
    }
}

/// BASELINE_PROBE payload. A probe carries nothing; the reply carries the
/// raw one-way delay the replying verifier observed for the probe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BaselinePayload {
    Probe,
    Reply { observed_raw_ms: f64 },
}

impl BaselinePayload {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::default();
        match self {
            BaselinePayload::Probe => w.u8(0),
            BaselinePayload::Reply { observed_raw_ms } => w.u8(1).f64(*observed_raw_ms),
        };
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, PayloadError> {
        let mut r = Reader::new(bytes);
        let p = match r.u8()? {
            0 => BaselinePayload::Probe,
            1 => BaselinePayload::Reply { observed_raw_ms: r.f64()? },
            k => return Err(PayloadError::UnknownKind(k)),
        };
        r.done()?;
        Ok(p)
    }
}

/// OFFSET_PROBE payload: request carries `t1`; response echoes it with the
/// peer's receive and send times.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OffsetPayload {
    Request { t1: i64 },
    Response { t1: i64, t2: i64, t3: i64 },
}

impl OffsetPayload {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::default();
        match *self {
            OffsetPayload::Request { t1 } => w.u8(0).i64(t1),
            OffsetPayload::Response { t1, t2, t3 } => w.u8(1).i64(t1).i64(t2).i64(t3),
        };
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, PayloadError> {
        let mut r = Reader::new(bytes);
        let p = match r.u8()? {
            0 => OffsetPayload::Request { t1: r.i64()? },
            1 => OffsetPayload::Response { t1: r.i64()?, t2: r.i64()?, t3: r.i64()? },
            k => return Err(PayloadError::UnknownKind(k)),
        };
        r.done()?;
        Ok(p)
    }
}

/// VERIFY_REQUEST payloads: client→Manager requests and Manager→verifier
/// commands.
#[derive(Debug, Clone, PartialEq)]
pub enum VerifyRequest {
    Slv { ip: IpAddr, asserted: GeoPoint, domain: Option<String> },
    Cpv { asserted: GeoPoint },
    /// Emit this verifier's timestamp for the round in the frame's `seq`.
    RunTurn { difficulty: u8 },
    Probe { ip: IpAddr, port: u16, samples: u8 },
    BaselineQuery,
}

impl VerifyRequest {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::default();
        match self {
            VerifyRequest::Slv { ip, asserted, domain } => {
                w.u8(0x01).ip(*ip).point(*asserted);
                w.string(domain.as_deref().unwrap_or(""));
            }
            VerifyRequest::Cpv { asserted } => {
                w.u8(0x02).point(*asserted);
            }
            VerifyRequest::RunTurn { difficulty } => {
                w.u8(0x10).u8(*difficulty);
            }
            VerifyRequest::Probe { ip, port, samples } => {
                w.u8(0x11).ip(*ip).u16(*port).u8(*samples);
            }
            VerifyRequest::BaselineQuery => {
                w.u8(0x12);
            }
        }
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, PayloadError> {
        let mut r = Reader::new(bytes);
        let req = match r.u8()? {
            0x01 => {
                let ip = r.ip()?;
                let asserted = r.point()?;
                let domain = r.string()?;
                VerifyRequest::Slv { ip, asserted, domain: (!domain.is_empty()).then_some(domain) }
            }
            0x02 => VerifyRequest::Cpv { asserted: r.point()? },
            0x10 => VerifyRequest::RunTurn { difficulty: r.u8()? },
            0x11 => VerifyRequest::Probe { ip: r.ip()?, port: r.u16()?, samples: r.u8()? },
            0x12 => VerifyRequest::BaselineQuery,
            k => return Err(PayloadError::UnknownKind(k)),
        };
        r.done()?;
        Ok(req)
    }
}

/// Verifier endpoint handed to a CPV client.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Endpoint {
    pub id: u16,
    pub addr: String,
}

/// VERIFY_RESPONSE payloads.
#[derive(Debug, Clone, PartialEq)]
pub enum VerifyResponse {
    /// `outcome`: 0 CRITICAL, 1 SUSPICIOUS, 2 UNSUSPICIOUS, 3 VERIFIED_PINNED, 4 INDETERMINATE.
    Slv { outcome: u8, verification_passed: bool, pairs: Vec<PairResult> },
    CpvGrant { grant: Vec<u8>, verifiers: Vec<Endpoint> },
    /// `decision`: 0 accepted, 1 rejected, 2 indeterminate.
    CpvResult { decision: u8, total: u32, valid: u32, passed: u32 },
    /// A relayed timestamp arrived; `observer` is the frame's origin_id.
    Observation { origin: u16, send_ts_ms: i64, recv_ts_ms: i64, correction_ms: f64 },
    Tampered { origin: u16 },
    ProbeResult { samples: Vec<ProbeSample> },
    /// Per peer: fresh baseline OWD (NaN when stale).
    BaselineReport { entries: Vec<(u16, f64)> },
    ClientJoined,
    Ack,
    Error { message: String },
}

impl VerifyResponse {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::default();
        match self {
            VerifyResponse::Slv { outcome, verification_passed, pairs } => {
                w.u8(0x01).u8(*outcome).u8(*verification_passed as u8).u8(pairs.len() as u8);
                for p in pairs {
                    w.u16(p.first).u16(p.second).u8(p.covers_assertion as u8).u8(p.contains_server as u8);
                }
            }
            VerifyResponse::CpvGrant { grant, verifiers } => {
                w.u8(0x02).u16(grant.len() as u16).bytes(grant).u8(verifiers.len() as u8);
                for v in verifiers {
                    w.u16(v.id).string(&v.addr);
                }
            }
            VerifyResponse::CpvResult { decision, total, valid, passed } => {
                w.u8(0x03).u8(*decision).u32(*total).u32(*valid).u32(*passed);
            }
            VerifyResponse::Observation { origin, send_ts_ms, recv_ts_ms, correction_ms } => {
                w.u8(0x10).u16(*origin).i64(*send_ts_ms).i64(*recv_ts_ms).f64(*correction_ms);
            }
            VerifyResponse::Tampered { origin } => {
                w.u8(0x11).u16(*origin);
            }
            VerifyResponse::ProbeResult { samples } => {
                w.u8(0x12).u8(samples.len() as u8);
                for s in samples {
                    w.u8(s.layer as u8).f64(s.rtt_ms);
                }
            }
            VerifyResponse::BaselineReport { entries } => {
                w.u8(0x13).u8(entries.len() as u8);
                for (peer, v) in entries {
                    w.u16(*peer).f64(*v);
                }
            }
            VerifyResponse::ClientJoined => {
                w.u8(0x14);
            }
            VerifyResponse::Ack => {
                w.u8(0x15);
            }
            VerifyResponse::Error { message } => {
                w.u8(0x16).string(message);
            }
        }
        w.finish()
    }

    /// Decodes a response. Probe samples carry no verifier or timestamp on
    /// the wire; `verifier` fills the former and the latter is zero.
    pub fn decode(bytes: &[u8], verifier: u16) -> Result<Self, PayloadError> {
        let mut r = Reader::new(bytes);
        let resp = match r.u8()? {
            0x01 => {
                let outcome = r.u8()?;
                let verification_passed = r.u8()? != 0;
                let n = r.u8()?;
                let mut pairs = Vec::with_capacity(n as usize);
                for _ in 0..n {
                    pairs.push(PairResult {
                        first: r.u16()?,
                        second: r.u16()?,
                        covers_assertion: r.u8()? != 0,
                        contains_server: r.u8()? != 0,
                    });
                }
                VerifyResponse::Slv { outcome, verification_passed, pairs }
            }
            0x02 => {
                let n = r.u16()? as usize;
                let grant = r.take(n)?.to_vec();
                let count = r.u8()?;
                let mut verifiers = Vec::new();
                for _ in 0..count {
                    verifiers.push(Endpoint { id: r.u16()?, addr: r.string()? });
                }
                VerifyResponse::CpvGrant { grant, verifiers }
            }
            0x03 => VerifyResponse::CpvResult { decision: r.u8()?, total: r.u32()?, valid: r.u32()?, passed: r.u32()? },
            0x10 => VerifyResponse::Observation {
                origin: r.u16()?,
                send_ts_ms: r.i64()?,
                recv_ts_ms: r.i64()?,
                correction_ms: r.f64()?,
            },
            0x11 => VerifyResponse::Tampered { origin: r.u16()? },
            0x12 => {
                let n = r.u8()?;
                let mut samples = Vec::new();
                for _ in 0..n {
                    let layer = match r.u8()? {
                        0 => ProbeLayer::TcpHandshake,
                        1 => ProbeLayer::HttpRequestResponse,
                        _ => return Err(PayloadError::Invalid("probe layer")),
                    };
                    samples.push(ProbeSample { layer, rtt_ms: r.f64()?, verifier, timestamp_ms: 0 });
                }
                VerifyResponse::ProbeResult { samples }
            }
            0x13 => {
                let n = r.u8()?;
                let mut entries = Vec::new();
                for _ in 0..n {
                    entries.push((r.u16()?, r.f64()?));
                }
                VerifyResponse::BaselineReport { entries }
            }
            0x14 => VerifyResponse::ClientJoined,
            0x15 => VerifyResponse::Ack,
            0x16 => VerifyResponse::Error { message: r.string()? },
            k => return Err(PayloadError::UnknownKind(k)),
        };
        r.done()?;
        Ok(resp)
    }
}

/// Remaining bytes helper for callers that embed raw frames.
pub fn split_inner(bytes: &[u8]) -> Result<(&[u8], &[u8]), PayloadError> {
    let mut r = Reader::new(bytes);
    let n = r.u16()? as usize;
    let inner = r.take(n)?;
    Ok((inner, r.rest()))
}
