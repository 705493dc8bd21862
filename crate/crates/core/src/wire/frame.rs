//! Authenticated frame layout (all integers big-endian):
//!
//! ```text
//! offset  size  field
//!      0     1  version (= 1)
//!      1     1  msg_type
//!      2    16  session_id
//!     18     4  seq
//!     22     2  origin_id
//!     24     8  sent_ts_ms (ms since Unix epoch)
//!     32     2  payload_len
//!     34     n  payload
//!   34+n    32  HMAC-SHA256 over bytes [0, 34+n)
//! ```
//!
//! On a byte stream each frame is preceded by nothing: the receiver reads
//! the 34-byte header, then `payload_len + 32` more bytes.

use hmac::{Hmac, Mac};
use sha2::Sha256;
use thiserror::Error;

pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 34;
pub const MAC_LEN: usize = 32;
pub const MAX_PAYLOAD: usize = u16::MAX as usize;

type HmacSha256 = Hmac<Sha256>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MsgType {
    Timestamp = 0x01,
    Relay = 0x02,
    SessionInit = 0x03,
    BaselineProbe = 0x04,
    VerifyRequest = 0x05,
    VerifyResponse = 0x06,
    OffsetProbe = 0x07,
}

impl TryFrom<u8> for MsgType {
    type Error = FrameError;

    fn try_from(b: u8) -> Result<Self, FrameError> {
        Ok(match b {
            0x01 => MsgType::Timestamp,
            0x02 => MsgType::Relay,
            0x03 => MsgType::SessionInit,
            0x04 => MsgType::BaselineProbe,
            0x05 => MsgType::VerifyRequest,
            0x06 => MsgType::VerifyResponse,
            0x07 => MsgType::OffsetProbe,
            other => return Err(FrameError::UnknownType(other)),
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FrameError {
    #[error("MAC_FAIL: frame authentication failed")]
    MacFail,
    #[error("TRUNCATED: frame length {got} does not match header (expected {expected})")]
    Truncated { got: usize, expected: usize },
    #[error("BAD_VERSION: {0}")]
    BadVersion(u8),
    #[error("unknown message type {0:#04x}")]
    UnknownType(u8),
    #[error("payload of {0} bytes exceeds frame limit")]
    PayloadTooLarge(usize),
}

impl FrameError {
    /// Stable error code for logs and reports.
    pub fn code(&self) -> &'static str {
        match self {
            FrameError::MacFail => "MAC_FAIL",
            FrameError::Truncated { .. } => "TRUNCATED",
            FrameError::BadVersion(_) => "BAD_VERSION",
            FrameError::UnknownType(_) => "UNKNOWN_TYPE",
            FrameError::PayloadTooLarge(_) => "PAYLOAD_TOO_LARGE",
        }
    }
}

/// A frame whose MAC has been verified. Only [`frame_decode`] builds one
/// from bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireMessage {
    pub msg_type: MsgType,
    pub session_id: [u8; 16],
    pub seq: u32,
    pub origin_id: u16,
    pub sent_ts_ms: u64,
    pub payload: Vec<u8>,
}

/// Header fields read before authentication, for key selection only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UntrustedHeader {
    pub msg_type: u8,
    pub session_id: [u8; 16],
    pub origin_id: u16,
    pub payload_len: usize,
}

impl UntrustedHeader {
    pub fn frame_len(&self) -> usize {
        HEADER_LEN + self.payload_len + MAC_LEN
    }
}

/// Parses the fixed header without trusting it.
pub fn peek_header(bytes: &[u8]) -> Result<UntrustedHeader, FrameError> {
    if bytes.len() < HEADER_LEN {
        return Err(FrameError::Truncated { got: bytes.len(), expected: HEADER_LEN + MAC_LEN });
    }
    let mut session_id = [0u8; 16];
    session_id.copy_from_slice(&bytes[2..18]);
    Ok(UntrustedHeader {
        msg_type: bytes[1],
        session_id,
        origin_id: u16::from_be_bytes([bytes[22], bytes[23]]),
        payload_len: u16::from_be_bytes([bytes[32], bytes[33]]) as usize,
    })
}

fn mac_over(key: &[u8], data: &[u8]) -> HmacSha256 {
    let mut mac = HmacSha256::new_from_slice(key).expect("HMAC accepts any key length");
    mac.update(data);
    mac
}

pub fn frame_encode(msg: &WireMessage, key: &[u8]) -> Result<Vec<u8>, FrameError> {
    if msg.payload.len() > MAX_PAYLOAD {
        return Err(FrameError::PayloadTooLarge(msg.payload.len()));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + msg.payload.len() + MAC_LEN);
    out.push(VERSION);
    out.push(msg.msg_type as u8);
    out.extend_from_slice(&msg.session_id);
    out.extend_from_slice(&msg.seq.to_be_bytes());
    out.extend_from_slice(&msg.origin_id.to_be_bytes());
    out.extend_from_slice(&msg.sent_ts_ms.to_be_bytes());
    out.extend_from_slice(&(msg.payload.len() as u16).to_be_bytes());
    out.extend_from_slice(&msg.payload);
    let tag = mac_over(key, &out).finalize().into_bytes();
    out.extend_from_slice(&tag);
    Ok(out)
}

/// Checks length, version, then MAC, and only then interprets fields.
pub fn frame_decode(bytes: &[u8], key: &[u8]) -> Result<WireMessage, FrameError> {
    let header = peek_header(bytes)?;
    if bytes.len() != header.frame_len() {
        return Err(FrameError::Truncated { got: bytes.len(), expected: header.frame_len() });
    }
    if bytes[0] != VERSION {
        return Err(FrameError::BadVersion(bytes[0]));
    }
    let body_len = HEADER_LEN + header.payload_len;
    mac_over(key, &bytes[..body_len]).verify_slice(&bytes[body_len..]).map_err(|_| FrameError::MacFail)?;
    let msg_type = MsgType::try_from(bytes[1])?;
    Ok(WireMessage {
        msg_type,
        session_id: header.session_id,
        seq: u32::from_be_bytes(bytes[18..22].try_into().expect("4 bytes")),
        origin_id: header.origin_id,
        sent_ts_ms: u64::from_be_bytes(bytes[24..32].try_into().expect("8 bytes")),
        payload: bytes[HEADER_LEN..body_len].to_vec(),
    })
}

/// Reads one raw frame from a byte stream.
pub fn read_frame<R: std::io::Read>(r: &mut R) -> std::io::Result<Vec<u8>> {
    let mut buf = vec![0u8; HEADER_LEN];
    r.read_exact(&mut buf)?;
    let header = peek_header(&buf).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
    buf.resize(header.frame_len(), 0);
    r.read_exact(&mut buf[HEADER_LEN..])?;
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> WireMessage {
        WireMessage {
            msg_type: MsgType::Timestamp,
            session_id: [0xAB; 16],
            seq: 7,
            origin_id: 2,
            sent_ts_ms: 1_700_000_000_123,
            payload: vec![1, 2, 3],
        }
    }

    #[test]
    fn round_trip() {
        let bytes = frame_encode(&sample(), b"k").unwrap();
        assert_eq!(bytes.len(), HEADER_LEN + 3 + MAC_LEN);
        assert_eq!(frame_decode(&bytes, b"k").unwrap(), sample());
    }

    #[test]
    fn error_codes() {
        let bytes = frame_encode(&sample(), b"k").unwrap();
        let mut bad_mac = bytes.clone();
        *bad_mac.last_mut().unwrap() ^= 0x01;
        assert_eq!(frame_decode(&bad_mac, b"k"), Err(FrameError::MacFail));
        let mut v2 = bytes.clone();
        v2[0] = 2;
        assert_eq!(frame_decode(&v2, b"k"), Err(FrameError::BadVersion(2)));
        assert!(matches!(frame_decode(&bytes[..40], b"k"), Err(FrameError::Truncated { .. })));
        assert!(matches!(frame_decode(&bytes[..10], b"k"), Err(FrameError::Truncated { .. })));
        assert_eq!(frame_decode(&bytes, b"other"), Err(FrameError::MacFail));
        assert_eq!(FrameError::MacFail.code(), "MAC_FAIL");
    }

    #[test]
    fn stream_reader() {
        let a = frame_encode(&sample(), b"k").unwrap();
        let mut b_msg = sample();
        b_msg.payload.clear();
        let b = frame_encode(&b_msg, b"k").unwrap();
        let joined = [a.clone(), b.clone()].concat();
        let mut cur = std::io::Cursor::new(joined);
        assert_eq!(read_frame(&mut cur).unwrap(), a);
        assert_eq!(read_frame(&mut cur).unwrap(), b);
        assert!(read_frame(&mut cur).is_err());
    }
}
