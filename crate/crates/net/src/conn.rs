//! Frame I/O over TCP streams.

use std::io::Write;
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use geoverity::puzzle::message_digest;
use geoverity::wire::{
    frame_decode, frame_encode, peek_header, read_frame, session_key, KeyRing, MsgType, WireMessage, CLIENT_ID,
};

use crate::{NetError, Result};

/// Wall clock in ms since the Unix epoch, shifted by a fixed skew (lab
/// setups use the skew to exercise offset correction).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Clock {
    pub skew_ms: i64,
}

impl Clock {
    pub fn now_ms(&self) -> i64 {
        let since = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
        since.as_millis() as i64 + self.skew_ms
    }
}

/// Unskewed wall clock as u64, for logs.
pub fn wall_ms() -> u64 {
    Clock::default().now_ms().max(0) as u64
}

pub fn message(msg_type: MsgType, session_id: [u8; 16], seq: u32, origin_id: u16, sent_ts_ms: i64, payload: Vec<u8>) -> WireMessage {
    WireMessage { msg_type, session_id, seq, origin_id, sent_ts_ms: sent_ts_ms.max(0) as u64, payload }
}

/// MAC key for a frame arriving at `local`: the session key for client
/// frames, the pairwise key otherwise.
pub fn inbound_key(ring: &KeyRing, local: u16, frame: &[u8]) -> Result<[u8; 32]> {
    let h = peek_header(frame)?;
    if h.origin_id == CLIENT_ID {
        Ok(session_key(&h.session_id))
    } else {
        Ok(*ring.get(h.origin_id, local)?)
    }
}

/// Payload bytes of a frame that cannot be authenticated by the reader
/// (clients forwarding verifier timestamps).
pub fn untrusted_payload(frame: &[u8]) -> Result<&[u8]> {
    let h = peek_header(frame)?;
    frame
        .get(geoverity::wire::frame::HEADER_LEN..geoverity::wire::frame::HEADER_LEN + h.payload_len)
        .ok_or_else(|| NetError::Protocol("short frame".into()))
}

/// What a relayed timestamp's puzzle is bound to: the authenticated fields
/// of the timestamp frame that carries it.
pub fn turn_digest(session_id: &[u8; 16], seq: u32, origin: u16, destination: u16, sent_ts_ms: u64) -> [u8; 32] {
    let mut m = Vec::with_capacity(32);
    m.extend_from_slice(session_id);
    m.extend_from_slice(&seq.to_be_bytes());
    m.extend_from_slice(&origin.to_be_bytes());
    m.extend_from_slice(&destination.to_be_bytes());
    m.extend_from_slice(&sent_ts_ms.to_be_bytes());
    message_digest(&m)
}

/// Write half shared between threads.
pub type SharedWriter = Arc<Mutex<TcpStream>>;

pub fn send(stream: &mut TcpStream, msg: &WireMessage, key: &[u8]) -> Result<()> {
    let bytes = frame_encode(msg, key)?;
    stream.write_all(&bytes)?;
    Ok(())
}

pub fn send_shared(w: &SharedWriter, msg: &WireMessage, key: &[u8]) -> Result<()> {
    let bytes = frame_encode(msg, key)?;
    let mut s = w.lock().expect("writer lock");
    s.write_all(&bytes)?;
    Ok(())
}

pub fn recv(stream: &mut TcpStream) -> Result<Vec<u8>> {
    Ok(read_frame(stream)?)
}

/// Reads one frame and authenticates it with `key`.
pub fn recv_with(stream: &mut TcpStream, key: &[u8]) -> Result<WireMessage> {
    Ok(frame_decode(&recv(stream)?, key)?)
}

pub fn connect(addr: &str, timeout: Duration) -> Result<TcpStream> {
    let mut last = None;
    for a in addr.to_socket_addrs()? {
        match TcpStream::connect_timeout(&a, timeout) {
            Ok(s) => {
                s.set_nodelay(true)?;
                return Ok(s);
            }
            Err(e) => last = Some(e),
        }
    }
    Err(last.map_or_else(|| NetError::Protocol(format!("{addr} resolves to nothing")), NetError::Io))
}

/// Runs `handle` on a new thread for every accepted connection until `stop`
/// is set. Returns the accept-loop thread.
pub fn serve<F>(listener: TcpListener, stop: Arc<AtomicBool>, handle: F) -> std::io::Result<thread::JoinHandle<()>>
where
    F: Fn(TcpStream) + Send + Sync + 'static,
{
    listener.set_nonblocking(true)?;
    let handle = Arc::new(handle);
    Ok(thread::spawn(move || {
        while !stop.load(Ordering::Relaxed) {
            match listener.accept() {
                Ok((s, _)) => {
                    if s.set_nonblocking(false).and_then(|_| s.set_nodelay(true)).is_err() {
                        continue;
                    }
                    let h = Arc::clone(&handle);
                    thread::spawn(move || h(s));
                }
                Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(5)),
                Err(e) => {
                    log::warn!("accept failed: {e}");
                    thread::sleep(Duration::from_millis(50));
                }
            }
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn client_frames_use_the_session_key_and_peer_frames_the_pair_key() {
        let ring = KeyRing::derived(b"conn", &[0, 1, 2]);
        let sid = [9; 16];
        let from_client = frame_encode(&message(MsgType::Relay, sid, 1, CLIENT_ID, 5, vec![1]), &session_key(&sid)).unwrap();
        assert_eq!(inbound_key(&ring, 2, &from_client).unwrap(), session_key(&sid));
        let from_peer = frame_encode(&message(MsgType::Relay, sid, 1, 1, 5, vec![1]), ring.get(1, 2).unwrap()).unwrap();
        let key = inbound_key(&ring, 2, &from_peer).unwrap();
        assert_eq!(&key, ring.get(1, 2).unwrap());
        assert!(frame_decode(&from_peer, &key).is_ok());
    }

    #[test]
    fn untrusted_payload_reads_without_a_key() {
        let frame = frame_encode(&message(MsgType::Timestamp, [0; 16], 3, 1, 10, vec![7, 8, 9]), &[1; 32]).unwrap();
        assert_eq!(untrusted_payload(&frame).unwrap(), &[7, 8, 9]);
        assert!(untrusted_payload(&frame[..frame.len() - 40]).is_err());
    }

    #[test]
    fn turn_digest_binds_every_field() {
        let base = turn_digest(&[1; 16], 4, 1, 2, 1000);
        assert_eq!(base, turn_digest(&[1; 16], 4, 1, 2, 1000));
        for other in [
            turn_digest(&[2; 16], 4, 1, 2, 1000),
            turn_digest(&[1; 16], 5, 1, 2, 1000),
            turn_digest(&[1; 16], 4, 3, 2, 1000),
            turn_digest(&[1; 16], 4, 1, 3, 1000),
            turn_digest(&[1; 16], 4, 1, 2, 1001),
        ] {
            assert_ne!(base, other);
        }
    }

    #[test]
    fn negative_timestamps_clamp_to_zero() {
        assert_eq!(message(MsgType::Timestamp, [0; 16], 0, 1, -5, Vec::new()).sent_ts_ms, 0);
    }
}
