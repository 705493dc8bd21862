//! Pairwise symmetric MAC keys, provisioned out of band.
//!
//! Key file format, one entry per line (`#` starts a comment):
//!
//! ```text
//! <id> <id> <64 hex chars>
//! ```
//!
//! Keys are symmetric: `1 2 <k>` serves both directions.

use std::collections::HashMap;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

/// Identifier used by relaying clients, which hold no pairwise key.
pub const CLIENT_ID: u16 = 0xFFFF;
/// Identifier of the Manager.
pub const MANAGER_ID: u16 = 0;

#[derive(Debug, Error)]
pub enum KeyError {
    #[error("key file line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("no key for pair ({0}, {1})")]
    Missing(u16, u16),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Default)]
pub struct KeyRing {
    keys: HashMap<(u16, u16), [u8; 32]>,
}

fn pair(a: u16, b: u16) -> (u16, u16) {
    (a.min(b), a.max(b))
}

impl KeyRing {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, a: u16, b: u16, key: [u8; 32]) {
        self.keys.insert(pair(a, b), key);
    }

    pub fn get(&self, a: u16, b: u16) -> Result<&[u8; 32], KeyError> {
        self.keys.get(&pair(a, b)).ok_or(KeyError::Missing(a, b))
    }

    pub fn parse(text: &str) -> Result<Self, KeyError> {
        let mut ring = Self::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |reason: &str| KeyError::Parse { line: i + 1, reason: reason.to_string() };
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 3 {
                return Err(err("expected `<id> <id> <hex key>`"));
            }
            let a: u16 = parts[0].parse().map_err(|_| err("bad id"))?;
            let b: u16 = parts[1].parse().map_err(|_| err("bad id"))?;
            let key = decode_hex32(parts[2]).ok_or_else(|| err("key must be 64 hex chars"))?;
            ring.insert(a, b, key);
        }
        Ok(ring)
    }

    pub fn load(path: &Path) -> Result<Self, KeyError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Deterministic ring for tests and lab setups: every pair among `ids`
    /// gets `SHA-256(seed ‖ lo ‖ hi)`.
    pub fn derived(seed: &[u8], ids: &[u16]) -> Self {
        let mut ring = Self::new();
        for (i, &a) in ids.iter().enumerate() {
            for &b in &ids[i + 1..] {
                let (lo, hi) = pair(a, b);
                let mut h = Sha256::new();
                h.update(seed);
                h.update(lo.to_be_bytes());
                h.update(hi.to_be_bytes());
                ring.insert(a, b, h.finalize().into());
            }
        }
        ring
    }

    pub fn to_text(&self) -> String {
        let mut entries: Vec<_> = self.keys.iter().collect();
        entries.sort_by_key(|(k, _)| **k);
        entries
            .into_iter()
            .map(|((a, b), k)| format!("{a} {b} {}\n", k.iter().map(|x| format!("{x:02x}")).collect::<String>()))
            .collect()
    }
}

fn decode_hex32(s: &str) -> Option<[u8; 32]> {
    if s.len() != 64 {
        return None;
    }
    let mut out = [0u8; 32];
    for (i, chunk) in s.as_bytes().chunks(2).enumerate() {
        out[i] = u8::from_str_radix(std::str::from_utf8(chunk).ok()?, 16).ok()?;
    }
    Some(out)
}

/// MAC key for client-originated frames of a session. It is derivable by
/// anyone holding the session id, so it protects framing only; the trust
/// anchor for relayed timestamps is the inner frame's pairwise MAC.
pub fn session_key(session_id: &[u8; 16]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"geoverity-session");
    h.update(session_id);
    h.finalize().into()
}
