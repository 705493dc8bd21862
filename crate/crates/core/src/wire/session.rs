//! Signed session grants. The Manager signs
//! `session_id ‖ lat ‖ lon ‖ expiry` with Ed25519; verifiers refuse clients
//! whose grant does not verify under the Manager's public key.

use ed25519_dalek::{Signature, Signer, SigningKey, Verifier, VerifyingKey};
use rand::{CryptoRng, RngCore};
use thiserror::Error;

use crate::geometry::GeoPoint;

/// Encoded size: id, two f64 coordinates, expiry, signature.
pub const GRANT_LEN: usize = 16 + 8 + 8 + 8 + 64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GrantError {
    #[error("grant signature invalid")]
    BadSignature,
    #[error("grant expired")]
    Expired,
    #[error("malformed grant")]
    Malformed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionGrant {
    pub session_id: [u8; 16],
    pub asserted: GeoPoint,
    pub expiry_ms: u64,
    pub signature: [u8; 64],
}

fn signed_bytes(session_id: &[u8; 16], asserted: GeoPoint, expiry_ms: u64) -> [u8; 40] {
    let mut out = [0u8; 40];
    out[..16].copy_from_slice(session_id);
    out[16..24].copy_from_slice(&asserted.lat().to_be_bytes());
    out[24..32].copy_from_slice(&asserted.lon().to_be_bytes());
    out[32..].copy_from_slice(&expiry_ms.to_be_bytes());
    out
}

impl SessionGrant {
    pub fn issue<R: RngCore + CryptoRng>(key: &SigningKey, asserted: GeoPoint, expiry_ms: u64, rng: &mut R) -> Self {
        let mut session_id = [0u8; 16];
        rng.fill_bytes(&mut session_id);
        let signature = key.sign(&signed_bytes(&session_id, asserted, expiry_ms)).to_bytes();
        Self { session_id, asserted, expiry_ms, signature }
    }

    pub fn verify(&self, issuer: &VerifyingKey, now_ms: u64) -> Result<(), GrantError> {
        let sig = Signature::from_bytes(&self.signature);
        issuer
            .verify(&signed_bytes(&self.session_id, self.asserted, self.expiry_ms), &sig)
            .map_err(|_| GrantError::BadSignature)?;
        if now_ms > self.expiry_ms {
            return Err(GrantError::Expired);
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = signed_bytes(&self.session_id, self.asserted, self.expiry_ms).to_vec();
        out.extend_from_slice(&self.signature);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, GrantError> {
        if bytes.len() != GRANT_LEN {
            return Err(GrantError::Malformed);
        }
        let f = |r: std::ops::Range<usize>| -> [u8; 8] { bytes[r].try_into().expect("8 bytes") };
        let mut session_id = [0u8; 16];
        session_id.copy_from_slice(&bytes[..16]);
        let asserted = GeoPoint::new(f64::from_be_bytes(f(16..24)), f64::from_be_bytes(f(24..32)))
            .map_err(|_| GrantError::Malformed)?;
        let mut signature = [0u8; 64];
        signature.copy_from_slice(&bytes[40..]);
        Ok(Self { session_id, asserted, expiry_ms: u64::from_be_bytes(f(32..40)), signature })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn issue_verify_and_tamper() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let key = SigningKey::generate(&mut rng);
        let here = GeoPoint::new(34.0, -117.0).unwrap();
        let grant = SessionGrant::issue(&key, here, 10_000, &mut rng);
        assert_eq!(grant.verify(&key.verifying_key(), 5_000), Ok(()));
        assert_eq!(grant.verify(&key.verifying_key(), 10_001), Err(GrantError::Expired));

        let decoded = SessionGrant::from_bytes(&grant.to_bytes()).unwrap();
        assert_eq!(decoded, grant);

        let mut moved = grant.clone();
        moved.asserted = GeoPoint::new(35.0, -117.0).unwrap();
        assert_eq!(moved.verify(&key.verifying_key(), 0), Err(GrantError::BadSignature));

        let other = SigningKey::generate(&mut rng);
        assert_eq!(grant.verify(&other.verifying_key(), 0), Err(GrantError::BadSignature));
        assert_eq!(SessionGrant::from_bytes(&[0; 3]), Err(GrantError::Malformed));
    }
}
