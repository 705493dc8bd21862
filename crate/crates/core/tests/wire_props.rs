use ed25519_dalek::SigningKey;
use geoverity::geometry::GeoPoint;
use geoverity::puzzle::PuzzleSpec;
use geoverity::wire::{
    estimate_offset, frame_decode, frame_encode, BaselineTracker, ClockSyncState, FrameError, MsgType, SessionGrant,
    TimestampPayload, WireMessage,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn msg_type() -> impl Strategy<Value = MsgType> {
    prop::sample::select(vec![
        MsgType::Timestamp,
        MsgType::Relay,
        MsgType::SessionInit,
        MsgType::BaselineProbe,
        MsgType::VerifyRequest,
        MsgType::VerifyResponse,
        MsgType::OffsetProbe,
    ])
}

fn message() -> impl Strategy<Value = WireMessage> {
    (msg_type(), any::<[u8; 16]>(), any::<u32>(), any::<u16>(), any::<u64>(), prop::collection::vec(any::<u8>(), 0..300))
        .prop_map(|(msg_type, session_id, seq, origin_id, sent_ts_ms, payload)| WireMessage {
            msg_type,
            session_id,
            seq,
            origin_id,
            sent_ts_ms,
            payload,
        })
}

proptest! {
    #[test]
    fn frames_round_trip(msg in message(), key in any::<[u8; 32]>()) {
        let bytes = frame_encode(&msg, &key).unwrap();
        prop_assert_eq!(frame_decode(&bytes, &key).unwrap(), msg);
    }

    #[test]
    fn rewriting_the_timestamp_fails_authentication(msg in message(), key in any::<[u8; 32]>(), new_ts in any::<u64>()) {
        prop_assume!(new_ts != msg.sent_ts_ms);
        let mut bytes = frame_encode(&msg, &key).unwrap();
        bytes[24..32].copy_from_slice(&new_ts.to_be_bytes());
        prop_assert_eq!(frame_decode(&bytes, &key), Err(FrameError::MacFail));
    }

    #[test]
    fn rewriting_the_payload_fails_authentication(msg in message(), key in any::<[u8; 32]>(), at in any::<prop::sample::Index>(), flip in 1u8..) {
        prop_assume!(!msg.payload.is_empty());
        let mut bytes = frame_encode(&msg, &key).unwrap();
        bytes[34 + at.index(msg.payload.len())] ^= flip;
        prop_assert_eq!(frame_decode(&bytes, &key), Err(FrameError::MacFail));
    }

    #[test]
    fn wrong_key_fails_authentication(msg in message(), key in any::<[u8; 32]>(), other in any::<[u8; 32]>()) {
        prop_assume!(key != other);
        let bytes = frame_encode(&msg, &key).unwrap();
        prop_assert_eq!(frame_decode(&bytes, &other), Err(FrameError::MacFail));
    }

    #[test]
    fn timestamp_payloads_round_trip(destination in any::<u16>(), puzzle in proptest::option::of((any::<[u8; 16]>(), 0u8..=40, any::<[u8; 32]>()))) {
        let p = TimestampPayload { destination, puzzle: puzzle.map(|(nonce, difficulty, binding)| PuzzleSpec { nonce, difficulty, binding }) };
        prop_assert_eq!(TimestampPayload::decode(&p.encode()).unwrap(), p);
    }

    #[test]
    fn offsets_are_exact_under_symmetric_paths(
        theta in -3_600_000i64..3_600_000,
        d in 0i64..10_000,
        t1 in 0i64..(1i64 << 45),
        hold in 0i64..1_000,
    ) {
        let (theta, d, t1, hold) = (theta as f64, d as f64, t1 as f64, hold as f64);
        let t2 = t1 + d + theta;
        let t3 = t2 + hold;
        prop_assert_eq!(estimate_offset(t1, t2, t3, t3 + d - theta), theta);
    }

    #[test]
    fn stale_baselines_are_withheld(samples in prop::collection::vec(0.1f64..100.0, 1..20), last in 0u64..1_000_000, later in 0u64..200_000) {
        let mut sync = ClockSyncState::default();
        for (i, s) in samples.iter().enumerate() {
            sync.baseline(2).record(*s, last.saturating_sub((samples.len() - 1 - i) as u64));
        }
        let fresh = sync.fresh_baseline(2, last + later);
        if later > sync.staleness_ms {
            prop_assert_eq!(fresh, None);
        } else {
            let window_start = samples.len().saturating_sub(BaselineTracker::WINDOW);
            prop_assert_eq!(fresh, samples[window_start..].iter().copied().reduce(f64::min));
        }
    }

    #[test]
    fn grants_bind_every_signed_field(seed in any::<u64>(), lat in -80.0f64..80.0, lon in -179.0f64..179.0, expiry in 1u64..1 << 50) {
        let key = SigningKey::from_bytes(&[9; 32]);
        let grant = SessionGrant::issue(&key, GeoPoint::new(lat, lon).unwrap(), expiry, &mut ChaCha20Rng::seed_from_u64(seed));
        prop_assert!(grant.verify(&key.verifying_key(), expiry).is_ok());
        prop_assert!(grant.verify(&key.verifying_key(), expiry + 1).is_err());
        prop_assert_eq!(SessionGrant::from_bytes(&grant.to_bytes()).unwrap(), grant.clone());

        let mut moved = grant.clone();
        moved.asserted = GeoPoint::new(lat + 0.5, lon).unwrap();
        prop_assert!(moved.verify(&key.verifying_key(), 0).is_err());
        let mut extended = grant.clone();
        extended.expiry_ms += 1;
        prop_assert!(extended.verify(&key.verifying_key(), 0).is_err());
        let stranger = SigningKey::from_bytes(&[10; 32]);
        prop_assert!(grant.verify(&stranger.verifying_key(), 0).is_err());
    }
}
