//! Authenticated wire protocol: framing, keys, session grants, payload
//! layouts, and clock/baseline bookkeeping.

pub mod clock;
pub mod frame;
pub mod keys;
pub mod payload;
pub mod session;

pub use clock::{estimate_offset, exchange_rtt, BaselineTracker, ClockSyncState, PeerClock};
pub use frame::{frame_decode, frame_encode, peek_header, read_frame, FrameError, MsgType, UntrustedHeader, WireMessage};
pub use keys::{session_key, KeyError, KeyRing, CLIENT_ID, MANAGER_ID};
pub use payload::{
    BaselinePayload, Endpoint, OffsetPayload, PayloadError, RelayPayload, TimestampPayload, VerifyRequest,
    VerifyResponse,
};
pub use session::{GrantError, SessionGrant, GRANT_LEN};
