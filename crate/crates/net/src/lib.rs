//! Real-network mode: the verifier daemon, the Manager service, the
//! relaying client, live server probes, and a delay-injecting TCP relay for
//! lab setups.
//!
//! Everything runs on `std::net` with one thread per connection. Frames are
//! the authenticated wire format from `geoverity::wire`; the Manager decides
//! every verdict, verifiers only measure and relay.

pub mod client;
pub mod conn;
pub mod lab;
pub mod probe;
pub mod service;
pub mod verifier;

use thiserror::Error;

pub use client::{request_slv, run_cpv_client, ClientBehavior, ClientOptions, CpvAnswer, SlvAnswer};
pub use lab::{spawn_delay_link, spawn_http_responder, DelayLink, HttpResponder};
pub use probe::HttpProber;
pub use service::{spawn_manager, ManagerHandle, ManagerServiceConfig};
pub use verifier::{spawn_verifier, spawn_verifier_on, PeerConfig, VerifierConfig, VerifierHandle};

#[derive(Debug, Error)]
pub enum NetError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("frame: {0}")]
    Frame(#[from] geoverity::wire::FrameError),
    #[error("payload: {0}")]
    Payload(#[from] geoverity::wire::PayloadError),
    #[error(transparent)]
    Key(#[from] geoverity::wire::KeyError),
    #[error("session grant: {0}")]
    Grant(#[from] geoverity::wire::GrantError),
    #[error(transparent)]
    Manager(#[from] geoverity::manager::ManagerError),
    #[error("protocol: {0}")]
    Protocol(String),
}

pub type Result<T, E = NetError> = std::result::Result<T, E>;
