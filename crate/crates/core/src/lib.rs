//! Secure geolocation of clients and servers from network delays.
//!
//! * [`mp`] measures a client's one-way delays to three verifiers without
//!   trusting the client.
//! * [`cpv`] decides whether the client is inside the verifier triangle.
//! * [`slv`] checks a server's asserted location from RTT probes.
//! * [`puzzle`] binds proof-of-work to relayed timestamps.
//! * [`wire`] is the authenticated message protocol.
//! * [`netsim`] is a deterministic delay simulator for experiments.
//! * [`manager`] orchestrates requests and keeps results.

pub mod cpv;
pub mod geometry;
pub mod manager;
pub mod mp;
pub mod netsim;
pub mod puzzle;
pub mod slv;
pub mod wire;
