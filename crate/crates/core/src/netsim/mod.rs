//! Deterministic network simulator.
//!
//! One-way delays are distance over a fraction of light speed, stretched
//! by per-pair circuitousness and direction asymmetry, plus jitter and
//! access delay. Every sample is a pure function of the topology seed and
//! the message it belongs to, so whole experiments replay bit-for-bit.

pub mod battery;
pub mod channel;
pub mod experiment;
pub mod model;

pub use battery::{generate_battery, generate_slv_battery, Battery, BatterySpec, SlvBatterySpec};
pub use channel::{
    measure_baseline, measure_triangle_baseline, middlebox_queue, sim_server_ip, AdversaryConfig, ClientPath,
    MiddleboxLoad, PuzzleModel, PuzzleStrategy, SimProber, SimSession,
};
pub use experiment::{
    aggregate, classify_position, cpv_reference, record_ground_truth, record_trace, run_experiment, CalibrationConfig, ExperimentConfig,
    ExperimentError, ExperimentReport, PublishedReference, Position, ReportLine, SlvCase, SlvExperimentConfig, SlvRecord,
    SlvVerifierNode, Summary, TriangleConfig, TriangleTraces, CPV_WIFI_REFERENCE, SLV_REFERENCE,
};
pub use model::{
    format_topology, parse_topology, sample_owd, wifi_access_delay, AccessType, DelayModelParams, DistanceMode, Jitter,
    NodeId, PairFactors, SimError, SimNode, SimTopology, Wifi80211Params, LIGHT_KM_PER_MS,
};
