//! Shared pieces of the `geoverity`, `verifierd` and `managerd` binaries:
//! config files, experiment loading, and report tables.

pub mod daemon;
pub mod report;
pub mod sim;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Toml(#[from] toml::de::Error),
    #[error("{0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Key(#[from] geoverity::wire::KeyError),
    #[error(transparent)]
    Experiment(#[from] geoverity::netsim::ExperimentError),
    #[error(transparent)]
    Sim(#[from] geoverity::netsim::SimError),
    #[error(transparent)]
    Calibration(#[from] geoverity::cpv::CalibrationError),
    #[error(transparent)]
    Cpv(#[from] geoverity::cpv::CpvError),
    #[error(transparent)]
    Geometry(#[from] geoverity::geometry::GeometryError),
    #[error(transparent)]
    Pins(#[from] geoverity::slv::PinError),
    #[error(transparent)]
    Net(#[from] geoverity_net::NetError),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

pub fn read_file(path: &std::path::Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| CliError::Read { path: path.display().to_string(), source })
}
