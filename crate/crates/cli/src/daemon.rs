//! Daemon config files (TOML).
//!
//! Key material lives in separate files: the shared-key ring in the
//! `KeyRing` text format, and the Manager's Ed25519 key as 64 hex chars.
//! Relative paths resolve against the config file's directory.

use std::path::{Path, PathBuf};

use ed25519_dalek::{SigningKey, VerifyingKey};
use geoverity::cpv::CalibrationParams;
use geoverity::geometry::GeoPoint;
use geoverity::manager::{RegisteredVerifier, VerifierRegistry};
use geoverity::slv::ProbeLayer;
use geoverity::wire::KeyRing;
use geoverity_net::{PeerConfig, VerifierConfig};
use serde::Deserialize;

use crate::{read_file, CliError, Result};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifierFile {
    pub id: u16,
    pub listen: String,
    pub key_file: PathBuf,
    /// The Manager's Ed25519 public key, hex.
    pub manager_public_key: String,
    #[serde(default)]
    pub peers: Vec<PeerEntry>,
    #[serde(default)]
    pub static_offsets: Vec<StaticOffset>,
    #[serde(default)]
    pub probe_layers: Option<Vec<ProbeLayer>>,
    #[serde(default)]
    pub clock_skew_ms: i64,
}

#[derive(Debug, Clone, Deserialize)]
pub struct PeerEntry {
    pub id: u16,
    pub address: String,
}

#[derive(Debug, Clone, Deserialize)]
pub struct StaticOffset {
    pub peer: u16,
    pub offset_ms: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManagerFile {
    pub listen: String,
    pub key_file: PathBuf,
    pub signing_key_file: PathBuf,
    /// Append-only results log; in memory when absent.
    #[serde(default)]
    pub results: Option<PathBuf>,
    /// Pin store; in memory when absent.
    #[serde(default)]
    pub pins: Option<PathBuf>,
    #[serde(default = "default_cell")]
    pub pin_cell_deg: f64,
    #[serde(default = "default_probe_port")]
    pub probe_port: u16,
    #[serde(default = "default_probe_samples")]
    pub probe_samples: u8,
    pub verifiers: Vec<VerifierEntry>,
    /// Per-triangle parameters, as printed by `geoverity calibrate`.
    #[serde(default)]
    pub calibrated: Vec<CalibratedEntry>,
}

fn default_cell() -> f64 {
    0.5
}
fn default_probe_port() -> u16 {
    443
}
fn default_probe_samples() -> u8 {
    3
}

#[derive(Debug, Clone, Deserialize)]
pub struct VerifierEntry {
    pub id: u16,
    pub lat: f64,
    pub lon: f64,
    pub address: String,
}

#[derive(Debug, Clone, Deserialize)]
pub struct CalibratedEntry {
    /// Informational; carried over from calibration output.
    #[serde(default)]
    pub triangle_id: Option<String>,
    pub verifiers: [u16; 3],
    pub epsilon_ms: f64,
    pub n: u32,
    pub tau: f64,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn base_dir(config: &Path) -> &Path {
    config.parent().unwrap_or(Path::new("."))
}

pub fn load_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(toml::from_str(&read_file(path)?)?)
}

pub fn parse_verifying_key(text: &str) -> Result<VerifyingKey> {
    let bytes: [u8; 32] = hex::decode(text.trim())
        .ok()
        .and_then(|b| b.try_into().ok())
        .ok_or_else(|| CliError::Invalid("public key must be 64 hex chars".into()))?;
    VerifyingKey::from_bytes(&bytes).map_err(|e| CliError::Invalid(format!("public key: {e}")))
}

pub fn load_signing_key(path: &Path) -> Result<SigningKey> {
    let bytes: [u8; 32] = hex::decode(read_file(path)?.trim())
        .ok()
        .and_then(|b| b.try_into().ok())
        .ok_or_else(|| CliError::Invalid(format!("{}: signing key must be 64 hex chars", path.display())))?;
    Ok(SigningKey::from_bytes(&bytes))
}

impl VerifierFile {
    /// Builds the daemon config; timing fields keep their defaults.
    pub fn into_config(self, config_path: &Path) -> Result<VerifierConfig> {
        let keys = KeyRing::load(&resolve(base_dir(config_path), &self.key_file))?;
        let mut cfg = VerifierConfig::new(self.id, self.listen, keys, parse_verifying_key(&self.manager_public_key)?);
        cfg.peers = self.peers.into_iter().map(|p| PeerConfig { id: p.id, address: p.address }).collect();
        cfg.static_offsets = self.static_offsets.into_iter().map(|o| (o.peer, o.offset_ms)).collect();
        if let Some(layers) = self.probe_layers {
            cfg.probe_layers = layers;
        }
        cfg.clock_skew_ms = self.clock_skew_ms;
        Ok(cfg)
    }
}

impl ManagerFile {
    pub fn registry(&self) -> Result<VerifierRegistry> {
        let verifiers = self
            .verifiers
            .iter()
            .map(|v| {
                Ok(RegisteredVerifier {
                    id: v.id,
                    location: GeoPoint::new(v.lat, v.lon)?,
                    address: v.address.clone(),
                    health: Default::default(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(VerifierRegistry::new(verifiers))
    }

    /// Calibrated entries keyed by sorted triangle ids.
    pub fn calibrated(&self) -> Result<Vec<([u16; 3], CalibrationParams)>> {
        self.calibrated
            .iter()
            .map(|c| {
                let mut ids = c.verifiers;
                ids.sort_unstable();
                Ok((ids, CalibrationParams::new(c.epsilon_ms, c.n, c.tau)?))
            })
            .collect()
    }

    pub fn paths(&self, config_path: &Path) -> ManagerPaths {
        let base = base_dir(config_path);
        ManagerPaths {
            keys: resolve(base, &self.key_file),
            signing_key: resolve(base, &self.signing_key_file),
            results: self.results.as_deref().map(|p| resolve(base, p)),
            pins: self.pins.as_deref().map(|p| resolve(base, p)),
        }
    }
}

pub struct ManagerPaths {
    pub keys: PathBuf,
    pub signing_key: PathBuf,
    pub results: Option<PathBuf>,
    pub pins: Option<PathBuf>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manager_file_parses_with_defaults() {
        let text = r#"
            listen = "0.0.0.0:7000"
            key_file = "keys.txt"
            signing_key_file = "manager.key"

            [[verifiers]]
            id = 1
            lat = 38.0
            lon = -102.0
            address = "10.0.0.1:7001"

            [[calibrated]]
            verifiers = [3, 1, 2]
            epsilon_ms = 12.0
            n = 8
            tau = 0.7
        "#;
        let m: ManagerFile = toml::from_str(text).unwrap();
        assert_eq!(m.probe_port, 443);
        assert_eq!(m.pin_cell_deg, 0.5);
        assert_eq!(m.registry().unwrap().get(1).unwrap().address, "10.0.0.1:7001");
        assert_eq!(m.calibrated().unwrap()[0].0, [1, 2, 3]);
        let paths = m.paths(Path::new("/etc/geoverity/managerd.toml"));
        assert_eq!(paths.keys, PathBuf::from("/etc/geoverity/keys.txt"));
    }

    #[test]
    fn unknown_verifier_fields_are_rejected() {
        let text = "id = 1\nlisten = \"x\"\nkey_file = \"k\"\nmanager_public_key = \"00\"\nbogus = 1\n";
        assert!(toml::from_str::<VerifierFile>(text).is_err());
    }

    #[test]
    fn bad_public_key_is_an_error() {
        assert!(parse_verifying_key("abcd").is_err());
        let key = SigningKey::from_bytes(&[3; 32]).verifying_key();
        assert_eq!(parse_verifying_key(&hex::encode(key.as_bytes())).unwrap(), key);
    }
}
