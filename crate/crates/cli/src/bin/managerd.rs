use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::Parser;
use geoverity::cpv::{CalibrationParams, VerifyOptions};
use geoverity::manager::{Manager, ManagerConfig, ResultsLog};
use geoverity::slv::PinStore;
use geoverity::wire::KeyRing;
use geoverity_cli::daemon::{load_signing_key, load_toml, ManagerFile};
use geoverity_cli::{CliError, Result};
use geoverity_net::{spawn_manager, ManagerServiceConfig};

/// Manager daemon: selects triangles, runs presence sessions through the
/// verifiers, checks server locations, and logs every result.
#[derive(Parser)]
#[command(name = "managerd", version)]
struct Args {
    /// TOML file with listen address, key paths and the verifier registry.
    #[arg(long)]
    config: PathBuf,
    /// Iterations per presence session, for triangles without calibration.
    #[arg(long, default_value_t = 8)]
    iterations: u32,
    #[arg(long, default_value_t = 300.0)]
    interval_ms: f64,
    #[arg(long, default_value_t = 10.0)]
    epsilon_ms: f64,
    #[arg(long, default_value_t = 0.7)]
    tau: f64,
    /// Puzzle difficulty in leading zero bits.
    #[arg(long, default_value_t = 8)]
    difficulty: u8,
    #[arg(long, default_value_t = 120_000)]
    grant_lifetime_ms: u64,
    /// Baselines older than this make a session indeterminate.
    #[arg(long, default_value_t = 60_000.0)]
    staleness_ms: f64,
    #[arg(long, default_value_t = 5_000)]
    join_timeout_ms: u64,
    #[arg(long, default_value_t = 2_000)]
    turn_timeout_ms: u64,
    /// 0 disables the verifier health check.
    #[arg(long, default_value_t = 30_000)]
    health_period_ms: u64,
}

fn run(args: Args) -> Result<()> {
    let file: ManagerFile = load_toml(&args.config)?;
    let paths = file.paths(&args.config);
    let keys = KeyRing::load(&paths.keys)?;
    let signing = load_signing_key(&paths.signing_key)?;
    let pins = match &paths.pins {
        Some(p) => PinStore::open(p, file.pin_cell_deg, true)?,
        None => PinStore::in_memory(file.pin_cell_deg),
    };
    let results = match &paths.results {
        Some(p) => ResultsLog::open(p)?,
        None => ResultsLog::in_memory(),
    };
    let config = ManagerConfig {
        params: Some(CalibrationParams::new(args.epsilon_ms, args.iterations, args.tau)?),
        verify: VerifyOptions { interval_ms: args.interval_ms, staleness_ms: args.staleness_ms, ..VerifyOptions::default() },
        grant_lifetime_ms: args.grant_lifetime_ms,
        ..ManagerConfig::default()
    };
    let mut manager = Manager::new(file.registry()?, config, signing, pins, results);
    for (ids, params) in file.calibrated()? {
        if ids.iter().any(|id| manager.registry.get(*id).is_none()) {
            return Err(CliError::Invalid(format!("calibrated triangle {ids:?} names an unregistered verifier")));
        }
        manager.calibrated.insert(ids, params);
    }

    let mut svc = ManagerServiceConfig::new(file.listen.clone(), keys);
    svc.difficulty = args.difficulty;
    svc.join_timeout = Duration::from_millis(args.join_timeout_ms);
    svc.turn_timeout = Duration::from_millis(args.turn_timeout_ms);
    svc.probe_port = file.probe_port;
    svc.probe_samples = file.probe_samples;
    svc.health_period = (args.health_period_ms > 0).then(|| Duration::from_millis(args.health_period_ms));
    let handle = spawn_manager(manager, svc)?;
    println!("manager listening on {}", handle.addr);
    loop {
        std::thread::park();
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
