use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::Parser;
use geoverity_cli::daemon::{load_toml, VerifierFile};
use geoverity_cli::Result;
use geoverity_net::spawn_verifier;

/// Verifier daemon: keeps peer baselines fresh, relays timestamps for
/// presence sessions, and probes servers on request.
#[derive(Parser)]
#[command(name = "verifierd", version)]
struct Args {
    /// TOML file with id, listen address, peers and key paths.
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = 6_000)]
    baseline_period_ms: u64,
    #[arg(long, default_value_t = 1_800_000)]
    offset_period_ms: u64,
    /// Baselines older than this are not reported.
    #[arg(long, default_value_t = 60_000)]
    staleness_ms: u64,
    #[arg(long, default_value_t = 2_000)]
    peer_timeout_ms: u64,
}

fn run(args: Args) -> Result<()> {
    let file: VerifierFile = load_toml(&args.config)?;
    let mut cfg = file.into_config(&args.config)?;
    cfg.baseline_period = Duration::from_millis(args.baseline_period_ms);
    cfg.offset_period = Duration::from_millis(args.offset_period_ms);
    cfg.staleness_ms = args.staleness_ms;
    cfg.peer_timeout = Duration::from_millis(args.peer_timeout_ms);
    let id = cfg.id;
    let handle = spawn_verifier(cfg)?;
    log::info!("verifier {id} listening on {}", handle.addr);
    println!("verifier {id} listening on {}", handle.addr);
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
