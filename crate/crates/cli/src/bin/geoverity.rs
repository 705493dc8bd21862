use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::net::IpAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ed25519_dalek::SigningKey;
use geoverity::cpv::CalibrationGrid;
use geoverity::geometry::GeoPoint;
use geoverity::netsim::{record_ground_truth, run_experiment, ExperimentReport};
use geoverity::wire::KeyRing;
use geoverity_cli::{report, sim, CliError, Result};
use geoverity_net::{request_slv, run_cpv_client, ClientOptions};

#[derive(Parser)]
#[command(name = "geoverity", version, about = "Simulation, calibration, reporting and client tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulated experiments.
    #[command(subcommand)]
    Sim(SimCommand),
    /// Fit per-triangle parameters from ground-truth traces (JSON lines).
    Calibrate {
        traces: PathBuf,
        /// Iterations per session to calibrate for.
        #[arg(long, default_value_t = 8)]
        n: u32,
        /// Slack grid, `start:end:step` or a list.
        #[arg(long, default_value = "0:30:1")]
        epsilons: String,
        #[arg(long, default_value = "0.5,0.6,0.7,0.8,0.9")]
        taus: String,
    },
    /// Aggregate FA/FR over one or more report files.
    Report {
        #[arg(required = true)]
        records: Vec<PathBuf>,
        /// Print the summary as JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Talk to a running Manager.
    #[command(subcommand)]
    Client(ClientCommand),
    /// Generate a shared-key ring and a Manager signing key.
    Keys {
        /// Verifier ids; the Manager's id 0 is always included.
        #[arg(long, value_delimiter = ',', required = true)]
        ids: Vec<u16>,
        #[arg(long)]
        out_dir: PathBuf,
        /// Derive keys from this seed instead of the OS RNG (tests, demos).
        #[arg(long)]
        seed: Option<String>,
    },
}

#[derive(Subcommand)]
enum SimCommand {
    /// Run an experiment and write its report as JSON lines.
    Run {
        config: PathBuf,
        /// Report destination; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Record ground-truth rounds for every triangle, for `calibrate`.
    Traces {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum ClientCommand {
    /// Prove presence at a location.
    Cpv {
        #[arg(long)]
        manager: String,
        #[arg(long, allow_hyphen_values = true)]
        lat: f64,
        #[arg(long, allow_hyphen_values = true)]
        lon: f64,
        /// Reach a verifier through another address, `id=host:port`.
        #[arg(long = "route", value_parser = parse_route)]
        routes: Vec<(u16, String)>,
    },
    /// Check a server's claimed location.
    Slv {
        #[arg(long)]
        manager: String,
        #[arg(long)]
        ip: IpAddr,
        #[arg(long, allow_hyphen_values = true)]
        lat: f64,
        #[arg(long, allow_hyphen_values = true)]
        lon: f64,
        #[arg(long)]
        domain: Option<String>,
    },
}

fn parse_route(s: &str) -> Result<(u16, String), String> {
    let (id, addr) = s.split_once('=').ok_or("expected id=host:port")?;
    Ok((id.parse().map_err(|_| format!("bad verifier id `{id}`"))?, addr.to_string()))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|source| CliError::Read { path: path.display().to_string(), source })
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Sim(SimCommand::Run { config, out }) => {
            let cfg = sim::load_experiment(&config)?;
            let report = run_experiment(&cfg)?;
            let mut w = output(out.as_deref())?;
            report.write_jsonl(&mut w)?;
            w.flush()?;
            if out.is_some() {
                let (_, table) = report::render(std::slice::from_ref(&report));
                eprint!("{table}");
            }
        }
        Command::Sim(SimCommand::Traces { config, out }) => {
            let cfg = sim::load_experiment(&config)?;
            let mut w = output(out.as_deref())?;
            for t in record_ground_truth(&cfg)? {
                serde_json::to_writer(&mut w, &t)?;
                writeln!(w)?;
            }
            w.flush()?;
        }
        Command::Calibrate { traces, n, epsilons, taus } => {
            let groups = sim::read_traces(open(&traces)?)?;
            if groups.is_empty() {
                return Err(CliError::Invalid(format!("{}: no traces", traces.display())));
            }
            let grid = CalibrationGrid {
                epsilons_ms: sim::parse_grid(&epsilons)?,
                taus: sim::parse_grid(&taus)?,
                ..CalibrationGrid::with_n(n)
            };
            let results = sim::calibrate_groups(&groups, &grid);
            print!("{}", sim::calibration_toml(&results));
            if results.iter().all(|(_, r)| r.params().is_none()) {
                return Err(CliError::Invalid("no triangle could be calibrated".into()));
            }
        }
        Command::Report { records, json } => {
            let reports = records
                .iter()
                .map(|p| Ok(ExperimentReport::read_jsonl(open(p)?)?))
                .collect::<Result<Vec<_>>>()?;
            let (summary, table) = report::render(&reports);
            if json {
                println!("{}", serde_json::to_string_pretty(&summary)?);
            } else {
                print!("{table}");
            }
        }
        Command::Client(ClientCommand::Cpv { manager, lat, lon, routes }) => {
            let mut opts = ClientOptions::new();
            opts.route.extend(routes);
            let answer = run_cpv_client(&manager, GeoPoint::new(lat, lon)?, &opts)?;
            println!(
                "{:?}: {} of {} valid iterations passed ({} total)",
                answer.decision, answer.passed, answer.valid, answer.total
            );
        }
        Command::Client(ClientCommand::Slv { manager, ip, lat, lon, domain }) => {
            let answer = request_slv(&manager, ip, GeoPoint::new(lat, lon)?, domain, &ClientOptions::new())?;
            match answer.outcome {
                Some(o) => println!("{o:?} (location check {})", if answer.verification_passed { "passed" } else { "failed" }),
                None => println!("Indeterminate"),
            }
            for p in &answer.pairs {
                println!("  {p:?}");
            }
        }
        Command::Keys { ids, out_dir, seed } => {
            let mut all = vec![0u16];
            all.extend(ids.into_iter().filter(|&id| id != 0));
            all.sort_unstable();
            all.dedup();
            let (ring, signing) = match seed {
                Some(seed) => {
                    // A one-pair ring derived under a separate label yields 32 seeded bytes.
                    let sk = *KeyRing::derived(format!("manager-signing:{seed}").as_bytes(), &[0, 1]).get(0, 1)?;
                    (KeyRing::derived(seed.as_bytes(), &all), SigningKey::from_bytes(&sk))
                }
                None => {
                    let mut rng = rand::rngs::OsRng;
                    let mut ring = KeyRing::new();
                    for (i, &a) in all.iter().enumerate() {
                        for &b in &all[i + 1..] {
                            ring.insert(a, b, rand::Rng::gen(&mut rng));
                        }
                    }
                    (ring, SigningKey::generate(&mut rng))
                }
            };
            std::fs::create_dir_all(&out_dir)?;
            std::fs::write(out_dir.join("keys.txt"), ring.to_text())?;
            std::fs::write(out_dir.join("manager.key"), hex::encode(signing.to_bytes()) + "\n")?;
            std::fs::write(out_dir.join("manager.pub"), hex::encode(signing.verifying_key().as_bytes()) + "\n")?;
            println!("wrote keys for ids {all:?} to {}", out_dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
