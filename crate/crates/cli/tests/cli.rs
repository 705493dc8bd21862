//! Drives the built binaries the way an operator would.

use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::time::{Duration, Instant};

use geoverity::netsim::{ExperimentReport, Summary};
use geoverity::wire::KeyRing;
use geoverity_cli::daemon::{parse_verifying_key, ManagerFile};
use geoverity_cli::sim::load_experiment;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn geoverity(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geoverity")).args(args).output().unwrap()
}

fn ok(out: Output) -> String {
    assert!(out.status.success(), "failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn demo_configs_load() {
    let battery = load_experiment(&configs().join("demo-experiment.toml")).unwrap();
    assert_eq!(battery.triangles.len(), 5);
    assert!(battery.calibration.is_some());
    let topo = load_experiment(&configs().join("demo-topology.toml")).unwrap();
    assert_eq!(topo.nodes.len(), 8);
    assert_eq!(topo.triangles[0].vertices, [1, 2, 3]);
}

#[test]
fn sim_run_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("demo.jsonl");
    ok(geoverity(&["sim", "run", s(&configs().join("demo-experiment.toml")), "--out", s(&out)]));
    let report = ExperimentReport::read_jsonl(std::io::BufReader::new(std::fs::File::open(&out).unwrap())).unwrap();
    assert_eq!(report.cpv_records().count(), 200);

    let table = ok(geoverity(&["report", s(&out)]));
    assert!(table.lines().any(|l| l.starts_with("CPV")), "{table}");

    let json = ok(geoverity(&["report", s(&out), s(&out), "--json"]));
    let summary: Summary = serde_json::from_str(&json).unwrap();
    let cpv = summary.cpv.unwrap();
    // Two copies of the same report double every count.
    assert_eq!(cpv.inside_total + cpv.outside_total + cpv.indeterminate, 400);
    let single = report.summary().unwrap().cpv.unwrap();
    assert_eq!((cpv.false_accepts, cpv.false_rejects), (2 * single.false_accepts, 2 * single.false_rejects));
    assert_eq!(cpv.false_accept_rate, single.false_accept_rate);
}

#[test]
fn sim_is_deterministic() {
    let cfg = configs().join("demo-experiment.toml");
    assert_eq!(ok(geoverity(&["sim", "run", s(&cfg)])), ok(geoverity(&["sim", "run", s(&cfg)])));
}

#[test]
fn traces_then_calibrate() {
    let dir = tempfile::tempdir().unwrap();
    let traces = dir.path().join("traces.jsonl");
    ok(geoverity(&["sim", "traces", s(&configs().join("demo-experiment.toml")), "--out", s(&traces)]));
    let text = ok(geoverity(&["calibrate", s(&traces), "--epsilons", "0:20:1"]));

    #[derive(serde::Deserialize)]
    struct Doc {
        calibrated: Vec<geoverity_cli::daemon::CalibratedEntry>,
    }
    let doc: Doc = toml::from_str(&text).unwrap();
    assert_eq!(doc.calibrated.len(), 5);
    for c in &doc.calibrated {
        assert_eq!(c.n, 8);
        assert!((0.0..=20.0).contains(&c.epsilon_ms));
    }
}

#[test]
fn errors_name_the_file_and_exit_nonzero() {
    let out = geoverity(&["report", "/nonexistent/records.jsonl"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/records.jsonl"));
}

#[test]
fn keys_are_written_and_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        ok(geoverity(&["keys", "--ids", "1,2,3", "--out-dir", s(d.path()), "--seed", "demo"]));
    }
    let read = |d: &Path, f: &str| std::fs::read_to_string(d.join(f)).unwrap();
    assert_eq!(read(a.path(), "keys.txt"), read(b.path(), "keys.txt"));
    let ring = KeyRing::load(&a.path().join("keys.txt")).unwrap();
    assert!(ring.get(0, 3).is_ok() && ring.get(1, 2).is_ok());
    parse_verifying_key(&read(a.path(), "manager.pub")).unwrap();

    let c = tempfile::tempdir().unwrap();
    ok(geoverity(&["keys", "--ids", "1,2,3", "--out-dir", s(c.path())]));
    assert_ne!(read(a.path(), "keys.txt"), read(c.path(), "keys.txt"));
}

struct Daemons(Vec<Child>);

impl Drop for Daemons {
    fn drop(&mut self) {
        for c in &mut self.0 {
            let _ = c.kill();
            let _ = c.wait();
        }
    }
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

/// Starts three verifiers and a Manager on loopback and asks for a
/// presence check. With no delay between anything the measured triangle
/// is degenerate, so only the plumbing is under test here.
#[test]
fn daemons_serve_a_client() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(geoverity(&["keys", "--ids", "1,2,3", "--out-dir", s(d), "--seed", "smoke"]));
    let pubkey = std::fs::read_to_string(d.join("manager.pub")).unwrap();
    let ports: Vec<u16> = (0..4).map(|_| free_port()).collect();
    let sites = [(38.0, -102.0), (38.0, -98.0), (42.0, -100.0)];

    let mut daemons = Daemons(Vec::new());
    for i in 0..3 {
        let mut cfg = format!(
            "id = {}\nlisten = \"127.0.0.1:{}\"\nkey_file = \"keys.txt\"\nmanager_public_key = \"{}\"\n",
            i + 1,
            ports[i],
            pubkey.trim()
        );
        for j in (0..3).filter(|&j| j != i) {
            cfg += &format!("\n[[peers]]\nid = {}\naddress = \"127.0.0.1:{}\"\n", j + 1, ports[j]);
        }
        let path = d.join(format!("verifier{}.toml", i + 1));
        std::fs::write(&path, cfg).unwrap();
        daemons.0.push(
            Command::new(env!("CARGO_BIN_EXE_verifierd"))
                .args(["--config", s(&path), "--baseline-period-ms", "200"])
                .stdout(Stdio::null())
                .stderr(Stdio::null())
                .spawn()
                .unwrap(),
        );
    }
    let mut mcfg = format!(
        "listen = \"127.0.0.1:{}\"\nkey_file = \"keys.txt\"\nsigning_key_file = \"manager.key\"\nresults = \"results.jsonl\"\n",
        ports[3]
    );
    for (i, (lat, lon)) in sites.iter().enumerate() {
        mcfg += &format!("\n[[verifiers]]\nid = {}\nlat = {lat}\nlon = {lon}\naddress = \"127.0.0.1:{}\"\n", i + 1, ports[i]);
    }
    let mpath = d.join("managerd.toml");
    std::fs::write(&mpath, &mcfg).unwrap();
    let _: ManagerFile = toml::from_str(&mcfg).unwrap();
    daemons.0.push(
        Command::new(env!("CARGO_BIN_EXE_managerd"))
            .args(["--config", s(&mpath), "--iterations", "2", "--interval-ms", "20", "--difficulty", "2"])
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()
            .unwrap(),
    );

    let manager = format!("127.0.0.1:{}", ports[3]);
    let deadline = Instant::now() + Duration::from_secs(20);
    let answer = loop {
        let out = geoverity(&["client", "cpv", "--manager", &manager, "--lat", "39.3", "--lon", "-100.0"]);
        if out.status.success() {
            break String::from_utf8(out.stdout).unwrap();
        }
        assert!(Instant::now() < deadline, "no answer: {}", String::from_utf8_lossy(&out.stderr));
        std::thread::sleep(Duration::from_millis(200));
    };
    assert!(
        ["Accepted", "Rejected", "Indeterminate"].iter().any(|d| answer.starts_with(d)),
        "unexpected answer {answer}"
    );
    eprintln!("daemons answered: {answer}");
    let log = std::fs::read_to_string(d.join("results.jsonl")).unwrap();
    assert!(!log.trim().is_empty());
}

#[test]
fn readme_config_examples_parse() {
    let readme = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../README.md")).unwrap();
    let blocks: Vec<&str> = readme.split("```toml\n").skip(1).map(|b| b.split("```").next().unwrap()).collect();
    assert_eq!(blocks.len(), 2);
    let verifier: geoverity_cli::daemon::VerifierFile =
        toml::from_str(&blocks[0].replace("<contents of manager.pub>", &"ab".repeat(32))).unwrap();
    assert_eq!(verifier.peers.len(), 1);
    let manager: ManagerFile = toml::from_str(blocks[1]).unwrap();
    manager.registry().unwrap();
    assert_eq!(manager.calibrated().unwrap().len(), 1);
}
