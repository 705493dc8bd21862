//! End-to-end runs on loopback. Delay links stand in for propagation:
//! verifiers sit 50 ms apart, and each client reaches them over its own
//! links.

use std::collections::HashMap;
use std::net::{IpAddr, SocketAddr, TcpListener};
use std::time::{Duration, Instant};

use ed25519_dalek::SigningKey;
use geoverity::cpv::{CalibrationParams, Decision, VerifyOptions};
use geoverity::geometry::GeoPoint;
use geoverity::manager::{LoggedOutcome, Manager, ManagerConfig, RegisteredVerifier, ResultsLog, VerifierRegistry};
use geoverity::slv::{PinStore, ProbeLayer, SlvOutcome};
use geoverity::wire::KeyRing;
use geoverity_net::{
    request_slv, run_cpv_client, spawn_delay_link, spawn_http_responder, spawn_manager, spawn_verifier_on,
    ClientBehavior, ClientOptions, DelayLink, HttpResponder, ManagerHandle, ManagerServiceConfig, PeerConfig,
    VerifierConfig, VerifierHandle,
};

const IDS: [u16; 3] = [1, 2, 3];
const BASELINE_MS: u64 = 50;
/// The centroid of a 50 ms equilateral triangle is 28.9 ms from each vertex.
const NEAR_MS: u64 = 30;
/// Server probes beyond every pair circle.
const FAR_MS: u64 = 60;
/// Client leg to the third verifier that puts the client outside while
/// keeping the delay triangles non-degenerate.
const OUTSIDE_MS: u64 = 65;

fn ms(v: u64) -> Duration {
    Duration::from_millis(v)
}

fn sites() -> [GeoPoint; 3] {
    [GeoPoint::new(38.0, -102.0).unwrap(), GeoPoint::new(38.0, -98.0).unwrap(), GeoPoint::new(42.0, -100.0).unwrap()]
}

fn centroid() -> GeoPoint {
    GeoPoint::new(39.3, -100.0).unwrap()
}

struct Lab {
    verifiers: Vec<VerifierHandle>,
    manager: ManagerHandle,
    addrs: Vec<SocketAddr>,
    server: HttpResponder,
    _links: Vec<DelayLink>,
}

impl Lab {
    fn start() -> Lab {
        let keys = KeyRing::derived(b"live-test", &[0, 1, 2, 3]);
        let signing = SigningKey::from_bytes(&[7; 32]);
        let listeners: Vec<TcpListener> = IDS.iter().map(|_| TcpListener::bind("127.0.0.1:0").unwrap()).collect();
        let addrs: Vec<SocketAddr> = listeners.iter().map(|l| l.local_addr().unwrap()).collect();
        let server = spawn_http_responder("127.0.0.1:0").unwrap();
        let mut links = Vec::new();

        let mut verifiers = Vec::new();
        for (i, listener) in listeners.into_iter().enumerate() {
            let mut cfg = VerifierConfig::new(IDS[i], "", keys.clone(), signing.verifying_key());
            for (j, peer) in addrs.iter().enumerate().filter(|(j, _)| *j != i) {
                let link = spawn_delay_link("127.0.0.1:0", &peer.to_string(), ms(BASELINE_MS), ms(BASELINE_MS)).unwrap();
                cfg.peers.push(PeerConfig { id: IDS[j], address: link.addr.to_string() });
                links.push(link);
            }
            cfg.baseline_period = ms(100);
            cfg.peer_timeout = Duration::from_secs(1);
            // A relay cannot delay the TCP handshake, so probe HTTP only.
            cfg.probe_layers = vec![ProbeLayer::HttpRequestResponse];
            for (ip, d) in [("127.0.0.1", NEAR_MS), ("127.0.0.2", FAR_MS)] {
                let link = spawn_delay_link("127.0.0.1:0", &server.addr.to_string(), ms(d), ms(d)).unwrap();
                cfg.probe_via.insert(SocketAddr::new(ip.parse().unwrap(), server.addr.port()), link.addr.to_string());
                links.push(link);
            }
            verifiers.push(spawn_verifier_on(listener, cfg).unwrap());
        }

        let registry = VerifierRegistry::new(
            IDS.iter()
                .zip(sites())
                .zip(&addrs)
                .map(|((&id, location), a)| RegisteredVerifier { id, location, address: a.to_string(), health: Default::default() })
                .collect(),
        );
        let config = ManagerConfig {
            params: Some(CalibrationParams::new(10.0, 4, 0.75).unwrap()),
            verify: VerifyOptions { interval_ms: 50.0, ..VerifyOptions::default() },
            ..ManagerConfig::default()
        };
        let manager = Manager::new(registry, config, signing, PinStore::in_memory(0.5), ResultsLog::in_memory()).with_seed(9);
        let mut svc = ManagerServiceConfig::new("127.0.0.1:0", keys);
        svc.difficulty = 4;
        svc.turn_timeout = Duration::from_secs(1);
        svc.probe_port = server.addr.port();
        svc.health_period = None;
        let manager = spawn_manager(manager, svc).unwrap();

        let lab = Lab { verifiers, manager, addrs, server, _links: links };
        lab.await_baselines();
        lab
    }

    fn await_baselines(&self) {
        let deadline = Instant::now() + Duration::from_secs(15);
        while Instant::now() < deadline {
            let ready = self.verifiers.iter().enumerate().all(|(i, v)| {
                IDS.iter().enumerate().filter(|(j, _)| *j != i).all(|(_, p)| v.baseline(*p).is_some())
            });
            if ready {
                return;
            }
            std::thread::sleep(ms(50));
        }
        panic!("baselines never became fresh");
    }

    /// A client reaching verifier i with one-way delay `delays[i]`.
    fn client(&self, delays: [u64; 3], behavior: ClientBehavior) -> (ClientOptions, Vec<DelayLink>) {
        let mut opts = ClientOptions::new();
        opts.behavior = behavior;
        let mut links = Vec::new();
        for ((id, addr), d) in IDS.iter().zip(&self.addrs).zip(delays) {
            let link = spawn_delay_link("127.0.0.1:0", &addr.to_string(), ms(d), ms(d)).unwrap();
            opts.route.insert(*id, link.addr.to_string());
            links.push(link);
        }
        (opts, links)
    }

    fn manager_addr(&self) -> String {
        self.manager.addr.to_string()
    }
}

#[test]
fn baselines_track_the_link_delay() {
    let lab = Lab::start();
    for (i, v) in lab.verifiers.iter().enumerate() {
        for (j, peer) in IDS.iter().enumerate() {
            if i != j {
                let b = v.baseline(*peer).unwrap();
                assert!((BASELINE_MS as f64 - 3.0..BASELINE_MS as f64 + 5.0).contains(&b), "baseline {b}");
                assert!(v.offset(*peer).abs() <= 3.0);
            }
        }
    }
}

#[test]
fn presence_inside_accepted_outside_rejected_tampering_caught() {
    let lab = Lab::start();

    let (opts, _near) = lab.client([NEAR_MS; 3], ClientBehavior::Honest);
    let inside = run_cpv_client(&lab.manager_addr(), centroid(), &opts).unwrap();
    assert_eq!(inside.decision, Decision::Accepted, "{inside:?}");
    assert_eq!(inside.total, 4);

    let (opts, _far) = lab.client([NEAR_MS, NEAR_MS, OUTSIDE_MS], ClientBehavior::Honest);
    let outside = run_cpv_client(&lab.manager_addr(), centroid(), &opts).unwrap();
    assert_eq!(outside.decision, Decision::Rejected, "{outside:?}");

    let (opts, _tamper) = lab.client([NEAR_MS; 3], ClientBehavior::RewriteTimestamps(5));
    let tampered = run_cpv_client(&lab.manager_addr(), centroid(), &opts).unwrap();
    assert_ne!(tampered.decision, Decision::Accepted, "{tampered:?}");
    assert_eq!(tampered.valid, 0);

    let log = lab.manager.results();
    assert_eq!(log.len(), 3);
    let decisions: Vec<_> = log
        .iter()
        .map(|e| match &e.outcome {
            LoggedOutcome::Cpv { decision, .. } => *decision,
            other => panic!("unexpected log entry {other:?}"),
        })
        .collect();
    assert_eq!(decisions, vec![inside.decision, outside.decision, tampered.decision]);
}

#[test]
fn uncovered_assertion_is_indeterminate_without_measuring() {
    let lab = Lab::start();
    let (opts, _links) = lab.client([NEAR_MS; 3], ClientBehavior::Honest);
    let r = run_cpv_client(&lab.manager_addr(), GeoPoint::new(10.0, 10.0).unwrap(), &opts).unwrap();
    assert_eq!(r.decision, Decision::Indeterminate);
    assert_eq!(r.total, 0);
}

#[test]
fn server_location_verdicts_follow_the_pins() {
    let lab = Lab::start();
    let opts = ClientOptions::new();
    let near: IpAddr = "127.0.0.1".parse().unwrap();
    let far: IpAddr = "127.0.0.2".parse().unwrap();
    let domain = Some("service.example".to_string());

    let first = request_slv(&lab.manager_addr(), near, centroid(), domain.clone(), &opts).unwrap();
    assert!(first.verification_passed, "{first:?}");
    assert_eq!(first.outcome, Some(SlvOutcome::Unsuspicious));
    assert!(first.pairs.iter().any(|p| p.covers_assertion));

    let again = request_slv(&lab.manager_addr(), near, centroid(), domain.clone(), &opts).unwrap();
    assert_eq!(again.outcome, Some(SlvOutcome::VerifiedPinned));

    let moved = request_slv(&lab.manager_addr(), far, centroid(), domain, &opts).unwrap();
    assert!(!moved.verification_passed);
    assert_eq!(moved.outcome, Some(SlvOutcome::Critical));

    let unpinned = request_slv(&lab.manager_addr(), far, centroid(), None, &opts).unwrap();
    assert_eq!(unpinned.outcome, Some(SlvOutcome::Suspicious));
    let _ = &lab.server;
}

#[test]
fn delay_link_adds_its_delay_both_ways() {
    let server = spawn_http_responder("127.0.0.1:0").unwrap();
    let link = spawn_delay_link("127.0.0.1:0", &server.addr.to_string(), ms(15), ms(25)).unwrap();
    let mut prober = geoverity_net::HttpProber::new(server.addr.port());
    prober.via = HashMap::from([(server.addr, link.addr.to_string())]);
    let (_, rtt) = prober.probe_once(server.addr.ip()).unwrap();
    assert!((40.0..55.0).contains(&rtt), "rtt {rtt}");
}
