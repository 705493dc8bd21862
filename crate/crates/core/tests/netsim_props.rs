use geoverity::geometry::GeoPoint;
use geoverity::mp::{run_mp_round, Role};
use geoverity::netsim::{
    format_topology, parse_topology, AccessType, ClientPath, DelayModelParams, DistanceMode, Jitter, PuzzleModel,
    SimNode, SimSession, SimTopology, Wifi80211Params,
};
use proptest::prelude::*;

fn location() -> impl Strategy<Value = GeoPoint> {
    (25.0f64..50.0, -125.0f64..-70.0).prop_map(|(lat, lon)| GeoPoint::new(lat, lon).unwrap())
}

fn nodes(n: usize) -> impl Strategy<Value = Vec<SimNode>> {
    prop::collection::vec((location(), any::<bool>()), n).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (location, wifi))| SimNode {
                id: i as u32 + 1,
                location,
                access: if wifi { AccessType::Wifi } else { AccessType::Wired },
            })
            .collect()
    })
}

fn topology(nodes: Vec<SimNode>, delay: DelayModelParams, seed: u64) -> SimTopology {
    SimTopology::new(nodes, delay, Wifi80211Params::default(), DistanceMode::GreatCircle, seed).unwrap()
}

fn wired(mut nodes: Vec<SimNode>) -> Vec<SimNode> {
    nodes.iter_mut().for_each(|n| n.access = AccessType::Wired);
    nodes
}

proptest! {
    #[test]
    fn noiseless_samples_equal_propagation(nodes in nodes(2), seed in any::<u64>(), msg in any::<u64>()) {
        let topo = topology(wired(nodes), DelayModelParams::noiseless(), seed);
        let closed_form = topo.distance_km(1, 2).unwrap() / topo.delay.km_per_ms();
        prop_assert_eq!(topo.sample_owd(1, 2, msg).unwrap(), closed_form);
        prop_assert_eq!(topo.sample_owd(2, 1, msg).unwrap(), closed_form);
    }

    #[test]
    fn samples_are_positive_and_seed_determined(nodes in nodes(2), seed in any::<u64>(), msg in any::<u64>()) {
        prop_assume!(nodes[0].location != nodes[1].location);
        let a = topology(nodes.clone(), DelayModelParams::default(), seed);
        let b = topology(nodes, DelayModelParams::default(), seed);
        let s = a.sample_owd(1, 2, msg).unwrap();
        prop_assert!(s > 0.0);
        prop_assert_eq!(s, b.sample_owd(1, 2, msg).unwrap());
    }

    #[test]
    fn delay_inflation_never_shortens_a_relay(
        nodes in nodes(4),
        seed in any::<u64>(),
        legs in prop::sample::subsequence(vec![Role::A, Role::B, Role::C], 0..=3),
        added_ms in 0.0f64..100.0,
    ) {
        let topo = topology(nodes, DelayModelParams::default(), seed);
        let puzzle = PuzzleModel::default();
        let mut honest = SimSession::new(&topo, [1, 2, 3], ClientPath::Direct(4), puzzle, seed);
        let mut attacked =
            SimSession::new(&topo, [1, 2, 3], ClientPath::DelayInflated { client: 4, legs, added_ms }, puzzle, seed);
        for seq in 0..3 {
            let h = run_mp_round(&mut honest, seq).unwrap();
            let a = run_mp_round(&mut attacked, seq).unwrap();
            for (x, y) in [
                (h.a_to_b, a.a_to_b), (h.a_to_c, a.a_to_c), (h.b_to_a, a.b_to_a),
                (h.b_to_c, a.b_to_c), (h.c_to_a, a.c_to_a), (h.c_to_b, a.c_to_b),
            ] {
                prop_assert!(y >= x, "{y} < {x}");
            }
        }
    }

    #[test]
    fn topology_files_round_trip(nodes in nodes(6)) {
        prop_assert_eq!(parse_topology(&format_topology(&nodes)).unwrap(), nodes);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// With a uniform circuitous factor, mean delays inherit the triangle
    /// inequality from propagation; jitter means only add.
    #[test]
    fn mean_delays_obey_the_triangle_inequality(nodes in nodes(3), seed in any::<u64>()) {
        let delay = DelayModelParams {
            jitter: Jitter::Exponential { mean_ms: 2.0 },
            asymmetry_max: 1.0,
            circuitous_max: 1.0,
            ..DelayModelParams::default()
        };
        let topo = topology(wired(nodes), delay, seed);
        let mean = |p, q| (0..2_000u64).map(|m| topo.sample_owd(p, q, m).unwrap()).sum::<f64>() / 2_000.0;
        prop_assert!(mean(1, 2) <= mean(1, 3) + mean(3, 2));
    }
}
