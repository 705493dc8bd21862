use geoverity::cpv::{tally, validity_floor, vote, CalibrationParams, Decision, IterationRecord};
use geoverity::geometry::Condition;
use proptest::prelude::*;

fn condition() -> impl Strategy<Value = Condition> {
    prop_oneof![Just(Condition::Pass), Just(Condition::Fail), Just(Condition::Invalid)]
}

fn records(outcomes: &[Condition]) -> Vec<IterationRecord> {
    outcomes.iter().map(|&outcome| IterationRecord { estimate: None, outcome, failure: None }).collect()
}

proptest! {
    #[test]
    fn lowering_tau_never_rejects_an_accepted_client(
        n in 1u32..700,
        valid_frac in 0.0f64..=1.0,
        pass_frac in 0.0f64..=1.0,
        tau_hi in 0.01f64..=1.0,
        drop in 0.0f64..=1.0,
    ) {
        let valid = (valid_frac * n as f64).round() as u32;
        let passed = (pass_frac * valid as f64).round() as u32;
        let tau_lo = (tau_hi * (1.0 - drop)).max(0.001);
        let hi = vote(passed, valid, &CalibrationParams::new(0.0, n, tau_hi).unwrap());
        let lo = vote(passed, valid, &CalibrationParams::new(0.0, n, tau_lo).unwrap());
        if hi == Decision::Accepted {
            prop_assert_eq!(lo, Decision::Accepted);
        }
        if lo == Decision::Rejected {
            prop_assert_eq!(hi, Decision::Rejected);
        }
    }

    #[test]
    fn too_few_valid_iterations_is_never_a_verdict(n in 1u32..700, passed_frac in 0.0f64..=1.0, tau in 0.01f64..=1.0) {
        let valid = validity_floor(n).saturating_sub(1);
        let passed = (passed_frac * valid as f64) as u32;
        prop_assert_eq!(vote(passed, valid, &CalibrationParams::new(0.0, n, tau).unwrap()), Decision::Indeterminate);
    }

    #[test]
    fn tally_counts_are_nested_and_deterministic(outcomes in prop::collection::vec(condition(), 1..100), tau in 0.01f64..=1.0) {
        let params = CalibrationParams::new(5.0, outcomes.len() as u32, tau).unwrap();
        let a = tally(records(&outcomes), &params);
        let b = tally(records(&outcomes), &params);
        prop_assert_eq!(&a, &b);
        prop_assert!(a.iterations_passed <= a.iterations_valid && a.iterations_valid <= a.iterations_total);
        prop_assert_eq!(a.iterations_total as usize, outcomes.len());
    }

    #[test]
    fn parameter_bounds_are_enforced(eps in -10.0f64..50.0, n in 0u32..10, tau in -0.5f64..1.5) {
        let ok = eps >= 0.0 && n >= 1 && tau > 0.0 && tau <= 1.0;
        prop_assert_eq!(CalibrationParams::new(eps, n, tau).is_ok(), ok);
    }
}
