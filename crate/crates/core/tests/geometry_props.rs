use geoverity::geometry::{
    circle_contains, cpv_condition, heron_area, Baseline, CircleRule, Condition, EpsilonMode, PlanePoint, TriangleArea,
};
use proptest::prelude::*;

fn side() -> impl Strategy<Value = f64> {
    0.0f64..1_000.0
}

fn point() -> impl Strategy<Value = PlanePoint> {
    (-50.0f64..50.0, -50.0f64..50.0).prop_map(|(x, y)| PlanePoint::new(x, y))
}

fn cross(o: PlanePoint, a: PlanePoint, b: PlanePoint) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Barycentric coordinates of `p` in triangle `t`.
fn barycentric(t: [PlanePoint; 3], p: PlanePoint) -> [f64; 3] {
    let total = cross(t[0], t[1], t[2]);
    [cross(p, t[1], t[2]) / total, cross(t[0], p, t[2]) / total, cross(t[0], t[1], p) / total]
}

fn area(s: [f64; 3]) -> Option<f64> {
    heron_area(s[0], s[1], s[2]).unwrap().value()
}

proptest! {
    #[test]
    fn heron_is_symmetric(a in side(), b in side(), c in side()) {
        let reference = heron_area(a, b, c).unwrap();
        for p in [[a, c, b], [b, a, c], [b, c, a], [c, a, b], [c, b, a]] {
            prop_assert_eq!(heron_area(p[0], p[1], p[2]).unwrap(), reference);
        }
    }

    #[test]
    fn heron_collapses_and_scales(s in 0.0f64..1_000.0, a in side(), b in side(), c in side(), k in 0.01f64..100.0) {
        prop_assert_eq!(heron_area(s, s, 0.0).unwrap(), TriangleArea::Area(0.0));
        if let Some(base) = area([a, b, c]) {
            let scaled = area([k * a, k * b, k * c]).expect("scaling keeps a valid triangle valid");
            prop_assert!((scaled - k * k * base).abs() <= 1e-9 * (1.0 + k * k * base));
        }
    }

    #[test]
    fn heron_flags_broken_triangle_inequality(a in 1.0f64..500.0, b in 1.0f64..500.0, excess in 1e-3f64..100.0) {
        prop_assert_eq!(heron_area(a, b, a + b + excess).unwrap(), TriangleArea::Degenerate);
    }

    #[test]
    fn cpv_condition_matches_point_in_triangle(a in point(), b in point(), c in point(), p in point()) {
        let tri = [a, b, c];
        let outer = cross(a, b, c).abs() / 2.0;
        prop_assume!(outer > 50.0);
        let lambda = barycentric(tri, p);
        let min = lambda.iter().copied().fold(f64::INFINITY, f64::min);
        prop_assume!(min.abs() > 1e-4);
        let baseline = Baseline { x: a.dist(b), y: b.dist(c), z: c.dist(a) };
        let est = (p.dist(a), p.dist(b), p.dist(c));
        let got = cpv_condition(est, baseline, 0.0, EpsilonMode::SideSlack);
        prop_assert_eq!(got, if min > 0.0 { Condition::Pass } else { Condition::Fail });
    }

    #[test]
    fn circle_contains_matches_point_in_circle(v1 in point(), v2 in point(), s in point()) {
        let d12 = v1.dist(v2);
        prop_assume!(d12 > 1.0);
        let mid = PlanePoint::new((v1.x + v2.x) / 2.0, (v1.y + v2.y) / 2.0);
        let r = mid.dist(s);
        prop_assume!((r - d12 / 2.0).abs() > 1e-6);
        prop_assert_eq!(circle_contains(v1.dist(s), v2.dist(s), d12, 0.0, CircleRule::RightAngle), r < d12 / 2.0);
    }

    #[test]
    fn cpv_condition_is_monotone_in_epsilon(
        est in (side(), side(), side()),
        base in (1.0f64..1_000.0, 1.0f64..1_000.0, 1.0f64..1_000.0),
        e1 in 0.0f64..50.0,
        extra in 0.0f64..50.0,
        raw in any::<bool>(),
    ) {
        let mode = if raw { EpsilonMode::RawArea } else { EpsilonMode::SideSlack };
        let baseline = Baseline { x: base.0, y: base.1, z: base.2 };
        if cpv_condition(est, baseline, e1, mode) == Condition::Pass {
            prop_assert_eq!(cpv_condition(est, baseline, e1 + extra, mode), Condition::Pass);
        }
    }

    #[test]
    fn circle_contains_is_monotone_in_epsilon(d1 in side(), d2 in side(), d12 in side(), e1 in 0.0f64..50.0, extra in 0.0f64..50.0) {
        for rule in [CircleRule::RightAngle, CircleRule::SumForm] {
            if circle_contains(d1, d2, d12, e1, rule) {
                prop_assert!(circle_contains(d1, d2, d12, e1 + extra, rule));
            }
        }
    }
}
