use hgwavenet::manifold::{
    distance, exp_map_origin, log_map_origin, mobius_add, mobius_matvec, Curvature, PoincarePoint, TangentVector,
};
use proptest::prelude::*;

fn curvature() -> impl Strategy<Value = f64> {
    prop_oneof![Just(0.5), Just(1.0), Just(2.0)]
}

/// A point of norm at most `frac / √c`, with its curvature.
fn point(dim: usize, frac: f64) -> impl Strategy<Value = PoincarePoint> {
    (curvature(), prop::collection::vec(-1.0f64..1.0, dim), 0.0f64..=1.0).prop_map(move |(c, dir, r)| {
        let n = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
        let scale = if n > 0.0 { r * frac / (n * c.sqrt()) } else { 0.0 };
        let coords = dir.iter().map(|x| x * scale).collect();
        PoincarePoint::new(coords, Curvature::from_value(c).unwrap()).unwrap()
    })
}

fn with_curvature(p: &PoincarePoint, coords: Vec<f64>) -> PoincarePoint {
    PoincarePoint::new(coords, p.curvature()).unwrap()
}

fn in_ball(p: &PoincarePoint) -> bool {
    let n = p.coords().iter().map(|x| x * x).sum::<f64>().sqrt();
    n.is_finite() && n < 1.0 / p.curvature().c().sqrt()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn exp_log_round_trip(y in point(5, 0.99)) {
        let back = exp_map_origin(&log_map_origin(&y), y.curvature());
        prop_assert!(max_diff(back.coords(), y.coords()) < 1e-6);
    }

    #[test]
    fn distance_is_a_metric(x in point(3, 0.95), ys in prop::collection::vec(-1.0f64..1.0, 6)) {
        let c = x.curvature().c();
        let s = 0.6 / c.sqrt();
        let y = with_curvature(&x, ys[..3].iter().map(|v| v * s).collect());
        let z = with_curvature(&x, ys[3..].iter().map(|v| v * s).collect());
        let (dxy, dyx) = (distance(&x, &y), distance(&y, &x));
        prop_assert!(dxy >= 0.0);
        prop_assert!((dxy - dyx).abs() < 1e-9);
        prop_assert!(distance(&x, &z) <= dxy + distance(&y, &z) + 1e-7);
        prop_assert!(distance(&x, &x) < 1e-7);
    }

    #[test]
    fn mobius_identity_and_inverse(y in point(4, 0.99)) {
        let o = PoincarePoint::origin(4, y.curvature());
        prop_assert!(max_diff(mobius_add(&o, &y).coords(), y.coords()) < 1e-9);
        let neg = with_curvature(&y, y.coords().iter().map(|v| -v).collect());
        prop_assert!(mobius_add(&neg, &y).coords().iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn matvec_composes(
        x in point(3, 0.5),
        m1 in prop::collection::vec(-0.5f64..0.5, 9),
        m2 in prop::collection::vec(-0.5f64..0.5, 9),
    ) {
        let mut prod = vec![0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    prod[i * 3 + j] += m1[i * 3 + k] * m2[k * 3 + j];
                }
            }
        }
        let two_step = mobius_matvec(&m1, &mobius_matvec(&m2, &x));
        let direct = mobius_matvec(&prod, &x);
        prop_assert!(max_diff(two_step.coords(), direct.coords()) < 1e-6);
    }

    #[test]
    fn operations_stay_in_ball(
        x in point(4, 1.0),
        y in point(4, 1.0),
        big in prop::collection::vec(-1e3f64..1e3, 4),
        m in prop::collection::vec(-50.0f64..50.0, 16),
    ) {
        let c = x.curvature();
        let y = with_curvature(&x, y.coords().to_vec());
        prop_assert!(in_ball(&x));
        prop_assert!(in_ball(&mobius_add(&x, &y)));
        prop_assert!(in_ball(&exp_map_origin(&TangentVector::new(big.clone()), c)));
        prop_assert!(in_ball(&mobius_matvec(&m, &x)));
        prop_assert!(in_ball(&PoincarePoint::new(big, c).unwrap()));
        prop_assert!(distance(&x, &y).is_finite());
    }
}
