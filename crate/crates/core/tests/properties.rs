use proptest::prelude::*;

use resbridge::bridge::{interpolate, kinetic_cost, target_velocity};
use resbridge::numerics::optim::{clip_scale, global_norm};
use resbridge::numerics::Tensor;
use resbridge::spectral::{dct_forward, dct_inverse, decompose, Trajectory};

fn trajectory(max_t: usize, max_a: usize) -> impl Strategy<Value = Trajectory> {
    (1..=max_t, 1..=max_a).prop_flat_map(|(t, a)| {
        prop::collection::vec(-10.0f64..10.0, t * a).prop_map(move |v| Trajectory::new(t, a, v).unwrap())
    })
}

fn pair() -> impl Strategy<Value = (Trajectory, Trajectory)> {
    (1usize..=20, 1usize..=3).prop_flat_map(|(t, a)| {
        let v = prop::collection::vec(-10.0f64..10.0, t * a);
        (v.clone(), v).prop_map(move |(x, y)| (Trajectory::new(t, a, x).unwrap(), Trajectory::new(t, a, y).unwrap()))
    })
}

proptest! {
    #[test]
    fn dct_round_trip(x in trajectory(40, 4)) {
        let back = dct_inverse(&dct_forward(&x));
        prop_assert!(back.max_abs_diff(&x) < 1e-9);
    }

    #[test]
    fn dct_preserves_energy(x in trajectory(40, 4)) {
        let c = dct_forward(&x);
        let scale = 1.0 + x.sq_norm();
        prop_assert!((c.0.sq_norm() - x.sq_norm()).abs() < 1e-9 * scale);
    }

    #[test]
    fn decomposition_reconstructs_and_is_orthogonal(x in trajectory(40, 4), k in 1usize..=40) {
        let k = k.min(x.horizon());
        let d = decompose(&x, k).unwrap();
        prop_assert!(d.semantic.add(&d.execution).unwrap().max_abs_diff(&x) < 1e-9);
        prop_assert!(d.semantic.dot(&d.execution).abs() <= 1e-9 * x.sq_norm().max(1e-300));
    }

    #[test]
    fn decomposition_is_idempotent(x in trajectory(24, 3), k in 1usize..=24) {
        let k = k.min(x.horizon());
        let s = decompose(&x, k).unwrap().semantic;
        let again = decompose(&s, k).unwrap();
        prop_assert!(again.semantic.max_abs_diff(&s) < 1e-9);
        prop_assert!(again.execution.values().iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn decomposition_is_linear((x, y) in pair(), a in -3.0f64..3.0, k in 1usize..=20) {
        let k = k.min(x.horizon());
        let lhs = decompose(&x.scale(a).add(&y).unwrap(), k).unwrap().semantic;
        let rhs = decompose(&x, k).unwrap().semantic.scale(a).add(&decompose(&y, k).unwrap().semantic).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs) < 1e-9);
    }

    #[test]
    fn semantic_energy_grows_with_cutoff(x in trajectory(24, 3)) {
        let mut prev = 0.0;
        for k in 1..=x.horizon() {
            let e = decompose(&x, k).unwrap().semantic.sq_norm();
            prop_assert!(e >= prev - 1e-9 * (1.0 + x.sq_norm()));
            prev = e;
        }
        prop_assert!((prev - x.sq_norm()).abs() < 1e-9 * (1.0 + x.sq_norm()));
    }

    #[test]
    fn clipping_is_idempotent(v in prop::collection::vec(-100.0f64..100.0, 1..50), max in 0.01f64..10.0) {
        let g = [Tensor::new(vec![v.len()], v).unwrap()];
        let once: Vec<Tensor> = g.iter().map(|t| t.scale(clip_scale(global_norm(&g), max))).collect();
        let n1 = global_norm(&once);
        prop_assert!(n1 <= max * (1.0 + 1e-12));
        let s2 = clip_scale(n1, max);
        prop_assert!((s2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn path_is_consistent((x0, x1) in pair(), t in 0.0f64..=1.0, s in 0.0f64..=1.0) {
        let u = target_velocity(&x0, &x1).unwrap();
        let xt = interpolate(&x0, &x1, t).unwrap();
        let xs = interpolate(&x0, &x1, s).unwrap();
        // moving along the constant velocity from t to s lands on x_s
        let moved = xt.add(&u.scale(s - t)).unwrap();
        prop_assert!(moved.max_abs_diff(&xs) < 1e-9);
        let cost = kinetic_cost(&x0, &x1).unwrap();
        prop_assert!((cost - u.sq_norm()).abs() < 1e-9 * (1.0 + cost));
        prop_assert!(cost >= 0.0);
    }
}
