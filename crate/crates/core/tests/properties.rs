use proptest::prelude::*;

use cggd::experiment::Normalizer;
use cggd::scalar_lab::{fr_dir_and_distance, lemma2_holds_1d, polynomial_problem};
use cggd::{
    cggd_step, init_mlp, lemma1_next_eta, satisfaction_ratio, weight_direction, CggdConfig,
    ConstraintSet, GradientVector, LinearConstraint, Tensor,
};

const SHAPES: [[usize; 2]; 3] = [[3, 2], [3, 1], [1, 3]];

fn blocks(values: &[f64]) -> Vec<Tensor> {
    let mut at = 0;
    SHAPES
        .iter()
        .map(|s| {
            let n = s[0] * s[1];
            let t = Tensor::new(s.to_vec(), values[at..at + n].to_vec()).unwrap();
            at += n;
            t
        })
        .collect()
}

const ENTRIES: usize = 6 + 3 + 3;

fn vec_of(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0..3.0f64, len)
}

proptest! {
    #[test]
    fn update_matches_explicit_formula(
        w in vec_of(ENTRIES),
        g in vec_of(ENTRIES),
        d in vec_of(ENTRIES),
        eta in 1e-4..0.5f64,
        eps in 1e-3..0.99f64,
        rho in 1.01..4.0f64,
    ) {
        let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assume!(norm > 1e-3);
        let unit: Vec<f64> = d.iter().map(|v| v / norm).collect();
        let grad = GradientVector::new(blocks(&g));
        let dir = GradientVector::new(blocks(&unit));
        let cfg = CggdConfig { rescale_factor: rho, epsilon: eps, ..Default::default() };
        let mut params = blocks(&w);
        cggd_step(&mut params, &grad, &dir, eta, &cfg).unwrap();

        let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        let m = eps.max(gnorm);
        let mut displacement_on_dir = 0.0;
        let flat: Vec<f64> = params.iter().flat_map(|p| p.data().to_vec()).collect();
        for i in 0..ENTRIES {
            let expected = w[i] - eta * (g[i] + rho * unit[i] * m);
            prop_assert!((flat[i] - expected).abs() <= 1e-12 * (1.0 + expected.abs()));
            displacement_on_dir += (flat[i] - w[i]) * unit[i];
        }
        // the constraint term dominates the loss gradient along dir
        prop_assert!(displacement_on_dir <= -eta * (rho * m - gnorm) + 1e-12);
        prop_assert!(rho * m - gnorm > 0.0);
    }

    #[test]
    fn vjp_is_linear_in_the_cotangent(
        seed in 0u64..1000,
        x in vec_of(6),
        u in vec_of(4),
        v in vec_of(4),
        a in -2.0..2.0f64,
        b in -2.0..2.0f64,
    ) {
        let model = init_mlp(&[3, 5, 2], seed).unwrap();
        let fwd = model.forward(&Tensor::new(vec![2, 3], x).unwrap()).unwrap();
        let ct = |c: &[f64]| Tensor::new(vec![2, 2], c.to_vec()).unwrap();
        let mixed: Vec<f64> = u.iter().zip(&v).map(|(p, q)| a * p + b * q).collect();
        let lhs = fwd.tape.vjp(fwd.output, &ct(&mixed), &fwd.params).unwrap().flatten();
        let gu = fwd.tape.vjp(fwd.output, &ct(&u), &fwd.params).unwrap().flatten();
        let gv = fwd.tape.vjp(fwd.output, &ct(&v), &fwd.params).unwrap().flatten();
        for i in 0..lhs.len() {
            let rhs = a * gu[i] + b * gv[i];
            prop_assert!((lhs[i] - rhs).abs() <= 1e-10 * (1.0 + rhs.abs()));
        }
    }

    #[test]
    fn weight_direction_is_unit_or_zero(seed in 0u64..500, x in vec_of(8), bound in -1.0..1.0f64) {
        let model = init_mlp(&[2, 6, 2], seed).unwrap();
        let cs = ConstraintSet::new(vec![
            LinearConstraint::upper_bound(2, 0, bound),
            LinearConstraint::ordering(2, 1, 0),
        ]).unwrap();
        let d = weight_direction(&cs, &model, &Tensor::new(vec![4, 2], x).unwrap()).unwrap();
        let n = d.global_norm();
        prop_assert!(n == 0.0 || (n - 1.0).abs() < 1e-12, "norm {}", n);
    }

    #[test]
    fn output_direction_decreases_violation(
        a in vec_of(3),
        y in vec_of(3),
        c in -2.0..2.0f64,
        t in 1e-4..1.0f64,
    ) {
        prop_assume!(a.iter().any(|v| v.abs() > 1e-3));
        let con = LinearConstraint::new("c", a, vec![], c).unwrap();
        let value = con.evaluate(&[], &y).unwrap();
        let dir = con.output_direction(&[], &y).unwrap();
        let nonzero = dir.iter().any(|&v| v != 0.0);
        prop_assert_eq!(nonzero, value > 0.0);
        if nonzero {
            let moved: Vec<f64> = y.iter().zip(&dir).map(|(v, d)| v - t * d).collect();
            prop_assert!(con.evaluate(&[], &moved).unwrap() < value);
        }
    }

    #[test]
    fn satisfaction_ratio_ignores_order(
        ys in vec_of(10),
        bounds in prop::collection::vec(-2.0..2.0f64, 1..5),
        rotate_rows in 0usize..5,
        rotate_cs in 0usize..5,
    ) {
        let cs: Vec<LinearConstraint> = bounds
            .iter()
            .enumerate()
            .map(|(i, &b)| LinearConstraint::upper_bound(2, i % 2, b))
            .collect();
        let xs = Tensor::new(vec![5, 0], vec![]).unwrap();
        let y = Tensor::new(vec![5, 2], ys.clone()).unwrap();
        let base = satisfaction_ratio(&ConstraintSet::new(cs.clone()).unwrap(), &xs, &y).unwrap();

        let mut rows: Vec<[f64; 2]> = ys.chunks(2).map(|r| [r[0], r[1]]).collect();
        rows.rotate_left(rotate_rows);
        rows.reverse();
        let mut cs2 = cs;
        let k = rotate_cs % cs2.len();
        cs2.rotate_left(k);
        let y2 = Tensor::from_rows(&rows).unwrap();
        let other = satisfaction_ratio(&ConstraintSet::new(cs2).unwrap(), &xs, &y2).unwrap();
        prop_assert_eq!(base, other);
    }

    #[test]
    fn normalizer_inverts(
        train in prop::collection::vec(-100.0..100.0f64, 6..30),
        probe in vec_of(6),
    ) {
        let rows = train.len() / 3;
        let t = Tensor::new(vec![rows, 3], train[..rows * 3].to_vec()).unwrap();
        let p = Tensor::new(vec![2, 3], probe).unwrap();
        for n in [Normalizer::fit_zscore(&t).unwrap(), Normalizer::fit_minmax(&t).unwrap()] {
            prop_assert!(n.scale.iter().all(|&s| s > 0.0));
            let back = n.inverse(&n.transform(&p).unwrap()).unwrap();
            for (x, y) in back.data().iter().zip(p.data()) {
                prop_assert!((x - y).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn region_distance_properties(w in -2.0..7.0f64, v in -2.0..7.0f64) {
        let fr = polynomial_problem().fr;
        let (dir, d) = fr_dir_and_distance(&fr, w);
        prop_assert!(d >= 0.0);
        prop_assert_eq!(d == 0.0, fr.contains(w));
        prop_assert_eq!(dir == 0.0, fr.contains(w));
        // stepping toward the region by the distance lands in it
        prop_assert!(fr.distance(w - dir * d) < 1e-12);
        let (_, dv) = fr_dir_and_distance(&fr, v);
        prop_assert!((d - dv).abs() <= (w - v).abs() + 1e-15);
    }

    #[test]
    fn distance_contraction_on_random_states(w in 0.0..6.0f64, log_eta in -7.0..-1.0f64) {
        let p = polynomial_problem();
        if let Some((ok, d, bound)) = lemma2_holds_1d(&p, w, 10f64.powf(log_eta), 0.01) {
            prop_assert!(ok, "{} > {}", d, bound);
        }
    }

    #[test]
    fn recurrence_never_grows_the_step_size(
        eta in 1e-6..1.0f64,
        m in 1e-3..1e4f64,
        eps in 1e-3..0.99f64,
        g_next in 0.0..100.0f64,
        g_curr in 0.0..100.0f64,
    ) {
        let next = lemma1_next_eta(eta, m, eps, g_next, g_curr).unwrap();
        prop_assert!(next > 0.0);
        if g_next >= eps {
            prop_assert!(next <= eta / 5.0);
        } else {
            prop_assert!((next - eta * eps.max(g_curr) / (5.0 * eps)).abs() <= 1e-15 * next.max(1.0));
        }
    }
}
