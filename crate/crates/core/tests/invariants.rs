//! Property tests for algebraic, numerical and I/O invariants.

use proptest::prelude::*;

use shs_moments::cli::Manifest;
use shs_moments::filter::{
    moment_update, read_schedule_csv, residual_noise_moments, write_schedule_csv, MeasurementRecord,
};
use shs_moments::maxent::{med_density, Conditioning, MaxEntSolver, MedParams};
use shs_moments::model::{bouncing_ball_model, BouncingBallParams, BoxDomain};
use shs_moments::polyalg::{
    count_multiindices, enumerate_multiindices, index_of, MomentVector, MultiIndex, Polynomial,
};
use shs_moments::propagate::FluxEvaluator;
use shs_moments::quad::{integrate, tensor_rule};

fn poly2() -> impl Strategy<Value = Polynomial> {
    prop::collection::vec(((0u32..4, 0u32..4), -5.0f64..5.0), 0..6).prop_map(|terms| {
        Polynomial::from_terms(
            2,
            terms
                .into_iter()
                .map(|((a, b), c)| (MultiIndex::new(vec![a, b]), c)),
        )
        .unwrap()
    })
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn text_form_round_trips(p in poly2()) {
        let back = Polynomial::parse(&p.to_string(), 2).unwrap();
        prop_assert_eq!(back, p);
    }

    #[test]
    fn products_and_sums_evaluate_pointwise(p in poly2(), q in poly2(), x in -2.0f64..2.0, y in -2.0f64..2.0) {
        let pt = [x, y];
        let (a, b) = (p.eval(&pt), q.eval(&pt));
        prop_assert!(close((&p * &q).eval(&pt), a * b, 1e-12));
        prop_assert!(close((&p + &q).eval(&pt), a + b, 1e-12));
        prop_assert_eq!(&p * &q, &q * &p);
    }

    #[test]
    fn derivative_matches_difference_quotient(p in poly2(), x in -1.0f64..1.0, y in -1.0f64..1.0) {
        let h = 1e-5;
        let d = p.diff(0).eval(&[x, y]);
        let fd = (p.eval(&[x + h, y]) - p.eval(&[x - h, y])) / (2.0 * h);
        prop_assert!((d - fd).abs() < 1e-5 * (1.0 + d.abs()));
    }

    #[test]
    fn affine_substitution_commutes_with_evaluation(
        p in poly2(), a in prop::array::uniform4(-1.5f64..1.5), b in prop::array::uniform2(-1.0f64..1.0),
        u in prop::array::uniform2(-1.0f64..1.0),
    ) {
        let am = nalgebra::DMatrix::from_row_slice(2, 2, &a);
        let bv = nalgebra::DVector::from_column_slice(&b);
        let sub = p.affine_substitute(&am, &bv).unwrap();
        let x = &am * nalgebra::DVector::from_column_slice(&u) + &bv;
        prop_assert!(close(sub.eval(&u), p.eval(x.as_slice()), 1e-10));
    }

    #[test]
    fn index_enumeration_is_consistent(n in 1usize..4, r in 0u32..7) {
        let idx = enumerate_multiindices(n, r);
        prop_assert_eq!(idx.len(), count_multiindices(n, r));
        for (i, a) in idx.iter().enumerate() {
            prop_assert_eq!(index_of(n, a), Some(i));
            prop_assert!(a.degree() <= r);
        }
        prop_assert!(idx.windows(2).all(|w| w[0].degree() <= w[1].degree()));
    }

    #[test]
    fn tensor_rule_is_exact_for_admissible_degrees(
        p in 1usize..10, q in 1usize..10, lo in -2.0f64..1.0, w in 0.1f64..3.0, seed in 0u32..1000,
    ) {
        let (a, b) = (seed % (2 * p as u32), (seed / 7) % (2 * q as u32));
        let d = BoxDomain::new(vec![lo, lo], vec![lo + w, lo + 0.5 * w]).unwrap();
        let rule = tensor_rule(&d, &[p, q]).unwrap();
        let got = integrate(|x| x[0].powi(a as i32) * x[1].powi(b as i32), &rule).unwrap();
        let int = |k: u32, l: f64, h: f64| (h.powi(k as i32 + 1) - l.powi(k as i32 + 1)) / (k as f64 + 1.0);
        let want = int(a, lo, lo + w) * int(b, lo, lo + 0.5 * w);
        let scale = (lo.abs().max((lo + w).abs())).powi((a + b) as i32) * w * w;
        prop_assert!((got - want).abs() <= 1e-12 * scale.max(want.abs()).max(1e-300));
    }

    #[test]
    fn residual_moments_match_mixture(b in -0.3f64..0.3, p in 0.0f64..1.0, s in 0.01f64..0.5) {
        let m = residual_noise_moments(b, p, s, 8).unwrap();
        let up = MomentVector::gaussian(&[b], &[s], 8);
        let down = MomentVector::gaussian(&[-b], &[s], 8);
        for k in 0..=8 {
            let want = p * up.values()[k] + (1.0 - p) * down.values()[k];
            prop_assert!(close(m.values()[k], want, 1e-12));
        }
    }

    #[test]
    fn schedule_csv_round_trips(ys in prop::collection::vec(-1e3f64..1e3, 0..20)) {
        let recs: Vec<MeasurementRecord> =
            ys.iter().enumerate().map(|(i, &y)| MeasurementRecord { t: 0.1 * (i + 1) as f64, y }).collect();
        let mut buf = Vec::new();
        write_schedule_csv(&mut buf, &recs).unwrap();
        prop_assert_eq!(read_schedule_csv(&buf[..]).unwrap(), recs);
    }

    #[test]
    fn manifest_round_trips(entries in prop::collection::btree_map("[a-z_.]{1,12}", "[ -~]{0,30}", 0..10)) {
        let mut m = Manifest::default();
        for (k, v) in &entries {
            m.set(k.clone(), v.trim());
        }
        let back = Manifest::parse(&m.render());
        for (k, v) in &entries {
            prop_assert_eq!(back.get(k), Some(v.trim()));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn med_is_normalized_and_fit_round_trips(
        mx in -0.5f64..0.5, my in -0.5f64..0.5, sx in 0.25f64..0.6, sy in 0.25f64..0.6,
    ) {
        let d = BoxDomain::new(vec![-3.0, -3.0], vec![3.0, 3.0]).unwrap();
        let solver = MaxEntSolver::new(&d, 4, &[48, 48]).unwrap();
        let m = MomentVector::gaussian(&[mx, my], &[sx, sy], 4);
        let (p, report) = solver.fit(&m, None).unwrap();
        prop_assert!(report.converged);
        let rule = tensor_rule(&d, &[64, 64]).unwrap();
        let mass = integrate(|x| med_density(&p, x), &rule).unwrap();
        prop_assert!((mass - 1.0).abs() < 1e-9);
        let back = solver.moments(&p).unwrap();
        for (a, b) in back.values().iter().zip(m.values()) {
            prop_assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn constant_likelihood_leaves_moments_unchanged(mx in -0.5f64..0.5, sx in 0.3f64..0.6, c in -3.0f64..3.0) {
        let d = BoxDomain::new(vec![-3.0, -3.0], vec![3.0, 3.0]).unwrap();
        let solver = MaxEntSolver::new(&d, 2, &[48, 48]).unwrap();
        let m = MomentVector::gaussian(&[mx, 0.1], &[sx, 0.4], 2);
        let (p, _) = solver.fit(&m, None).unwrap();
        let (post, log_mass) = moment_update(&p, &Polynomial::constant(2, c), &solver).unwrap();
        prop_assert!((log_mass + c).abs() < 1e-9);
        for (a, b) in post.values().iter().zip(solver.moments(&p).unwrap().values()) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn impacts_never_change_height_moments(
        mx in 0.2f64..1.0, mv in -4.0f64..-0.5, c in 0.0f64..1.0, l12 in -0.3f64..0.3, l03 in -0.2f64..0.2,
    ) {
        let model = bouncing_ball_model(&BouncingBallParams { restitution: c, ..Default::default() }).unwrap();
        let d = model.domain().clone();
        let x1 = Polynomial::variable(2, 0).try_sub(&Polynomial::constant(2, mx)).unwrap().scale(1.0 / 0.3);
        let x2 = Polynomial::variable(2, 1).try_sub(&Polynomial::constant(2, mv)).unwrap();
        let e = &(&x1.pow(2) + &x2.pow(2)).scale(0.5) + &(&(&x1 * &x2.pow(2)).scale(l12) + &x2.pow(3).scale(l03));
        let e = &e + &x2.pow(4).scale(0.05);
        let solver = MaxEntSolver::new(&d, 4, &[48, 48]).unwrap();
        let p = solver
            .normalized(MedParams::from_state_exponent(&e, &d, 4, Conditioning::unit_box(&d)).unwrap())
            .unwrap();
        let flux = FluxEvaluator::new(&model, 4, 48).unwrap().flux(&p);
        let scale = flux.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for (a, v) in enumerate_multiindices(2, 4).iter().zip(&flux) {
            if a.exponents()[0] >= 1 {
                prop_assert!(v.abs() <= 1e-14 * scale);
            }
        }
    }
}
