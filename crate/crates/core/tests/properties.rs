use nrm_core::checkpoint;
use nrm_core::eval::heldout_loglik;
use nrm_core::obs::log_prior_predictive;
use nrm_core::prior::{kappa_log, laplace_exponent, predictive_weights, AuxiliaryU};
use nrm_core::{AdfConfig, DirichletPosterior, EpState, ModelState, NggpParams, SparseDoc};
use proptest::prelude::*;

fn params() -> impl Strategy<Value = NggpParams> {
    (0.01f64..100.0, prop_oneof![Just(0.0), 0.05f64..0.95], 0.01f64..100.0)
        .prop_map(|(a, s, t)| NggpParams::new(a, s, t).unwrap())
}

fn doc(v: u32) -> impl Strategy<Value = SparseDoc> {
    prop::collection::vec((0..v, 1u32..6), 1..8).prop_map(|p| SparseDoc::from_pairs(p).unwrap())
}

fn docs(v: u32, n: usize) -> impl Strategy<Value = Vec<SparseDoc>> {
    prop::collection::vec(doc(v), 1..n)
}

proptest! {
    #[test]
    fn kappa_ratio_identity(p in params(), m in 1.0f64..60.0, u in 0.0f64..1e3) {
        let r = (kappa_log(m + 1.0, u, &p).unwrap() - kappa_log(m, u, &p).unwrap()).exp();
        let want = (m - p.sigma()) / (u + p.tau());
        prop_assert!((r - want).abs() <= 1e-10 * want);
    }

    #[test]
    fn laplace_exponent_increasing_concave(p in params(), u in 0.0f64..1e3, h in 0.01f64..10.0) {
        let (f0, f1, f2) = (laplace_exponent(u, &p), laplace_exponent(u + h, &p), laplace_exponent(u + 2.0 * h, &p));
        prop_assert!(f1 > f0);
        prop_assert!(f2 - f1 <= (f1 - f0) * (1.0 + 1e-9) + 1e-12);
    }

    #[test]
    fn predictive_weights_normalized_and_equivariant(
        p in params(),
        s in prop::collection::vec(0.0f64..50.0, 0..10),
        u in 0.01f64..100.0,
        rot in 0usize..10,
    ) {
        let aux = AuxiliaryU { u_hat: u, n: 10, expected_k: 2.0 };
        let w = predictive_weights(&s, Some(&aux), &p).unwrap();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(*w.last().unwrap() > 0.0);
        let mut s2 = s.clone();
        if !s2.is_empty() {
            let r = rot % s2.len();
            s2.rotate_left(r);
            let w2 = predictive_weights(&s2, Some(&aux), &p).unwrap();
            let mut w1 = w[..s.len()].to_vec();
            w1.rotate_left(r);
            for (a, b) in w1.iter().zip(&w2) {
                prop_assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn dirichlet_weights_are_crp(s in prop::collection::vec(0.0f64..50.0, 0..10), a in 0.01f64..100.0, u in 0.01f64..100.0) {
        let p = NggpParams::new(a, 0.0, 1.0).unwrap();
        let aux = AuxiliaryU { u_hat: u, n: 3, expected_k: 1.0 };
        let w = predictive_weights(&s, Some(&aux), &p).unwrap();
        let z: f64 = s.iter().sum::<f64>() + a;
        for (k, &sk) in s.iter().enumerate() {
            prop_assert!((w[k] - sk / z).abs() < 1e-14);
        }
    }

    #[test]
    fn update_downdate_round_trip(
        base in docs(12, 20),
        d in doc(12),
        w in 0.0f64..=1.0,
    ) {
        let mut post = DirichletPosterior::new(0.4);
        for b in &base {
            post.update(b, 0.7);
        }
        let before = post.clone();
        post.update(&d, w);
        post.downdate(&d, w).unwrap();
        for &(word, c) in before.counts() {
            prop_assert!((post.count(word) - c).abs() < 1e-9);
        }
        prop_assert!((post.count_total() - before.count_total()).abs() < 1e-9);
    }

    #[test]
    fn randomized_round_trip_preserves_total(ds in prop::collection::vec((doc(30), 0.0f64..=1.0), 100)) {
        let mut post = DirichletPosterior::new(1.0);
        for (d, w) in &ds {
            post.update(d, *w);
        }
        let total = post.count_total();
        for (d, w) in ds.iter().rev() {
            post.downdate(d, *w).unwrap();
        }
        prop_assert!(post.count_total().abs() < 1e-9 * total.max(1.0));
    }

    #[test]
    fn log_predictive_exchangeable_in_entry_order(pairs in prop::collection::vec((0u32..10, 1u32..5), 1..10), seed in any::<u64>()) {
        let mut post = DirichletPosterior::new(0.5);
        post.update(&SparseDoc::from_pairs([(1, 3), (4, 2)]).unwrap(), 0.8);
        let a = SparseDoc::from_pairs(pairs.clone()).unwrap();
        let mut shuffled = pairs;
        let n = shuffled.len();
        shuffled.rotate_left((seed as usize) % n);
        shuffled.reverse();
        let b = SparseDoc::from_pairs(shuffled).unwrap();
        prop_assert_eq!(post.log_predictive(&a, 10).unwrap(), post.log_predictive(&b, 10).unwrap());
        let fresh = DirichletPosterior::new(0.5).log_predictive(&a, 10).unwrap();
        prop_assert_eq!(fresh, log_prior_predictive(&a, 0.5, 10).unwrap());
    }

    #[test]
    fn adf_mass_and_ledger_invariants(p in params(), ds in docs(8, 60)) {
        let cfg = AdfConfig::new(p, 0.5, 8);
        let mut ep = EpState::fit_adf(cfg, &ds, None).unwrap();
        let n = ds.len() as f64;
        prop_assert!(ep.model().mass_residual().abs() <= 1e-6 * n);
        for _ in 0..2 {
            let order: Vec<usize> = (0..ds.len()).collect();
            ep.sweep(&ds, &order).unwrap();
            ep.audit(&ds).unwrap();
            prop_assert!(ep.model().mass_residual().abs() <= 1e-6 * n);
        }
    }

    #[test]
    fn heldout_invariant_to_test_order(p in params(), train in docs(6, 30), mut test in docs(6, 10)) {
        let mut model = ModelState::new(AdfConfig::new(p, 0.5, 6)).unwrap();
        model.fit_all(&train, None).unwrap();
        let a = heldout_loglik(&model, &test).unwrap();
        test.reverse();
        let b = heldout_loglik(&model, &test).unwrap();
        prop_assert!(a.is_finite());
        prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
    }

    #[test]
    fn checkpoint_round_trip(p in params(), ds in docs(10, 40)) {
        let cfg = AdfConfig::new(p, 0.5, 10);
        let ep = EpState::fit_adf(cfg, &ds, Some(7)).unwrap();
        let bytes = checkpoint::encode(ep.model(), Some(ep.contributions()));
        let back = checkpoint::decode(&bytes).unwrap();
        prop_assert_eq!(&back.model, ep.model());
        prop_assert_eq!(back.contributions.as_deref(), Some(ep.contributions()));
    }
}
