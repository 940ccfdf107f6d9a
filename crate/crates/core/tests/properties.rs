use hhcast::dglm::{
    dlm_update, evolve, evolve_k, linear_bayes_update, posterior_predictor_moments, predictor_from_conjugate,
    predictor_moments, solve_conjugate, update_conjugate, Dglm, DiscountBlock, Dlm, EvolutionSpec, Family,
    PredictorMoments, StateMoments, VolatilitySpec,
};
use hhcast::distribution::{LogT, COUNT_TAIL, DEFAULT_LOWER, DEFAULT_UPPER};
use hhcast::metrics::{zape_optimal, zape_risk};
use hhcast::mixture::{Dcmm, Dlmm};
use hhcast::ForecastDistribution as FD;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn family() -> impl Strategy<Value = Family> {
    prop_oneof![Just(Family::Bernoulli), Just(Family::Poisson)]
}

/// Random symmetric positive definite matrix `A A' + eps I`.
fn spd(d: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-1.5f64..1.5, d * d).prop_map(move |v| {
        let a = DMatrix::from_vec(d, d, v);
        let m = &a * a.transpose() + DMatrix::identity(d, d) * 0.05;
        0.5 * (&m + m.transpose())
    })
}

fn state(d: usize) -> impl Strategy<Value = StateMoments> {
    (prop::collection::vec(-2.0f64..2.0, d), spd(d))
        .prop_map(|(m, c)| StateMoments::new(DVector::from_vec(m), c).unwrap())
}

fn psd_ok(c: &DMatrix<f64>) -> bool {
    let s = StateMoments { mean: DVector::zeros(c.nrows()), cov: c.clone() };
    s.min_eigenvalue() >= -1e-10 * c.trace().abs()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn conjugate_round_trip(fam in family(), f in -10.0f64..10.0, lq in (1e-4f64).ln()..(50.0f64).ln()) {
        let q = lq.exp();
        let cp = solve_conjugate(fam, PredictorMoments { f, q }).unwrap();
        prop_assert!(cp.alpha > 0.0 && cp.beta > 0.0);
        let back = predictor_from_conjugate(fam, cp);
        prop_assert!((back.f - f).abs() < 1e-8, "f {} -> {}", f, back.f);
        prop_assert!((back.q - q).abs() < 1e-8, "q {} -> {}", q, back.q);
    }

    #[test]
    fn covariances_stay_psd(
        fam in family(),
        prior in state(3),
        fv in prop::collection::vec(-2.0f64..2.0, 3),
        d1 in 0.5f64..1.0,
        d2 in 0.5f64..1.0,
        ys in prop::collection::vec(0u32..6, 1..20),
    ) {
        let blocks = vec![
            DiscountBlock { start: 0, len: 1, discount: d1 },
            DiscountBlock { start: 1, len: 2, discount: d2 },
        ];
        let evo = EvolutionSpec::random_walk(3, blocks).unwrap();
        let fv = DVector::from_vec(fv);
        let mut post = prior;
        for y in ys {
            let a = evolve(&post, &evo).unwrap();
            prop_assert!(psd_ok(&a.cov));
            let pm = predictor_moments(&a, &fv).unwrap();
            if pm.q.is_nan() || pm.q <= 1e-12 {
                break;
            }
            let y = if fam == Family::Bernoulli { (y % 2) as f64 } else { y as f64 };
            let cp = solve_conjugate(fam, pm).unwrap();
            let post_pm = posterior_predictor_moments(fam, update_conjugate(fam, cp, y));
            post = linear_bayes_update(&a, &fv, pm, post_pm).unwrap();
            prop_assert!(psd_ok(&post.cov));
        }
    }

    #[test]
    fn dlm_covariances_stay_psd(
        prior in state(2),
        fv in prop::collection::vec(-2.0f64..2.0, 2),
        dv in 0.8f64..1.0,
        ys in prop::collection::vec(-3.0f64..3.0, 1..30),
    ) {
        let evo = EvolutionSpec::random_walk(2, vec![DiscountBlock { start: 0, len: 2, discount: 0.95 }]).unwrap();
        let fv = DVector::from_vec(fv);
        let mut vol = VolatilitySpec::new(1.0, 1.0, dv).unwrap();
        let mut post = prior;
        for y in ys {
            let a = evolve(&post, &evo).unwrap();
            let (p, v) = dlm_update(&a, &fv, y, &vol).unwrap();
            prop_assert!(psd_ok(&p.cov));
            prop_assert!(v.scale > 0.0);
            post = p;
            vol = v;
        }
    }

    #[test]
    fn smaller_discount_inflates_prior_diagonal(post in state(3), lo in 0.5f64..0.99, gap in 0.001f64..0.5) {
        let hi = (lo + gap).min(1.0);
        let r = |d: f64| {
            let evo = EvolutionSpec::random_walk(3, vec![DiscountBlock { start: 0, len: 3, discount: d }]).unwrap();
            evolve(&post, &evo).unwrap().cov
        };
        let (a, b) = (r(lo), r(hi));
        for i in 0..3 {
            prop_assert!(a[(i, i)] >= b[(i, i)]);
        }
    }

    #[test]
    fn multi_step_variance_is_monotone(post in state(2), d in 0.5f64..0.999, fv in prop::collection::vec(-2.0f64..2.0, 2)) {
        let evo = EvolutionSpec::random_walk(2, vec![DiscountBlock { start: 0, len: 2, discount: d }]).unwrap();
        let fv = DVector::from_vec(fv);
        let mut last = 0.0;
        for k in 1..=12 {
            let q = predictor_moments(&evolve_k(&post, &evo, k).unwrap(), &fv).unwrap().q;
            prop_assert!(q >= last * (1.0 - 1e-12));
            last = q;
        }
    }

    #[test]
    fn dcmm_pmf_is_normalized(pi in 0.0f64..1.0, a in 0.05f64..50.0, b in 0.02f64..20.0) {
        let d = FD::zero_inflated(pi, FD::NegBinomial { alpha: a, beta: b, shift: 1 });
        let pmf = d.count_pmf(COUNT_TAIL).unwrap();
        let sum: f64 = pmf.iter().sum();
        // The enumeration stops once the remaining tail is below COUNT_TAIL.
        prop_assert!((1.0 - COUNT_TAIL - 1e-9..=1.0 + 1e-9).contains(&sum), "sum {}", sum);
    }

    #[test]
    fn dcmm_components_update_independently(
        gf in -1.0f64..1.0, cf in -1.0f64..1.0,
        ys in prop::collection::vec(0u64..5, 1..15),
    ) {
        let one = DVector::from_vec(vec![1.0]);
        let model = |fam, f: f64| {
            let st = StateMoments::new(DVector::from_vec(vec![f]), DMatrix::from_element(1, 1, 0.5)).unwrap();
            let evo = EvolutionSpec::random_walk(1, vec![DiscountBlock { start: 0, len: 1, discount: 0.97 }]).unwrap();
            Dglm::new(fam, st, evo).unwrap()
        };
        let mut dcmm = Dcmm::new(model(Family::Bernoulli, gf), model(Family::Poisson, cf)).unwrap();
        // Same data, count model first, then gate.
        let (mut gate, mut count) = (model(Family::Bernoulli, gf), model(Family::Poisson, cf));
        for y in ys {
            dcmm.update(&one, &one, y).unwrap();
            if y > 0 {
                count.update(&one, (y - 1) as f64).unwrap();
            } else {
                count.skip().unwrap();
            }
            gate.update(&one, (y > 0) as u8 as f64).unwrap();
        }
        prop_assert_eq!(&dcmm.gate.state, &gate.state);
        prop_assert_eq!(&dcmm.count.state, &count.state);
    }

    #[test]
    fn dlmm_without_zeros_is_the_dlm(xs in prop::collection::vec(0.1f64..5.0, 1..25)) {
        let one = DVector::from_vec(vec![1.0]);
        let evo = || EvolutionSpec::random_walk(1, vec![DiscountBlock { start: 0, len: 1, discount: 0.98 }]).unwrap();
        let dlm = || Dlm::new(StateMoments::isotropic(1, 1.0), evo(), VolatilitySpec::new(1.0, 1.0, 0.99).unwrap()).unwrap();
        // A gate prior pinned far on the purchase side.
        let gate_prior = StateMoments::new(DVector::from_vec(vec![12.0]), DMatrix::from_element(1, 1, 1e-3)).unwrap();
        let gate = Dglm::new(Family::Bernoulli, gate_prior, EvolutionSpec::random_walk(1, vec![]).unwrap()).unwrap();
        let mut dlmm = Dlmm::new(gate, dlm()).unwrap();
        let mut plain = dlm();
        for x in xs {
            dlmm.update(&one, &one, x).unwrap();
            plain.update(&one, x).unwrap();
        }
        let path = [one.clone()];
        match dlmm.forecast(&path, &path).unwrap() {
            FD::ZeroInflated { nonzero_prob, inner } => {
                prop_assert!(nonzero_prob > 1.0 - 1e-4);
                prop_assert_eq!(*inner, plain.forecast(&path).unwrap());
            }
            other => prop_assert!(false, "unexpected law {:?}", other),
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Monte Carlo ZAPE risk at the optimum is no larger than at nearby
    /// points, using common random numbers.
    #[test]
    fn zape_optimum_beats_perturbations(
        p0 in 0.05f64..0.6, dof in 3.0f64..30.0, loc in 0.5f64..3.5, scale in 0.2f64..1.0, seed in 0u64..1000,
    ) {
        let d = FD::zero_inflated(1.0 - p0, FD::LogT(LogT::new(dof, loc, scale, DEFAULT_LOWER, DEFAULT_UPPER).unwrap()));
        let f = zape_optimal(&d).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ys: Vec<f64> = (0..200_000).map(|_| d.sample(&mut rng)).collect();
        let mc = |g: f64| ys.iter().map(|&y| if y == 0.0 { g / (1.0 + g) } else { (y - g).abs() / y }).sum::<f64>() / ys.len() as f64;
        let delta = 0.1 * f.max(0.1);
        let at = mc(f);
        // Allow Monte Carlo noise of the risk difference.
        prop_assert!(at <= mc(f + delta) + 2e-3);
        if f > delta {
            prop_assert!(at <= mc(f - delta) + 2e-3);
        }
        let exact = zape_risk(&d, f).unwrap();
        prop_assert!((exact - at).abs() < 1e-2, "exact {} mc {}", exact, at);
    }
}
