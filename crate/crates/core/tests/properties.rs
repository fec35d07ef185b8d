use nudge_core::compliance::{complier_mean, predict_probs, ComplianceModel};
use nudge_core::design::{objective, project, solve, ConstraintSet, DesignProblem, GainReference, SolverOptions};
use nudge_core::estimation::{plugin_pipeline, NuisanceSpec};
use nudge_core::features::FeatureRecipe;
use nudge_core::linalg::Matrix;
use nudge_core::model::{
    induced_treatment_propensity, read_dataset, schema_for, write_dataset_to, ComplianceProbabilities,
    EncouragementDataset, NudgePropensity,
};
use nudge_core::simulation::{generate_covariates, generate_dataset, generate_study, CellSummary, DgpConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn random_x(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Matrix<f64> {
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        data.push(1.0);
        for _ in 1..d {
            data.push(rng.sample::<f64, _>(StandardNormal));
        }
    }
    Matrix::from_row_major(n, d, data).unwrap()
}

fn random_probs(rng: &mut ChaCha8Rng, n: usize) -> ComplianceProbabilities<f64> {
    let mut p_at = Vec::with_capacity(n);
    let mut p_c = Vec::with_capacity(n);
    for _ in 0..n {
        let c = rng.gen_range(0.05..0.9);
        p_c.push(c);
        p_at.push(rng.gen_range(0.0..1.0 - c));
    }
    ComplianceProbabilities::from_at_c(p_at, p_c).unwrap()
}

fn problem(seed: u64, n: usize, d: usize) -> DesignProblem<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_x(&mut rng, n, d);
    let probs = random_probs(&mut rng, n);
    DesignProblem::from_probs(x, probs, true).unwrap()
}

fn unit_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen::<f64>()).collect()
}

fn norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

proptest! {
    #[test]
    fn induced_propensity_is_affine_monotone_and_bounded(seed in any::<u64>(), n in 1usize..30, t in 0.0f64..=1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let probs = random_probs(&mut rng, n);
        let a = unit_vec(&mut rng, n);
        let b = unit_vec(&mut rng, n);
        let hi: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x.max(*y)).collect();
        let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| t * x + (1.0 - t) * y).collect();
        let ind = |e: &[f64]| induced_treatment_propensity(&probs, &NudgePropensity::new(e.to_vec()).unwrap()).unwrap();
        let (wa, wb, wh, wm) = (ind(&a), ind(&b), ind(&hi), ind(&mix));
        for i in 0..n {
            let (lo, up) = (probs.p_at()[i], probs.p_at()[i] + probs.p_c()[i]);
            prop_assert!(wa[i] >= lo && wa[i] <= up);
            prop_assert!(wh[i] >= wa[i] && wh[i] >= wb[i]);
            prop_assert!((wm[i] - (t * wa[i] + (1.0 - t) * wb[i])).abs() <= 1e-12);
        }
    }

    #[test]
    fn csv_round_trip_is_exact(
        seed in any::<u64>(),
        n in 1usize..25,
        d in 1usize..5,
        with_y in any::<bool>(),
        spread in prop_oneof![Just(1.0), Just(1e-300), Just(1e300)],
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n * d).map(|_| spread * rng.sample::<f64, _>(StandardNormal)).collect();
        let y = with_y.then(|| (0..n).map(|_| rng.sample::<f64, _>(StandardNormal) / 3.0).collect::<Vec<f64>>());
        let ds = EncouragementDataset::new(
            Matrix::from_row_major(n, d, x).unwrap(),
            (0..n).map(|_| rng.gen()).collect(),
            (0..n).map(|_| rng.gen()).collect(),
            y,
            d - 1,
            (0..d).map(|j| format!("c{j}")).collect(),
        ).unwrap();
        let mut buf = Vec::new();
        write_dataset_to(&ds, &mut buf).unwrap();
        let back: EncouragementDataset<f64> = read_dataset(&buf[..], &schema_for(&ds)).unwrap();
        prop_assert_eq!(back.x().as_slice(), ds.x().as_slice());
        prop_assert_eq!(back.z(), ds.z());
        prop_assert_eq!(back.w(), ds.w());
        prop_assert_eq!(back.y(), ds.y());
        let mut again = Vec::new();
        write_dataset_to(&back, &mut again).unwrap();
        prop_assert_eq!(buf, again);
    }

    #[test]
    fn predicted_probabilities_are_valid(seed in any::<u64>(), d in 1usize..5, scale in 0.1f64..20.0, eps in 1e-4f64..0.1) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let beta = |rng: &mut ChaCha8Rng| (0..d).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
        let model = ComplianceModel {
            beta_z0: beta(&mut rng),
            beta_z1: beta(&mut rng),
            ridge_lambda: 1e-4,
            clip_epsilon: eps,
            features: FeatureRecipe::identity(d),
        };
        let x = random_x(&mut rng, 40, d);
        let p = predict_probs(&model, &x).unwrap();
        for i in 0..40 {
            prop_assert!((p.p_at()[i] + p.p_nt()[i] + p.p_c()[i] - 1.0).abs() <= 1e-12);
            prop_assert!(p.p_c()[i] >= eps);
            prop_assert!(p.p_at()[i] >= 0.0 && p.p_nt()[i] >= 0.0);
        }
    }

    #[test]
    fn complier_mean_ignores_common_rescaling(seed in any::<u64>(), n in 1usize..40, c in 0.1f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_x(&mut rng, n, 3);
        let p_c: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..0.3)).collect();
        let p_at: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..0.3)).collect();
        let base = ComplianceProbabilities::from_at_c(p_at.clone(), p_c.clone()).unwrap();
        let scaled = ComplianceProbabilities::from_at_c(p_at, p_c.iter().map(|v| c * v).collect()).unwrap();
        let a = complier_mean(&x, &base).unwrap();
        let b = complier_mean(&x, &scaled).unwrap();
        for (u, v) in a.x_bar_c.iter().zip(&b.x_bar_c) {
            prop_assert!((u - v).abs() <= 1e-12 * (1.0 + u.abs()));
        }
        prop_assert!((b.p_c_marginal - c * a.p_c_marginal).abs() <= 1e-14);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn objective_is_midpoint_convex(seed in any::<u64>(), n in 8usize..50, d in 2usize..6) {
        let prob = problem(seed, n, d);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let u = unit_vec(&mut rng, n);
        let v = unit_vec(&mut rng, n);
        let m: Vec<f64> = u.iter().zip(&v).map(|(a, b)| 0.5 * (a + b)).collect();
        let f = |e: Vec<f64>| objective(&NudgePropensity::new(e).unwrap(), &prob);
        let (Ok(fu), Ok(fv), Ok(fm)) = (f(u), f(v), f(m)) else {
            return Err(TestCaseError::reject("singular information"));
        };
        prop_assert!(fm <= 0.5 * (fu + fv) + 1e-9 * fu.abs().max(fv.abs()));
    }

    #[test]
    fn more_treatment_variance_lowers_the_objective(seed in any::<u64>(), n in 8usize..50, d in 2usize..6) {
        let prob = problem(seed, n, d);
        let p = prob.probs();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 2);
        let (mut better, mut worse) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for i in 0..n {
            let (a, b) = (rng.gen::<f64>(), rng.gen::<f64>());
            let w = |e: f64| {
                let ew = p.p_at()[i] + p.p_c()[i] * e;
                ew * (1.0 - ew)
            };
            let (hi, lo) = if w(a) >= w(b) { (a, b) } else { (b, a) };
            better.push(hi);
            worse.push(lo);
        }
        let f = |e: Vec<f64>| objective(&NudgePropensity::new(e).unwrap(), &prob);
        let (Ok(fb), Ok(fw)) = (f(better), f(worse)) else {
            return Err(TestCaseError::reject("singular information"));
        };
        prop_assert!(fb <= fw * (1.0 + 1e-12));
    }

    #[test]
    fn projection_is_idempotent_and_nonexpansive(
        seed in any::<u64>(),
        n in 4usize..40,
        budget in prop::option::of(0.2f64..0.8),
        monotone in any::<bool>(),
        rho in prop::option::of(0.5f64..0.95),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let probs = random_probs(&mut rng, n);
        let score = unit_vec(&mut rng, n);
        let mut cons = ConstraintSet::unconstrained().with_score(score);
        if let Some(mu) = budget {
            cons = cons.with_budget(mu);
            if let Some(r) = rho {
                cons = cons.with_gain(r, GainReference::Auto);
            }
        }
        if monotone {
            cons = cons.monotone();
        }
        let tol = 1e-10;
        let u: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.5..1.5)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.5..1.5)).collect();
        let Ok(pu) = project(&u, &cons, &probs, tol) else {
            return Err(TestCaseError::reject("infeasible constraint set"));
        };
        let pv = project(&v, &cons, &probs, tol).unwrap();
        let ppu = project(&pu, &cons, &probs, tol).unwrap();
        prop_assert!(norm(&ppu, &pu) <= 10.0 * tol, "idempotence gap {}", norm(&ppu, &pu));
        prop_assert!(norm(&pu, &pv) <= norm(&u, &v) + 10.0 * tol);
    }

    #[test]
    fn tau_late_is_recomputed_exactly(seed in any::<u64>()) {
        let cfg = DgpConfig { n: 300, ..DgpConfig::default() };
        let e = NudgePropensity::constant(cfg.n, 0.5).unwrap();
        let data = generate_dataset(&cfg, &e, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let est = plugin_pipeline(&data, &e, &NuisanceSpec::default(), None).unwrap();
        let tau: f64 = est.x_bar_c.iter().zip(&est.gamma_hat).map(|(a, b)| a * b).sum();
        prop_assert_eq!(est.tau_late.to_bits(), tau.to_bits());
    }

    #[test]
    fn cell_mse_is_variance_plus_squared_bias(
        est in prop::collection::vec(-1e3f64..1e3, 2..200),
        truth in -1e3f64..1e3,
    ) {
        let outcomes: Vec<_> = est.iter().map(|&v| Ok(v)).collect();
        let c = CellSummary::from_estimates("d", 10, &outcomes, truth);
        let scale = c.mse.abs().max(1.0);
        prop_assert!((c.mse - (c.variance + c.bias * c.bias)).abs() <= 1e-10 * scale);
    }

    #[test]
    fn nudge_moves_treatment_only_through_compliers(seed in any::<u64>(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let cfg = DgpConfig { n: 200, ..DgpConfig::default() };
        let x = generate_covariates(&cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let ea = NudgePropensity::constant(cfg.n, a).unwrap();
        let eb = NudgePropensity::constant(cfg.n, b).unwrap();
        let (da, ca) = generate_study(&cfg, &x, &ea, &mut ChaCha8Rng::seed_from_u64(seed ^ 3)).unwrap();
        let (db, cb) = generate_study(&cfg, &x, &eb, &mut ChaCha8Rng::seed_from_u64(seed ^ 3)).unwrap();
        prop_assert_eq!(ca, cb);
        let (ya, yb) = (da.y().unwrap(), db.y().unwrap());
        for i in 0..cfg.n {
            if da.w()[i] == db.w()[i] {
                prop_assert_eq!(ya[i].to_bits(), yb[i].to_bits());
            }
            if da.z()[i] == db.z()[i] {
                prop_assert_eq!(da.w()[i], db.w()[i]);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn adding_constraints_never_lowers_the_optimum(seed in any::<u64>(), n in 10usize..40, mu in 0.3f64..0.7) {
        let prob = problem(seed, n, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 4);
        let score = unit_vec(&mut rng, n);
        let p = prob.probs();
        let lo = p.p_at().iter().sum::<f64>() / n as f64;
        let hi = lo + p.p_c().iter().sum::<f64>() / n as f64;
        prop_assume!(mu > lo + 0.01 && mu < hi - 0.01);
        let opts = SolverOptions::default();
        let chain = [
            ConstraintSet::unconstrained(),
            ConstraintSet::unconstrained().with_budget(mu),
            ConstraintSet::unconstrained().with_score(score).with_budget(mu).monotone(),
        ];
        let mut prev = f64::NEG_INFINITY;
        for cons in &chain {
            let v = solve(&prob, cons, &opts).unwrap().objective;
            prop_assert!(v >= prev * (1.0 - 1e-9), "{v} < {prev}");
            prev = v;
        }
    }
}
