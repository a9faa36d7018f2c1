mod common;

use nalgebra::{DMatrix, DVector};
use truncreg::model::flatten;
use truncreg::sampling::{make_low_rank_signal, rng_from_seed};
use truncreg::solver::fit_from;
use truncreg::{fit, objective, EstimatorConfig, Regularizer, SampleSet};

fn gaussian_problem(n: usize, d: usize, seed: u64) -> SampleSet {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = rng_from_seed(seed);
    let x = DMatrix::from_fn(n, d, |_, _| StandardNormal.sample(&mut rng));
    let theta = DVector::from_fn(d, |j, _| if j < 3 { 1.0 - j as f64 } else { 0.0 });
    let noise = DVector::from_fn(n, |_, _| {
        0.3 * Distribution::<f64>::sample(&StandardNormal, &mut rng)
    });
    let y = &x * theta + noise;
    SampleSet::new(x, y).unwrap()
}

#[test]
fn matches_grid_oracle_on_small_instances() {
    for index in 0..12 {
        let case = common::oracle_case(7, index);
        assert!(
            (case.fitted - case.oracle).abs() <= 1e-4,
            "instance {index} (lambda {}): fitted {} oracle {}",
            case.lambda,
            case.fitted,
            case.oracle
        );
    }
}

#[test]
fn restart_at_optimum_is_a_fixed_point() {
    let s = gaussian_problem(60, 8, 1);
    for reg in [Regularizer::L1, Regularizer::Nuclear { rows: 2, cols: 4 }] {
        let cfg = EstimatorConfig::new(0.1, reg);
        let first = fit(&s, &cfg).unwrap();
        assert!(first.result.converged);
        let again = fit_from(&s, &cfg, Some(&first.result.theta_hat)).unwrap();
        assert!(again.result.converged);
        assert!(
            again.result.iterations <= 2,
            "{} iterations",
            again.result.iterations
        );
        let (f0, f1) = (
            objective(&s, &first.result.theta_hat, &cfg).unwrap(),
            objective(&s, &again.result.theta_hat, &cfg).unwrap(),
        );
        assert!((f0 - f1).abs() <= cfg.solver.rel_tol * f0.abs().max(1.0));
    }
}

#[test]
fn scaling_response_and_lambda_scales_the_minimizer() {
    let s = gaussian_problem(80, 6, 2);
    for reg in [Regularizer::L1, Regularizer::Nuclear { rows: 2, cols: 3 }] {
        let mut cfg = EstimatorConfig::new(0.2, reg);
        cfg.solver.kkt_tol = 1e-12;
        let base = fit(&s, &cfg).unwrap().result.theta_hat;
        for c in [0.5, 3.0] {
            let scaled = SampleSet::new(s.design().clone(), s.response() * c).unwrap();
            let mut cfg_c = cfg;
            cfg_c.lambda *= c;
            cfg_c.solver.kkt_tol *= c;
            let theta = fit(&scaled, &cfg_c).unwrap().result.theta_hat;
            let err = (&theta - &base * c).amax();
            assert!(err <= 1e-8 * c.max(1.0), "{reg:?} c = {c}: {err}");
        }
    }
}

#[test]
fn objective_trace_is_non_increasing() {
    for seed in 0..10 {
        let s = gaussian_problem(15, 9, 100 + seed);
        for reg in [Regularizer::L1, Regularizer::Nuclear { rows: 3, cols: 3 }] {
            let cfg = EstimatorConfig::new(0.05 * (1 + seed) as f64, reg);
            let trace = fit(&s, &cfg).unwrap().result.objective_trace;
            assert!(
                trace.windows(2).all(|w| w[1] <= w[0]),
                "seed {seed} {reg:?}"
            );
        }
    }
}

#[test]
fn nuclear_fit_recovers_low_rank_matrix() {
    use rand_distr::{Distribution, StandardNormal};
    let theta = flatten(&make_low_rank_signal(6, 5, 1, 3).unwrap());
    let mut rng = rng_from_seed(4);
    let x = DMatrix::from_fn(600, 30, |_, _| StandardNormal.sample(&mut rng));
    let y = &x * &theta;
    let s = SampleSet::new(x, y).unwrap();
    let report = fit(
        &s,
        &EstimatorConfig::new(0.02, Regularizer::Nuclear { rows: 6, cols: 5 }),
    )
    .unwrap();
    assert!(report.result.converged);
    assert!((report.result.theta_hat - theta).norm() < 0.05);
}
