//! Randomized invariants of the penalties, their proximal maps and the
//! truncation rules. Each suite runs `cases` random inputs.

use nalgebra::{DMatrix, DVector};
use proptest::collection::vec;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use truncreg::model::{singular_values, unflatten};
use truncreg::truncation::{clip_response, entrywise_truncate, norm_truncate};
use truncreg::Regularizer;

const TOL: f64 = 1e-10;
const SVD_TOL: f64 = 1e-8;

pub type Suite = (&'static str, fn(u32) -> Result<(), String>);

pub const SUITES: &[Suite] = &[
    ("l1 norm axioms", l1_norm_axioms),
    ("nuclear norm axioms", nuclear_norm_axioms),
    ("l1 prox nonexpansive", l1_prox_nonexpansive),
    ("nuclear prox nonexpansive", nuclear_prox_nonexpansive),
    ("l1 Moreau decomposition", l1_moreau),
    (
        "nuclear norm equals l1 of singular values",
        nuclear_is_l1_of_spectrum,
    ),
    ("entrywise truncation idempotent", entrywise_idempotent),
    ("norm truncation idempotent", norm_idempotent),
    ("response clip idempotent", clip_idempotent),
    ("entrywise truncation monotone in tau", entrywise_monotone),
    ("norm truncation monotone in tau", norm_monotone),
    ("norm truncation preserves direction", norm_direction),
];

fn run<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    let mut runner = TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    });
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

fn vector() -> impl Strategy<Value = Vec<f64>> {
    vec(-10.0..10.0f64, 1..9)
}

fn vector_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1usize..9).prop_flat_map(|d| (vec(-10.0..10.0f64, d), vec(-10.0..10.0f64, d)))
}

/// `(rows, cols, a, b)` with `a`, `b` flattened `rows × cols` matrices.
fn matrix_pair() -> impl Strategy<Value = (usize, usize, Vec<f64>, Vec<f64>)> {
    (1usize..6, 1usize..6).prop_flat_map(|(r, c)| {
        (
            Just(r),
            Just(c),
            vec(-5.0..5.0f64, r * c),
            vec(-5.0..5.0f64, r * c),
        )
    })
}

fn design() -> impl Strategy<Value = (usize, Vec<f64>)> {
    (1usize..6).prop_flat_map(|d| (Just(d), vec(-20.0..20.0f64, d..d * 6 + 1)))
}

fn as_matrix(d: usize, data: &[f64]) -> DMatrix<f64> {
    let n = data.len() / d;
    DMatrix::from_row_slice(n, d, &data[..n * d])
}

fn check_norm_axioms(
    reg: Regularizer,
    a: Vec<f64>,
    b: Vec<f64>,
    c: f64,
    tol: f64,
) -> Result<(), TestCaseError> {
    let (a, b) = (DVector::from_vec(a), DVector::from_vec(b));
    let psi = |v: &DVector<f64>| reg.value(v).unwrap();
    let scale = 1.0 + psi(&a) + psi(&b);
    prop_assert!(psi(&(&a + &b)) <= psi(&a) + psi(&b) + tol * scale);
    prop_assert!((psi(&(&a * c)) - c.abs() * psi(&a)).abs() <= tol * scale * (1.0 + c.abs()));
    prop_assert_eq!(psi(&DVector::zeros(a.len())), 0.0);
    if a.amax() > 0.0 {
        prop_assert!(psi(&a) > 0.0);
    }
    Ok(())
}

fn l1_norm_axioms(cases: u32) -> Result<(), String> {
    run(cases, (vector_pair(), -5.0..5.0f64), |((a, b), c)| {
        check_norm_axioms(Regularizer::L1, a, b, c, TOL)
    })
}

fn nuclear_norm_axioms(cases: u32) -> Result<(), String> {
    run(
        cases,
        (matrix_pair(), -5.0..5.0f64),
        |((rows, cols, a, b), c)| {
            check_norm_axioms(Regularizer::Nuclear { rows, cols }, a, b, c, SVD_TOL)
        },
    )
}

fn check_nonexpansive(
    reg: Regularizer,
    a: Vec<f64>,
    b: Vec<f64>,
    t: f64,
    tol: f64,
) -> Result<(), TestCaseError> {
    let (a, b) = (DVector::from_vec(a), DVector::from_vec(b));
    let pa = reg.prox(&a, t).unwrap();
    let pb = reg.prox(&b, t).unwrap();
    let gap = (&a - &b).norm();
    prop_assert!((pa - pb).norm() <= gap + tol * (1.0 + gap));
    Ok(())
}

fn l1_prox_nonexpansive(cases: u32) -> Result<(), String> {
    run(cases, (vector_pair(), 0.0..5.0f64), |((a, b), t)| {
        check_nonexpansive(Regularizer::L1, a, b, t, TOL)
    })
}

fn nuclear_prox_nonexpansive(cases: u32) -> Result<(), String> {
    run(
        cases,
        (matrix_pair(), 0.0..5.0f64),
        |((rows, cols, a, b), t)| {
            check_nonexpansive(Regularizer::Nuclear { rows, cols }, a, b, t, SVD_TOL)
        },
    )
}

fn l1_moreau(cases: u32) -> Result<(), String> {
    run(cases, (vector(), 0.01..5.0f64), |(v, t)| {
        let v = DVector::from_vec(v);
        let prox = Regularizer::L1.prox(&v, t).unwrap();
        let dual = v.map(|x| (x / t).clamp(-1.0, 1.0)) * t;
        prop_assert!((prox + dual - &v).amax() <= TOL * (1.0 + v.amax()));
        Ok(())
    })
}

fn nuclear_is_l1_of_spectrum(cases: u32) -> Result<(), String> {
    run(cases, matrix_pair(), |(rows, cols, a, _)| {
        let v = DVector::from_vec(a);
        let nuclear = Regularizer::Nuclear { rows, cols }.value(&v).unwrap();
        let spectrum = singular_values(&unflatten(&v, rows, cols));
        let l1 = Regularizer::L1.value(&spectrum).unwrap();
        prop_assert!((nuclear - l1).abs() <= TOL * (1.0 + l1));
        Ok(())
    })
}

fn entrywise_idempotent(cases: u32) -> Result<(), String> {
    run(cases, (design(), 0.01..15.0f64), |((d, data), tau)| {
        let once = entrywise_truncate(&as_matrix(d, &data), tau);
        prop_assert!((entrywise_truncate(&once, tau) - &once).amax() <= TOL);
        prop_assert!(once.amax() <= tau);
        Ok(())
    })
}

fn norm_idempotent(cases: u32) -> Result<(), String> {
    run(cases, (design(), 0.01..15.0f64), |((d, data), tau)| {
        let once = norm_truncate(&as_matrix(d, &data), tau);
        let twice = norm_truncate(&once, tau);
        prop_assert!((twice - &once).amax() <= TOL * (1.0 + once.amax()));
        Ok(())
    })
}

fn clip_idempotent(cases: u32) -> Result<(), String> {
    run(cases, (vector(), 0.01..15.0f64), |(y, tau)| {
        let once = clip_response(&DVector::from_vec(y), tau);
        prop_assert_eq!(clip_response(&once, tau), once);
        Ok(())
    })
}

fn entrywise_monotone(cases: u32) -> Result<(), String> {
    run(
        cases,
        (design(), 0.01..15.0f64, 0.0..15.0f64),
        |((d, data), t1, extra)| {
            let x = as_matrix(d, &data);
            let lo = entrywise_truncate(&x, t1);
            let hi = entrywise_truncate(&x, t1 + extra);
            prop_assert!(lo.iter().zip(hi.iter()).all(|(a, b)| a.abs() <= b.abs()));
            Ok(())
        },
    )
}

fn norm_monotone(cases: u32) -> Result<(), String> {
    run(
        cases,
        (design(), 0.01..15.0f64, 0.0..15.0f64),
        |((d, data), t1, extra)| {
            let x = as_matrix(d, &data);
            let lo = norm_truncate(&x, t1);
            let hi = norm_truncate(&x, t1 + extra);
            for i in 0..x.nrows() {
                let (a, b) = (lo.row(i).norm(), hi.row(i).norm());
                prop_assert!(a <= b + TOL * (1.0 + b));
            }
            Ok(())
        },
    )
}

fn norm_direction(cases: u32) -> Result<(), String> {
    run(cases, (design(), 0.01..15.0f64), |((d, data), tau)| {
        let x = as_matrix(d, &data);
        let xt = norm_truncate(&x, tau);
        for i in 0..x.nrows() {
            let (r, rt) = (x.row(i), xt.row(i));
            if r.norm() == 0.0 {
                continue;
            }
            let (inner, prod) = (r.dot(&rt), r.norm() * rt.norm());
            prop_assert!((inner - prod).abs() <= TOL * (1.0 + prod));
        }
        Ok(())
    })
}
