//! Shared generators for integration tests and the acceptance suite.
#![allow(dead_code)]

use nalgebra::DMatrix;
use ofo_core::miqp::ProjectionProblem;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random projection problem at controller scale: 10–16 variables, up to 4
/// integer variables with at most 7 values each, soft output rows, and
/// occasionally a general hard row.
pub fn random_projection_problem(seed: u64) -> ProjectionProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(10..=16);
    let n_int = rng.random_range(1..=4);
    let hess: Vec<f64> = (0..n)
        .map(|i| {
            if i >= n - n_int {
                [500.0, 2500.0, 5.0, 50.0][rng.random_range(0..4)]
            } else {
                10f64.powf(rng.random_range(-1.5..1.0))
            }
        })
        .collect();
    let linear: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
    let mut p = ProjectionProblem::new(hess, linear);
    for i in 0..n {
        if i >= n - n_int {
            let width = rng.random_range(0..=6) as f64;
            let lo = -(rng.random_range(0..=width as i64) as f64);
            p.lower[i] = lo;
            p.upper[i] = lo + width;
        } else {
            p.lower[i] = -rng.random_range(0.0..20.0);
            p.upper[i] = rng.random_range(0.0..20.0);
        }
    }
    p.integer_idx = ((n - n_int)..n).collect();

    let ms = rng.random_range(4..=20);
    let mut rows = DMatrix::zeros(ms, n);
    let mut rhs = Vec::with_capacity(ms);
    for j in 0..ms {
        for i in 0..n {
            if rng.random_bool(0.6) {
                rows[(j, i)] = rng.random_range(-1.0..1.0) * if i >= n - n_int { 0.05 } else { 1.0 };
            }
        }
        rhs.push(rng.random_range(-2.0..4.0));
    }
    p.soft_rows = rows;
    p.soft_rhs = rhs;
    p.slack_weight = [1e4, 10.0, 1.0][rng.random_range(0..3)];

    if rng.random_bool(0.3) {
        // a hard row that the zero step satisfies
        let mut h = DMatrix::zeros(1, n);
        for i in 0..n {
            h[(0, i)] = rng.random_range(-1.0..1.0);
        }
        p.hard_rows = h;
        p.hard_rhs = vec![rng.random_range(0.5..3.0)];
    }
    p
}
