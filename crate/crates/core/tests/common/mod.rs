//! Shared helpers for integration tests: a slow reference solver for the
//! cone QP and small data generators.

use monodecomp::basis::{build_knots, design_matrix, penalty_matrix, KnotVector};
use monodecomp::cone::{cone_objective, sequence_decompose, solve_ls, ConeQpProblem};
use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// Sorted uniform draw on [0, 1] with distinct endpoints.
pub fn random_x(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut x: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    x.sort_by(|a, b| a.partial_cmp(b).unwrap());
    x
}

pub fn random_design(
    rng: &mut ChaCha8Rng,
    n: usize,
    j: usize,
) -> (Vec<f64>, KnotVector, DMatrix<f64>, DMatrix<f64>) {
    let x = random_x(rng, n);
    let knots = build_knots(&x, j).unwrap();
    let b = design_matrix(&knots, &x).unwrap();
    let omega = penalty_matrix(&knots);
    (x, knots, b, omega)
}

/// Pool-adjacent-violators projection onto monotone vectors.
pub fn project_monotone(v: &mut [f64], increasing: bool) {
    let n = v.len();
    let mut vals = vec![0.0; n];
    let mut wts = vec![0.0; n];
    let mut len = 0usize;
    for i in 0..n {
        let x = if increasing { v[i] } else { -v[i] };
        vals[len] = x;
        wts[len] = 1.0;
        len += 1;
        while len > 1 && vals[len - 2] > vals[len - 1] {
            let w = wts[len - 2] + wts[len - 1];
            let m = (vals[len - 2] * wts[len - 2] + vals[len - 1] * wts[len - 1]) / w;
            vals[len - 2] = m;
            wts[len - 2] = w;
            len -= 1;
        }
    }
    let mut idx = 0;
    for b in 0..len {
        for _ in 0..wts[b] as usize {
            v[idx] = if increasing { vals[b] } else { -vals[b] };
            idx += 1;
        }
    }
}

/// Projected gradient from many starts, on the same objective. Slow and
/// dumb on purpose; only for small instances. Independent of the active-set
/// solver under test.
pub fn multi_start_oracle(prob: &ConeQpProblem, seed: u64) -> f64 {
    let j = prob.b.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = f64::INFINITY;
    let m = prob.b.transpose() * &prob.b;
    let p = &m + &prob.omega * prob.lambda;
    let lip = 4.0 * (p.norm() + prob.mu * m.norm()) * (j as f64);
    let eta = 1.0 / lip;
    for start in 0..12 {
        let (mut gu, mut gd) = if start == 0 {
            match solve_ls(&prob.b, &prob.y) {
                Ok(ls) => sequence_decompose(&ls),
                Err(_) => (DVector::zeros(j), DVector::zeros(j)),
            }
        } else {
            let mut u = DVector::from_fn(j, |_, _| rng.random_range(-1.0..1.0_f64));
            let mut d = DVector::from_fn(j, |_, _| rng.random_range(-1.0..1.0_f64));
            u.as_mut_slice().sort_by(|a, b| a.partial_cmp(b).unwrap());
            d.as_mut_slice().sort_by(|a, b| b.partial_cmp(a).unwrap());
            (u, d)
        };
        for _ in 0..60_000 {
            let s = &gu + &gd;
            let d = &gu - &gd;
            let grad_common = &p * &s * 2.0 - prob.b.transpose() * &prob.y * 2.0;
            let grad_diff = &m * &d * (2.0 * prob.mu);
            let mut nu = &gu - (&grad_common + &grad_diff) * eta;
            let mut nd = &gd - (&grad_common - &grad_diff) * eta;
            project_monotone(nu.as_mut_slice(), true);
            project_monotone(nd.as_mut_slice(), false);
            gu = nu;
            gd = nd;
        }
        let obj = cone_objective(&prob.b, &prob.omega, &prob.y, prob.mu, prob.lambda, &gu, &gd);
        best = best.min(obj);
    }
    best
}
