//! Quadratic programs over the cone of (nondecreasing, nonincreasing)
//! coefficient pairs, plus the unconstrained least-squares and
//! smoothing-spline baselines.
//!
//! The cone problem
//!
//! ```text
//! min ||y - B(gu + gd)||^2 + mu ||B(gu - gd)||^2 + lambda (gu+gd)' Omega (gu+gd)
//! s.t. gu nondecreasing, gd nonincreasing
//! ```
//!
//! is solved by a primal active-set method after a change of variables to
//! difference coordinates, which turns the cone into simple sign constraints.

use nalgebra::{Cholesky, DMatrix, DVector};
use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum SolveError {
    #[error("design matrix is rank-deficient")]
    SingularDesign,
    #[error("linear system is singular")]
    SingularSystem,
}

#[derive(Debug, Clone)]
pub struct ConeQpProblem {
    pub b: DMatrix<f64>,
    pub omega: DMatrix<f64>,
    pub y: DVector<f64>,
    pub mu: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone)]
pub struct ConePair {
    pub gamma_u: DVector<f64>,
    pub gamma_d: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub converged: bool,
    /// Objective value after each active-set iteration.
    pub trace: Vec<f64>,
}

pub const MAX_ITERATIONS: usize = 10_000;

/// Unconstrained least squares `(B'B)^-1 B'y` via SVD.
pub fn solve_ls(b: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>, SolveError> {
    if b.nrows() < b.ncols() {
        return Err(SolveError::SingularDesign);
    }
    let svd = b.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smin <= 1e-12 * smax {
        return Err(SolveError::SingularDesign);
    }
    svd.solve(y, 0.0).map_err(|_| SolveError::SingularDesign)
}

/// Smoothing-spline coefficients `(B'B + lambda Omega)^-1 B'y`.
pub fn solve_smoothing(
    b: &DMatrix<f64>,
    omega: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
) -> Result<DVector<f64>, SolveError> {
    let m = b.transpose() * b + omega * lambda;
    let rhs = b.transpose() * y;
    match Cholesky::new(m.clone()) {
        Some(ch) => Ok(ch.solve(&rhs)),
        None => {
            // fall back to SVD for semi-definite systems near machine precision
            let svd = m.svd(true, true);
            let smax = svd.singular_values.max();
            let smin = svd.singular_values.min();
            if smin <= 1e-12 * smax {
                return Err(SolveError::SingularSystem);
            }
            svd.solve(&rhs, 0.0).map_err(|_| SolveError::SingularSystem)
        }
    }
}

/// Split `gamma` into a nondecreasing and a nonincreasing vector summing to it:
/// positive increments accumulate into the first component, negative ones into
/// the second.
pub fn sequence_decompose(gamma: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    let j = gamma.len();
    let mut up = DVector::zeros(j);
    let mut down = DVector::zeros(j);
    if j == 0 {
        return (up, down);
    }
    up[0] = gamma[0];
    down[0] = 0.0;
    for i in 1..j {
        let step = gamma[i] - gamma[i - 1];
        up[i] = up[i - 1] + step.max(0.0);
        down[i] = down[i - 1] + step.min(0.0);
    }
    (up, down)
}

/// Objective value of the cone problem at `(gu, gd)`.
pub fn cone_objective(
    b: &DMatrix<f64>,
    omega: &DMatrix<f64>,
    y: &DVector<f64>,
    mu: f64,
    lambda: f64,
    gu: &DVector<f64>,
    gd: &DVector<f64>,
) -> f64 {
    let s = gu + gd;
    let d = gu - gd;
    let resid = y - b * &s;
    let bd = b * &d;
    let mut obj = resid.norm_squared() + mu * bd.norm_squared();
    if lambda != 0.0 {
        obj += lambda * (&s.transpose() * omega * &s)[(0, 0)];
    }
    obj
}

/// Sum over `X[i][j]` for `i >= a, j >= b`, for every `(a, b)`.
fn suffix_sum_2d(x: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, m) = x.shape();
    let mut s = DMatrix::zeros(n, m);
    for a in (0..n).rev() {
        for b in (0..m).rev() {
            let mut v = x[(a, b)];
            if a + 1 < n {
                v += s[(a + 1, b)];
            }
            if b + 1 < m {
                v += s[(a, b + 1)];
            }
            if a + 1 < n && b + 1 < m {
                v -= s[(a + 1, b + 1)];
            }
            s[(a, b)] = v;
        }
    }
    s
}

/// Precomputed quadratic form for repeated solves that share `(B, Omega, mu,
/// lambda)` and differ only in `y`, as in bootstrap refitting.
pub struct ConeQpSolver {
    j: usize,
    h: DMatrix<f64>,
    bt: DMatrix<f64>,
    b: DMatrix<f64>,
    omega: DMatrix<f64>,
    mu: f64,
    lambda: f64,
    smoothing_chol: Option<Cholesky<f64, nalgebra::Dyn>>,
}

impl ConeQpSolver {
    pub fn new(b: DMatrix<f64>, omega: DMatrix<f64>, mu: f64, lambda: f64) -> Self {
        let j = b.ncols();
        let m = b.transpose() * &b;
        let p = &m + &omega * lambda;
        let s1 = suffix_sum_2d(&(&p + &m * mu)); // H_pp / 2
        let s2 = suffix_sum_2d(&(&p - &m * mu)); // H_pq / 2
        let mut h = DMatrix::zeros(2 * j, 2 * j);
        for a in 0..j {
            for c in 0..j {
                h[(a, c)] = 2.0 * s1[(a, c)];
                h[(j + a, j + c)] = 2.0 * s1[(a, c)];
                h[(a, j + c)] = 2.0 * s2[(a, c)];
                h[(j + a, c)] = 2.0 * s2[(c, a)];
            }
        }
        let smoothing_chol = Cholesky::new(&m + &omega * lambda.max(0.0));
        ConeQpSolver { j, h, bt: b.transpose(), b, omega, mu, lambda, smoothing_chol }
    }

    fn warm_start(&self, y: &DVector<f64>) -> DVector<f64> {
        let coef = if let Some(ch) = &self.smoothing_chol {
            ch.solve(&(&self.bt * y))
        } else {
            DVector::zeros(self.j)
        };
        let (gu, gd) = sequence_decompose(&coef);
        self.pack(&gu, &gd)
    }

    /// Difference coordinates from a feasible coefficient pair.
    fn pack(&self, gu: &DVector<f64>, gd: &DVector<f64>) -> DVector<f64> {
        let j = self.j;
        let mut x = DVector::zeros(2 * j);
        x[0] = gu[0];
        x[j] = gd[0];
        for k in 1..j {
            x[k] = (gu[k] - gu[k - 1]).max(0.0);
            x[j + k] = (gd[k] - gd[k - 1]).min(0.0);
        }
        x
    }

    fn unpack(&self, x: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let j = self.j;
        let mut gu = DVector::zeros(j);
        let mut gd = DVector::zeros(j);
        gu[0] = x[0];
        gd[0] = x[j];
        for k in 1..j {
            gu[k] = gu[k - 1] + x[k];
            gd[k] = gd[k - 1] + x[j + k];
        }
        (gu, gd)
    }

    /// Sign constraint for variable `i`: 0 free, +1 nonnegative, -1 nonpositive.
    fn bound_sign(&self, i: usize) -> i8 {
        if i == 0 || i == self.j {
            0
        } else if i < self.j {
            1
        } else {
            -1
        }
    }

    fn linear_term(&self, y: &DVector<f64>) -> DVector<f64> {
        let bty = &self.bt * y;
        let j = self.j;
        let mut c = DVector::zeros(2 * j);
        // suffix sums of B'y, once for each block
        let mut acc = 0.0;
        for a in (0..j).rev() {
            acc += bty[a];
            c[a] = -2.0 * acc;
            c[j + a] = -2.0 * acc;
        }
        c
    }

    fn reduced_solve(&self, free: &[usize], c: &DVector<f64>) -> Option<DVector<f64>> {
        let nf = free.len();
        let mut hf = DMatrix::zeros(nf, nf);
        let mut cf = DVector::zeros(nf);
        for (a, &ia) in free.iter().enumerate() {
            cf[a] = c[ia];
            for (b, &ib) in free.iter().enumerate() {
                hf[(a, b)] = self.h[(ia, ib)];
            }
        }
        let diag_scale = hf.diagonal().amax().max(1.0);
        let mut jitter = 0.0;
        for _ in 0..8 {
            let mut m = hf.clone();
            if jitter > 0.0 {
                for a in 0..nf {
                    m[(a, a)] += jitter;
                }
            }
            if let Some(ch) = Cholesky::new(m) {
                return Some(ch.solve(&(-&cf)));
            }
            jitter = if jitter == 0.0 { 1e-12 * diag_scale } else { jitter * 100.0 };
        }
        None
    }

    pub fn solve(&self, y: &DVector<f64>) -> Result<ConePair, SolveError> {
        let x0 = self.warm_start(y);
        self.solve_from(y, &x0)
    }

    pub fn solve_warm(&self, y: &DVector<f64>, gu: &DVector<f64>, gd: &DVector<f64>) -> Result<ConePair, SolveError> {
        self.solve_from(y, &self.pack(gu, gd))
    }

    fn solve_from(&self, y: &DVector<f64>, x0: &DVector<f64>) -> Result<ConePair, SolveError> {
        let dim = 2 * self.j;
        let c = self.linear_term(y);
        let tol = 1e-7 * (1.0 + (&self.bt * y).norm());
        let mut x = x0.clone();
        let mut active = vec![false; dim];
        for i in 0..dim {
            let s = self.bound_sign(i);
            if s != 0 && (s as f64) * x[i] <= 0.0 {
                x[i] = 0.0;
                active[i] = true;
            }
        }

        let mut trace = Vec::new();
        let mut iterations = 0;
        let mut converged = false;
        while iterations < MAX_ITERATIONS {
            iterations += 1;
            let free: Vec<usize> = (0..dim).filter(|&i| !active[i]).collect();
            let xf = match self.reduced_solve(&free, &c) {
                Some(v) => v,
                None => return Err(SolveError::SingularSystem),
            };
            let mut candidate = DVector::zeros(dim);
            for (a, &i) in free.iter().enumerate() {
                candidate[i] = xf[a];
            }
            let step = &candidate - &x;
            let step_norm = step.amax();
            let x_scale = x.amax().max(1.0);
            if step_norm > 1e-13 * x_scale {
                // largest feasible step toward the subspace minimizer
                let mut alpha = 1.0;
                let mut blocking = None;
                for &i in &free {
                    let s = self.bound_sign(i) as f64;
                    if s != 0.0 && s * step[i] < 0.0 {
                        let a = (s * x[i]) / (-s * step[i]);
                        if a < alpha {
                            alpha = a;
                            blocking = Some(i);
                        }
                    }
                }
                x += step * alpha;
                if let Some(i) = blocking {
                    x[i] = 0.0;
                    active[i] = true;
                    let (gu, gd) = self.unpack(&x);
                    trace.push(cone_objective(&self.b, &self.omega, y, self.mu, self.lambda, &gu, &gd));
                    continue;
                }
            }
            let (gu, gd) = self.unpack(&x);
            trace.push(cone_objective(&self.b, &self.omega, y, self.mu, self.lambda, &gu, &gd));
            // at the subspace minimizer: inspect multipliers of active bounds
            let g = &self.h * &x + &c;
            let mut worst = 0.0;
            let mut worst_i = None;
            for i in 0..dim {
                if active[i] {
                    let s = self.bound_sign(i) as f64;
                    let m = s * g[i];
                    if m < worst {
                        worst = m;
                        worst_i = Some(i);
                    }
                }
            }
            match worst_i {
                Some(i) if worst < -tol => {
                    active[i] = false;
                }
                _ => {
                    converged = true;
                    break;
                }
            }
        }

        let (gu, gd) = self.unpack(&x);
        let g = &self.h * &x + &c;
        let mut kkt: f64 = 0.0;
        for i in 0..dim {
            let s = self.bound_sign(i) as f64;
            if active[i] && s != 0.0 {
                kkt = kkt.max((-(s * g[i])).max(0.0));
            } else {
                kkt = kkt.max(g[i].abs());
            }
        }
        let objective = cone_objective(&self.b, &self.omega, y, self.mu, self.lambda, &gu, &gd);
        Ok(ConePair { gamma_u: gu, gamma_d: gd, objective, iterations, kkt_residual: kkt, converged, trace })
    }
}

/// One-shot solve of a cone QP problem.
pub fn solve_cone_qp(prob: &ConeQpProblem) -> Result<ConePair, SolveError> {
    let solver = ConeQpSolver::new(prob.b.clone(), prob.omega.clone(), prob.mu, prob.lambda);
    solver.solve(&prob.y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{build_knots, design_matrix, penalty_matrix};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_design(rng: &mut ChaCha8Rng, n: usize, j: usize) -> (Vec<f64>, DMatrix<f64>, DMatrix<f64>) {
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let kv = build_knots(&x, j).unwrap();
        let b = design_matrix(&kv, &x).unwrap();
        let omega = penalty_matrix(&kv);
        (x, b, omega)
    }

    #[test]
    fn ls_recovers_exact_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (_, b, _) = random_design(&mut rng, 25, 6);
        let gamma0 = DVector::from_fn(6, |i, _| rng.random_range(-2.0..2.0_f64) + i as f64);
        let y = &b * &gamma0;
        let sol = solve_ls(&b, &y).unwrap();
        assert!((sol - gamma0).amax() < 1e-8);

        let zero = DVector::zeros(25);
        let sol0 = solve_ls(&b, &zero).unwrap();
        assert!(sol0.amax() < 1e-10);
    }

    #[test]
    fn ls_matches_normal_equations_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let (_, b, _) = random_design(&mut rng, 20, 5);
        let y = DVector::from_fn(20, |_, _| rng.random_range(-1.0..1.0));
        let sol = solve_ls(&b, &y).unwrap();
        let btb = b.transpose() * &b;
        let oracle = btb.try_inverse().unwrap() * b.transpose() * &y;
        assert!((sol - oracle).amax() < 1e-7);
    }

    #[test]
    fn smoothing_reduces_to_ls_at_zero_lambda() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (_, b, omega) = random_design(&mut rng, 30, 7);
        let y = DVector::from_fn(30, |_, _| rng.random_range(-1.0..1.0));
        let ls = solve_ls(&b, &y).unwrap();
        let ss = solve_smoothing(&b, &omega, &y, 0.0).unwrap();
        assert!((ls - ss).amax() < 1e-7);
    }

    #[test]
    fn smoothing_large_lambda_approaches_line_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let (x, b, omega) = random_design(&mut rng, 40, 8);
        let raw: Vec<f64> = (0..40).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mean = raw.iter().sum::<f64>() / 40.0;
        let y = DVector::from_fn(40, |i, _| raw[i] - mean);
        let coef = solve_smoothing(&b, &omega, &y, 1e7).unwrap();
        let fitted = &b * &coef;
        // least-squares straight line oracle
        let xbar = x.iter().sum::<f64>() / x.len() as f64;
        let sxx: f64 = x.iter().map(|&v| (v - xbar).powi(2)).sum();
        let sxy: f64 = x.iter().zip(y.iter()).map(|(&v, &w)| (v - xbar) * w).sum();
        let slope = sxy / sxx;
        let intercept = y.iter().sum::<f64>() / x.len() as f64 - slope * xbar;
        for (i, &xi) in x.iter().enumerate() {
            assert!((fitted[i] - (intercept + slope * xi)).abs() < 1e-3);
        }
    }

    #[test]
    fn smoothing_matches_dense_solve_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let (_, b, omega) = random_design(&mut rng, 30, 6);
        let y: DVector<f64> = DVector::from_fn(30, |_, _| rng.random_range(-2.0..2.0));
        let lambda = 0.3;
        let sol = solve_smoothing(&b, &omega, &y, lambda).unwrap();
        let m = b.transpose() * &b + &omega * lambda;
        let oracle = m.try_inverse().unwrap() * b.transpose() * &y;
        assert!((sol - oracle).amax() < 1e-7);
    }

    #[test]
    fn sequence_decompose_examples() {
        let g = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let (u, d) = sequence_decompose(&g);
        assert_eq!(u.as_slice(), &[1.0, 2.0, 3.0]);
        assert_eq!(d.as_slice(), &[0.0, 0.0, 0.0]);

        let g = DVector::from_vec(vec![3.0, 2.0, 1.0]);
        let (u, d) = sequence_decompose(&g);
        assert_eq!(u.as_slice(), &[3.0, 3.0, 3.0]);
        assert_eq!(d.as_slice(), &[0.0, -1.0, -2.0]);

        let g = DVector::from_vec(vec![0.0, 2.0, 1.0]);
        let (u, d) = sequence_decompose(&g);
        assert_eq!(u.as_slice(), &[0.0, 2.0, 2.0]);
        assert_eq!(d.as_slice(), &[0.0, 0.0, -1.0]);
        assert!((&u + &d - g).amax() < 1e-15);
    }

    fn feasible(pair: &ConePair, eps: f64) {
        for k in 1..pair.gamma_u.len() {
            assert!(pair.gamma_u[k] - pair.gamma_u[k - 1] >= -eps, "gamma_u not nondecreasing");
            assert!(pair.gamma_d[k] - pair.gamma_d[k - 1] <= eps, "gamma_d not nonincreasing");
        }
    }

    #[test]
    fn constant_response_fits_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let (_, b, omega) = random_design(&mut rng, 20, 5);
        let y = DVector::from_element(20, 3.5);
        let prob = ConeQpProblem { b: b.clone(), omega, y: y.clone(), mu: 0.7, lambda: 0.0 };
        let pair = solve_cone_qp(&prob).unwrap();
        assert!(pair.converged);
        feasible(&pair, 1e-9);
        let fitted = &b * (&pair.gamma_u + &pair.gamma_d);
        let discrepancy = &b * (&pair.gamma_u - &pair.gamma_d);
        assert!((fitted - y).amax() < 1e-7);
        assert!(discrepancy.amax() < 1e-7);
    }

    #[test]
    fn huge_mu_collapses_to_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let (_, b, omega) = random_design(&mut rng, 25, 5);
        let y = DVector::from_fn(25, |_, _| rng.random_range(-1.0..4.0));
        let ybar = y.iter().sum::<f64>() / 25.0;
        let prob = ConeQpProblem { b: b.clone(), omega, y, mu: 1e8, lambda: 0.0 };
        let pair = solve_cone_qp(&prob).unwrap();
        let fitted = &b * (&pair.gamma_u + &pair.gamma_d);
        for v in fitted.iter() {
            assert!((v - ybar).abs() < 1e-3);
        }
    }

    /// Projected gradient from many starts, on the same objective. Slow and
    /// dumb on purpose; only for small instances.
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
                // project onto the cone by pooling adjacent violators
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

    #[test]
    fn small_instances_match_multi_start_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        for trial in 0..5 {
            let (_, b, omega) = random_design(&mut rng, 6 + trial, 4);
            let y = DVector::from_fn(b.nrows(), |_, _| rng.random_range(-1.0..1.0));
            let prob = ConeQpProblem { b, omega, y, mu: 0.5, lambda: 0.0 };
            let pair = solve_cone_qp(&prob).unwrap();
            let oracle = multi_start_oracle(&prob, 1000 + trial as u64);
            let scale = oracle.abs().max(1e-8);
            assert!(
                pair.objective <= oracle + 1e-5 * scale,
                "solver {} vs oracle {}",
                pair.objective,
                oracle
            );
        }
    }

    #[test]
    fn prop1_reduction_at_zero_mu() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let (_, b, omega) = random_design(&mut rng, 30, 6);
        let y: DVector<f64> = DVector::from_fn(30, |_, _| rng.random_range(-2.0..2.0));
        let ls = solve_ls(&b, &y).unwrap();
        let prob = ConeQpProblem { b: b.clone(), omega, y: y.clone(), mu: 0.0, lambda: 0.0 };
        let pair = solve_cone_qp(&prob).unwrap();
        let f1 = &b * (&pair.gamma_u + &pair.gamma_d);
        let f2 = &b * &ls;
        assert!((f1 - f2).amax() <= 1e-6 * y.norm());
    }

    #[test]
    fn prop2_mean_equality_and_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for _ in 0..10 {
            let (_, b, omega) = random_design(&mut rng, 30, 7);
            let y: DVector<f64> = DVector::from_fn(30, |_, _| rng.random_range(-2.0..2.0));
            let scale = y.amax().max(1.0);
            let prob = ConeQpProblem { b: b.clone(), omega, y, mu: 1.0, lambda: 0.0 };
            let pair = solve_cone_qp(&prob).unwrap();
            feasible(&pair, 1e-9);
            let mu_u = (DVector::from_element(30, 1.0).transpose() * &b * &pair.gamma_u)[(0, 0)];
            let mu_d = (DVector::from_element(30, 1.0).transpose() * &b * &pair.gamma_d)[(0, 0)];
            assert!((mu_u - mu_d).abs() <= 1e-6 * 30.0 * scale, "means differ: {mu_u} vs {mu_d}");
            let tie_u = pair
                .gamma_u
                .as_slice()
                .windows(2)
                .any(|w| (w[1] - w[0]).abs() <= 1e-6 * pair.gamma_u.amax().max(1.0));
            let tie_d = pair
                .gamma_d
                .as_slice()
                .windows(2)
                .any(|w| (w[1] - w[0]).abs() <= 1e-6 * pair.gamma_d.amax().max(1.0));
            assert!(tie_u || tie_d, "no adjacent tie in either component");
        }
    }

    #[test]
    fn objective_descent_and_warm_start_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let (_, b, omega) = random_design(&mut rng, 25, 6);
        let y = DVector::from_fn(25, |_, _| rng.random_range(-2.0..2.0));
        let warm_coef = solve_ls(&b, &y).unwrap();
        let (wu, wd) = sequence_decompose(&warm_coef);
        let warm_obj = cone_objective(&b, &omega, &y, 0.8, 0.05, &wu, &wd);
        let prob = ConeQpProblem { b, omega, y, mu: 0.8, lambda: 0.05 };
        let pair = solve_cone_qp(&prob).unwrap();
        assert!(pair.objective <= warm_obj + 1e-9 * warm_obj.abs().max(1.0));
        for w in pair.trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0), "objective increased: {} -> {}", w[0], w[1]);
        }
    }
}
