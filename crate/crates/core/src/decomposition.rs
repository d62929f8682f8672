//! High-level fitting API: monotone decomposition with cubic splines (MDCS)
//! and smoothing splines (MDSS), closed-form solutions for monotone fits,
//! tie-group detection and prediction.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::{self, BasisError, KnotVector};
use crate::cone::{ConeQpSolver, SolveError};

/// Interior-knot cap for the smoothing-spline knot rule.
pub const MDSS_KNOT_CAP: usize = 200;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum FitError {
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("coefficient vector is not monotone within tolerance")]
    NotMonotone,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FitMethod {
    Mdcs,
    Mdss,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FitSource {
    Solver,
    ClosedForm,
}

/// A fitted monotone decomposition.
#[derive(Debug, Clone)]
pub struct DecompositionFit {
    pub knots: KnotVector,
    pub gamma_u: DVector<f64>,
    pub gamma_d: DVector<f64>,
    pub mu: f64,
    pub lambda: f64,
    pub method: FitMethod,
    pub source: FitSource,
    pub fitted: DVector<f64>,
    /// The constant value of the flat component, when one component is flat.
    pub c_offset: Option<f64>,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub converged: bool,
    /// True when the MDSS knot rule was thinned to the interior-knot cap.
    pub knots_capped: bool,
}

/// Serializable mirror of [`DecompositionFit`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitDocument {
    pub method: FitMethod,
    pub source: FitSource,
    pub lo: f64,
    pub hi: f64,
    pub interior_knots: Vec<f64>,
    pub gamma_u: Vec<f64>,
    pub gamma_d: Vec<f64>,
    pub mu: f64,
    pub lambda: f64,
    pub fitted: Vec<f64>,
    pub c_offset: Option<f64>,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub converged: bool,
    pub knots_capped: bool,
}

impl DecompositionFit {
    pub fn basis_size(&self) -> usize {
        self.knots.basis_size()
    }

    pub fn document(&self) -> FitDocument {
        FitDocument {
            method: self.method,
            source: self.source,
            lo: self.knots.lo(),
            hi: self.knots.hi(),
            interior_knots: self.knots.interior().to_vec(),
            gamma_u: self.gamma_u.as_slice().to_vec(),
            gamma_d: self.gamma_d.as_slice().to_vec(),
            mu: self.mu,
            lambda: self.lambda,
            fitted: self.fitted.as_slice().to_vec(),
            c_offset: self.c_offset,
            iterations: self.iterations,
            kkt_residual: self.kkt_residual,
            converged: self.converged,
            knots_capped: self.knots_capped,
        }
    }
}

/// Maximal runs of coefficients equal within a tolerance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TieGroups {
    pub groups: Vec<std::ops::Range<usize>>,
}

impl TieGroups {
    pub fn count(&self) -> usize {
        self.groups.len()
    }

    /// The g x J aggregation matrix: identity rows for singletons, all-ones
    /// rows across tied blocks. Its transpose maps the g unique values back
    /// to J coefficients.
    pub fn aggregation_matrix(&self, j: usize) -> DMatrix<f64> {
        let g = self.count();
        let mut m = DMatrix::zeros(g, j);
        for (row, r) in self.groups.iter().enumerate() {
            for col in r.clone() {
                m[(row, col)] = 1.0;
            }
        }
        m
    }
}

/// Detect tie groups in a monotone coefficient vector: adjacent values within
/// `eps` chain into one block.
pub fn detect_ties(gamma: &DVector<f64>, eps: f64) -> Result<TieGroups, FitError> {
    let increasing = gamma.as_slice().windows(2).all(|w| w[1] - w[0] >= -eps);
    let decreasing = gamma.as_slice().windows(2).all(|w| w[0] - w[1] >= -eps);
    if !increasing && !decreasing {
        return Err(FitError::NotMonotone);
    }
    let mut groups = Vec::new();
    let mut start = 0;
    for i in 1..gamma.len() {
        if (gamma[i] - gamma[i - 1]).abs() > eps {
            groups.push(start..i);
            start = i;
        }
    }
    groups.push(start..gamma.len());
    Ok(TieGroups { groups })
}

/// Snap each tie block to its mean so that downstream tie groups are stable.
fn tie_round(gamma: &DVector<f64>, eps: f64) -> DVector<f64> {
    let mut out = gamma.clone();
    if let Ok(groups) = detect_ties(gamma, eps) {
        for r in &groups.groups {
            if r.len() > 1 {
                let mean = r.clone().map(|i| gamma[i]).sum::<f64>() / r.len() as f64;
                for i in r.clone() {
                    out[i] = mean;
                }
            }
        }
    }
    out
}

/// Reusable fitting context: knots, design and solver for a fixed `x` sample
/// and fixed hyperparameters. Refitting different responses (bootstrap
/// resamples, CV folds on the same subset) reuses all precomputation.
pub struct FitContext {
    pub knots: KnotVector,
    pub b: DMatrix<f64>,
    pub omega: DMatrix<f64>,
    pub method: FitMethod,
    pub mu: f64,
    pub lambda: f64,
    pub knots_capped: bool,
    solver: ConeQpSolver,
}

impl FitContext {
    pub fn mdcs(x: &[f64], j: usize, mu: f64) -> Result<Self, FitError> {
        let knots = basis::build_knots(x, j)?;
        Self::with_knots(x, knots, FitMethod::Mdcs, mu, 0.0, false)
    }

    pub fn mdss(x: &[f64], lambda: f64, mu: f64) -> Result<Self, FitError> {
        let knots = basis::build_knots_all_points(x, MDSS_KNOT_CAP)?;
        let mut distinct: Vec<f64> = x.to_vec();
        distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
        distinct.dedup();
        let capped = distinct.len().saturating_sub(2) > MDSS_KNOT_CAP;
        Self::with_knots(x, knots, FitMethod::Mdss, mu, lambda, capped)
    }

    pub fn with_knots(
        x: &[f64],
        knots: KnotVector,
        method: FitMethod,
        mu: f64,
        lambda: f64,
        knots_capped: bool,
    ) -> Result<Self, FitError> {
        let b = basis::design_matrix(&knots, x)?;
        let j = knots.basis_size();
        let omega = if method == FitMethod::Mdss {
            basis::penalty_matrix(&knots)
        } else {
            DMatrix::zeros(j, j)
        };
        let solver = ConeQpSolver::new(b.clone(), omega.clone(), mu, lambda);
        Ok(FitContext { knots, b, omega, method, mu, lambda, knots_capped, solver })
    }

    pub fn fit(&self, y: &DVector<f64>) -> Result<DecompositionFit, FitError> {
        let pair = self.solver.solve(y)?;
        let scale = pair.gamma_u.amax().max(pair.gamma_d.amax()).max(1.0);
        let eps = 1e-6 * scale;
        let gamma_u = tie_round(&pair.gamma_u, eps);
        let gamma_d = tie_round(&pair.gamma_d, eps);
        let fitted = &self.b * (&gamma_u + &gamma_d);
        let n = fitted.len() as f64;
        let d_flat = detect_ties(&gamma_d, eps).map(|t| t.count() == 1).unwrap_or(false);
        let u_flat = detect_ties(&gamma_u, eps).map(|t| t.count() == 1).unwrap_or(false);
        let c_offset = if d_flat {
            Some((&self.b * &gamma_u).sum() / n)
        } else if u_flat {
            Some((&self.b * &gamma_d).sum() / n)
        } else {
            None
        };
        Ok(DecompositionFit {
            knots: self.knots.clone(),
            gamma_u,
            gamma_d,
            mu: self.mu,
            lambda: self.lambda,
            method: self.method,
            source: FitSource::Solver,
            fitted,
            c_offset,
            iterations: pair.iterations,
            kkt_residual: pair.kkt_residual,
            converged: pair.converged,
            knots_capped: self.knots_capped,
        })
    }
}

/// Fit monotone decomposition with cubic splines: J basis functions on
/// quantile knots, no roughness penalty.
pub fn fit_mdcs(x: &[f64], y: &[f64], j: usize, mu: f64) -> Result<DecompositionFit, FitError> {
    FitContext::mdcs(x, j, mu)?.fit(&DVector::from_column_slice(y))
}

/// Fit monotone decomposition with smoothing splines: all distinct sample
/// points as knots (capped at [`MDSS_KNOT_CAP`]) and a roughness penalty.
pub fn fit_mdss(x: &[f64], y: &[f64], lambda: f64, mu: f64) -> Result<DecompositionFit, FitError> {
    FitContext::mdss(x, lambda, mu)?.fit(&DVector::from_column_slice(y))
}

/// Closed-form monotone-case solution for cubic splines: shrinkage of the
/// aggregated least-squares solution plus a constant offset, with the flat
/// component at the fixed-point constant.
pub fn closed_form_cs(
    b: &DMatrix<f64>,
    y: &DVector<f64>,
    mu: f64,
    ties: &TieGroups,
) -> Result<(DVector<f64>, DVector<f64>), FitError> {
    let j = b.ncols();
    let n = b.nrows() as f64;
    let g = ties.aggregation_matrix(j);
    let gram = &g * b.transpose() * b * g.transpose();
    let inv = gram.try_inverse().ok_or(SolveError::SingularSystem)?;
    let base = g.transpose() * &inv * &g * b.transpose() * y;
    // c = 1'B gamma_u / n with gamma_u = base/(mu+1) + (mu-1)/(mu+1) c 1;
    // substitute and solve the scalar equation for c
    let col_mass = {
        let ones_n = DVector::from_element(b.nrows(), 1.0);
        b.transpose() * ones_n
    };
    let a = col_mass.dot(&base) / n;
    let t = col_mass.sum() / n; // equals 1 by partition of unity
    let shrink = 1.0 / (mu + 1.0);
    let offset_coef = (mu - 1.0) / (mu + 1.0);
    let denom = 1.0 - offset_coef * t;
    if denom.abs() < 1e-12 {
        return Err(FitError::Solve(SolveError::SingularSystem));
    }
    let c = shrink * a / denom;
    let gamma_u = &base * shrink + DVector::from_element(j, offset_coef * c);
    let gamma_d = DVector::from_element(j, c);
    Ok((gamma_u, gamma_d))
}

/// Closed-form monotone-case solution for smoothing splines: shrinkage of the
/// ridge solution with a design-dependent offset.
pub fn closed_form_ss(
    b: &DMatrix<f64>,
    omega: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
    mu: f64,
    ties: &TieGroups,
) -> Result<(DVector<f64>, DVector<f64>), FitError> {
    let j = b.ncols();
    let n = b.nrows() as f64;
    let g = ties.aggregation_matrix(j);
    let gbbg = &g * b.transpose() * b * g.transpose();
    let gog = &g * omega * g.transpose();
    let kernel = &gbbg * (1.0 + mu) + &gog * lambda;
    let inv = kernel.try_inverse().ok_or(SolveError::SingularSystem)?;
    let base = g.transpose() * &inv * &g * b.transpose() * y;
    let ones_g = DVector::from_element(ties.count(), 1.0);
    let offset_dir = g.transpose() * &inv * (&gbbg * (1.0 - mu) + &gog * lambda) * ones_g;
    let col_mass = {
        let ones_n = DVector::from_element(b.nrows(), 1.0);
        b.transpose() * ones_n
    };
    let p = col_mass.dot(&base) / n;
    let q = col_mass.dot(&offset_dir) / n;
    let denom = 1.0 + q;
    if denom.abs() < 1e-12 {
        return Err(FitError::Solve(SolveError::SingularSystem));
    }
    let c = p / denom;
    let gamma_u = base - &offset_dir * c;
    let gamma_d = DVector::from_element(j, c);
    Ok((gamma_u, gamma_d))
}

/// Evaluate the fit and both components at the points `t` (within the
/// training range).
pub fn predict(
    fit: &DecompositionFit,
    t: &[f64],
) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>), FitError> {
    let bt = basis::design_matrix(&fit.knots, t)?;
    let f_up = &bt * &fit.gamma_u;
    let f_down = &bt * &fit.gamma_d;
    let f = &f_up + &f_down;
    Ok((f, f_up, f_down))
}
