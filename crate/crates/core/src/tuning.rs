//! Cross-validated hyperparameter selection for MDCS and MDSS.
//!
//! Three strategies each: fix one axis then scan the other, scan the product
//! grid, or (MDSS only) scan the single shrinkage factor k with lambda =
//! lambda0 / k, mu = 1/k - 1.

use nalgebra::DVector;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::basis;
use crate::cone;
use crate::decomposition::{fit_mdcs, fit_mdss, predict, DecompositionFit, FitError};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum TuneError {
    #[error("hyperparameter grid axis '{0}' is empty")]
    EmptyGrid(&'static str),
    #[error("folds must lie in [2, n]; got {0} for n = {1}")]
    BadFolds(usize, usize),
    #[error("every grid cell failed to fit; last error: {0}")]
    AllCellsFailed(String),
    #[error(transparent)]
    Fit(#[from] FitError),
}

/// Hyperparameter grids. `folds = n` means leave-one-out.
#[derive(Debug, Clone)]
pub struct CvGrid {
    pub mu_values: Vec<f64>,
    pub j_values: Vec<usize>,
    pub lambda_values: Vec<f64>,
    pub k_values: Vec<f64>,
    pub folds: usize,
}

fn log_space(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let (llo, lhi) = (lo.log10(), hi.log10());
    (0..count)
        .map(|i| 10f64.powf(llo + (lhi - llo) * i as f64 / (count - 1) as f64))
        .collect()
}

impl CvGrid {
    /// Defaults: mu in 1e-6..1e2 (10 log-spaced), lambda in 1e-8..1e1 (10
    /// log-spaced), J in 4..min(50, n/2) step 2, k in 0.05..1.0 step 0.05.
    /// Leave-one-out up to n = 300, then 10-fold.
    pub fn default_for(n: usize) -> Self {
        let j_hi = 50.min(n / 2).max(4);
        CvGrid {
            mu_values: log_space(1e-6, 1e2, 10),
            j_values: (4..=j_hi).step_by(2).collect(),
            lambda_values: log_space(1e-8, 1e1, 10),
            k_values: (1..=20).map(|i| i as f64 * 0.05).collect(),
            folds: if n > 300 { 10 } else { n },
        }
    }

    fn validate(&self, n: usize, axes: &[&'static str]) -> Result<(), TuneError> {
        for &axis in axes {
            let empty = match axis {
                "mu" => self.mu_values.is_empty(),
                "j" => self.j_values.is_empty(),
                "lambda" => self.lambda_values.is_empty(),
                _ => self.k_values.is_empty(),
            };
            if empty {
                return Err(TuneError::EmptyGrid(axis));
            }
        }
        if self.folds < 2 || self.folds > n {
            return Err(TuneError::BadFolds(self.folds, n));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MdcsStrategy {
    FixJThenMu,
    JointJMu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MdssStrategy {
    FixLambdaThenMu,
    ShrinkageFactor,
    JointLambdaMu,
}

/// CV error over a hyperparameter grid, plus the argmin cell and the chosen
/// parameters. Cells that failed to fit carry no error value.
#[derive(Debug, Clone)]
pub struct CvSurface {
    pub row_axis: &'static str,
    pub col_axis: &'static str,
    pub row_values: Vec<f64>,
    pub col_values: Vec<f64>,
    /// `errors[r][c]`, `None` when the cell failed.
    pub errors: Vec<Vec<Option<f64>>>,
    pub argmin: (usize, usize),
    pub chosen_mu: f64,
    pub chosen_lambda: f64,
    /// Zero when the surface has no J axis (MDSS).
    pub chosen_j: usize,
}

impl CvSurface {
    pub fn min_error(&self) -> f64 {
        self.errors[self.argmin.0][self.argmin.1].unwrap()
    }

    /// One row per cell: row-axis value, col-axis value, error, status.
    pub fn to_tsv(&self) -> String {
        let mut out = format!("{}\t{}\tcv_error\tstatus\n", self.row_axis, self.col_axis);
        for (r, rv) in self.row_values.iter().enumerate() {
            for (c, cv) in self.col_values.iter().enumerate() {
                match self.errors[r][c] {
                    Some(e) => out.push_str(&format!("{rv}\t{cv}\t{e}\tok\n")),
                    None => out.push_str(&format!("{rv}\t{cv}\tNaN\tfailed\n")),
                }
            }
        }
        out
    }
}

/// Deterministic fold assignment: a seeded shuffle dealt round-robin.
fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let mut fold = vec![0usize; n];
    for (pos, &i) in idx.iter().enumerate() {
        fold[i] = pos % folds;
    }
    fold
}

/// Mean squared held-out prediction error. `fit` maps a training subset to a
/// batch predictor; held-out x outside the training range are clamped to the
/// nearer boundary before prediction.
pub fn cv_error<F, P>(x: &[f64], y: &[f64], fit: F, folds: usize, seed: u64) -> Result<f64, TuneError>
where
    F: Fn(&[f64], &[f64]) -> Result<P, TuneError>,
    P: Fn(&[f64]) -> Result<Vec<f64>, TuneError>,
{
    let n = x.len();
    if folds < 2 || folds > n {
        return Err(TuneError::BadFolds(folds, n));
    }
    let assignment = fold_assignment(n, folds, seed);
    let mut sse = 0.0;
    for f in 0..folds {
        let mut tx = Vec::new();
        let mut ty = Vec::new();
        let mut hx = Vec::new();
        let mut hy = Vec::new();
        for i in 0..n {
            if assignment[i] == f {
                hx.push(x[i]);
                hy.push(y[i]);
            } else {
                tx.push(x[i]);
                ty.push(y[i]);
            }
        }
        if hx.is_empty() {
            continue;
        }
        let predictor = fit(&tx, &ty)?;
        let lo = tx.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = tx.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let clamped: Vec<f64> = hx.iter().map(|&v| v.clamp(lo, hi)).collect();
        let pred = predictor(&clamped)?;
        for (p, yv) in pred.iter().zip(hy.iter()) {
            sse += (p - yv).powi(2);
        }
    }
    Ok(sse / n as f64)
}

fn md_cell_error(
    x: &[f64],
    y: &[f64],
    method_fit: impl Fn(&[f64], &[f64]) -> Result<DecompositionFit, FitError>,
    folds: usize,
    seed: u64,
) -> Result<f64, TuneError> {
    cv_error(
        x,
        y,
        |tx, ty| {
            let fit = method_fit(tx, ty)?;
            Ok(move |t: &[f64]| {
                let (f, _, _) = predict(&fit, t)?;
                Ok(f.as_slice().to_vec())
            })
        },
        folds,
        seed,
    )
}

/// Derive a per-cell RNG seed so fold partitions are independent across cells.
fn cell_seed(seed: u64, cell: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(cell as u64 + 1)
}

struct Scan {
    errors: Vec<Vec<Option<f64>>>,
    best: Option<(usize, usize, f64)>,
    last_err: String,
    cell: usize,
}

impl Scan {
    fn new(rows: usize, cols: usize) -> Self {
        Scan { errors: vec![vec![None; cols]; rows], best: None, last_err: String::new(), cell: 0 }
    }

    fn record(&mut self, r: usize, c: usize, res: Result<f64, TuneError>) {
        self.cell += 1;
        match res {
            Ok(e) if e.is_finite() => {
                self.errors[r][c] = Some(e);
                // strict inequality keeps the earliest cell on ties, so the
                // iteration order encodes the tie-break preference
                if self.best.map_or(true, |(_, _, b)| e < b) {
                    self.best = Some((r, c, e));
                }
            }
            Ok(_) => self.last_err = "non-finite CV error".to_string(),
            Err(e) => self.last_err = e.to_string(),
        }
    }

    fn finish(self) -> Result<((usize, usize), Vec<Vec<Option<f64>>>), TuneError> {
        match self.best {
            Some((r, c, _)) => Ok(((r, c), self.errors)),
            None => Err(TuneError::AllCellsFailed(self.last_err)),
        }
    }
}

/// Select J for a plain (unconstrained) cubic-spline LS fit by CV.
pub(crate) fn select_j_ls(x: &[f64], y: &[f64], grid: &CvGrid, seed: u64) -> Result<usize, TuneError> {
    let mut best: Option<(f64, usize)> = None;
    let mut last_err = String::new();
    for (ci, &j) in grid.j_values.iter().enumerate() {
        let res = cv_error(
            x,
            y,
            |tx, ty| {
                let kv = basis::build_knots(tx, j).map_err(FitError::from)?;
                let b = basis::design_matrix(&kv, tx).map_err(FitError::from)?;
                let coef = cone::solve_ls(&b, &DVector::from_column_slice(ty)).map_err(FitError::from)?;
                Ok(move |t: &[f64]| {
                    let f = basis::eval_spline(&kv, &coef, t).map_err(FitError::from)?;
                    Ok(f.as_slice().to_vec())
                })
            },
            grid.folds,
            cell_seed(seed, ci),
        );
        match res {
            Ok(e) if e.is_finite() => {
                if best.map_or(true, |(b, _)| e < b) {
                    best = Some((e, j));
                }
            }
            Ok(_) => last_err = "non-finite CV error".into(),
            Err(e) => last_err = e.to_string(),
        }
    }
    best.map(|(_, j)| j).ok_or(TuneError::AllCellsFailed(last_err))
}

/// Select lambda for a plain smoothing spline by CV.
pub(crate) fn select_lambda_ss(x: &[f64], y: &[f64], grid: &CvGrid, seed: u64) -> Result<f64, TuneError> {
    let mut best: Option<(f64, f64)> = None;
    let mut last_err = String::new();
    // descending so ties prefer the larger (more regularized) lambda
    let mut lambdas = grid.lambda_values.clone();
    lambdas.sort_by(|a, b| b.partial_cmp(a).unwrap());
    for (ci, &lambda) in lambdas.iter().enumerate() {
        let res = cv_error(
            x,
            y,
            |tx, ty| {
                let kv = basis::build_knots_all_points(tx, crate::decomposition::MDSS_KNOT_CAP)
                    .map_err(FitError::from)?;
                let b = basis::design_matrix(&kv, tx).map_err(FitError::from)?;
                let omega = basis::penalty_matrix(&kv);
                let coef = cone::solve_smoothing(&b, &omega, &DVector::from_column_slice(ty), lambda)
                    .map_err(FitError::from)?;
                Ok(move |t: &[f64]| {
                    let f = basis::eval_spline(&kv, &coef, t).map_err(FitError::from)?;
                    Ok(f.as_slice().to_vec())
                })
            },
            grid.folds,
            cell_seed(seed, ci),
        );
        match res {
            Ok(e) if e.is_finite() => {
                if best.map_or(true, |(b, _)| e < b) {
                    best = Some((e, lambda));
                }
            }
            Ok(_) => last_err = "non-finite CV error".into(),
            Err(e) => last_err = e.to_string(),
        }
    }
    best.map(|(_, l)| l).ok_or(TuneError::AllCellsFailed(last_err))
}

/// Tune MDCS and refit on all data at the argmin.
pub fn tune_mdcs(
    x: &[f64],
    y: &[f64],
    grid: &CvGrid,
    strategy: MdcsStrategy,
    seed: u64,
) -> Result<(CvSurface, DecompositionFit), TuneError> {
    grid.validate(x.len(), &["mu", "j"])?;
    let mut mus = grid.mu_values.clone();
    mus.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut js = grid.j_values.clone();
    js.sort();
    let j_axis: Vec<usize> = match strategy {
        MdcsStrategy::FixJThenMu => vec![select_j_ls(x, y, grid, seed)?],
        MdcsStrategy::JointJMu => js,
    };
    let mut scan = Scan::new(mus.len(), j_axis.len());
    for (r, &mu) in mus.iter().enumerate() {
        for (c, &j) in j_axis.iter().enumerate() {
            let s = cell_seed(seed, scan.cell);
            let res = md_cell_error(x, y, |tx, ty| fit_mdcs(tx, ty, j, mu), grid.folds, s);
            scan.record(r, c, res);
        }
    }
    let ((r, c), errors) = scan.finish()?;
    let (mu, j) = (mus[r], j_axis[c]);
    let fit = fit_mdcs(x, y, j, mu)?;
    let surface = CvSurface {
        row_axis: "mu",
        col_axis: "j",
        row_values: mus,
        col_values: j_axis.iter().map(|&v| v as f64).collect(),
        errors,
        argmin: (r, c),
        chosen_mu: mu,
        chosen_lambda: 0.0,
        chosen_j: j,
    };
    Ok((surface, fit))
}

/// Tune MDSS and refit on all data at the argmin.
pub fn tune_mdss(
    x: &[f64],
    y: &[f64],
    grid: &CvGrid,
    strategy: MdssStrategy,
    seed: u64,
) -> Result<(CvSurface, DecompositionFit), TuneError> {
    match strategy {
        MdssStrategy::JointLambdaMu => {
            grid.validate(x.len(), &["mu", "lambda"])?;
            let mut mus = grid.mu_values.clone();
            mus.sort_by(|a, b| a.partial_cmp(b).unwrap());
            // descending so ties prefer the larger lambda
            let mut lambdas = grid.lambda_values.clone();
            lambdas.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let mut scan = Scan::new(mus.len(), lambdas.len());
            for (r, &mu) in mus.iter().enumerate() {
                for (c, &lambda) in lambdas.iter().enumerate() {
                    let s = cell_seed(seed, scan.cell);
                    let res = md_cell_error(x, y, |tx, ty| fit_mdss(tx, ty, lambda, mu), grid.folds, s);
                    scan.record(r, c, res);
                }
            }
            let ((r, c), errors) = scan.finish()?;
            let (mu, lambda) = (mus[r], lambdas[c]);
            let fit = fit_mdss(x, y, lambda, mu)?;
            let surface = CvSurface {
                row_axis: "mu",
                col_axis: "lambda",
                row_values: mus,
                col_values: lambdas,
                errors,
                argmin: (r, c),
                chosen_mu: mu,
                chosen_lambda: lambda,
                chosen_j: 0,
            };
            Ok((surface, fit))
        }
        MdssStrategy::FixLambdaThenMu => {
            grid.validate(x.len(), &["mu", "lambda"])?;
            let lambda0 = select_lambda_ss(x, y, grid, seed)?;
            let mut mus = grid.mu_values.clone();
            mus.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut scan = Scan::new(mus.len(), 1);
            for (r, &mu) in mus.iter().enumerate() {
                let s = cell_seed(seed, scan.cell);
                let res = md_cell_error(x, y, |tx, ty| fit_mdss(tx, ty, lambda0, mu), grid.folds, s);
                scan.record(r, 0, res);
            }
            let ((r, _), errors) = scan.finish()?;
            let mu = mus[r];
            let fit = fit_mdss(x, y, lambda0, mu)?;
            let surface = CvSurface {
                row_axis: "mu",
                col_axis: "lambda",
                row_values: mus,
                col_values: vec![lambda0],
                errors,
                argmin: (r, 0),
                chosen_mu: mu,
                chosen_lambda: lambda0,
                chosen_j: 0,
            };
            Ok((surface, fit))
        }
        MdssStrategy::ShrinkageFactor => {
            grid.validate(x.len(), &["k", "lambda"])?;
            let lambda0 = select_lambda_ss(x, y, grid, seed)?;
            // descending k means ascending mu, so ties prefer the smaller mu
            let mut ks = grid.k_values.clone();
            ks.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let mut scan = Scan::new(ks.len(), 1);
            for (r, &k) in ks.iter().enumerate() {
                let s = cell_seed(seed, scan.cell);
                let (lambda, mu) = (lambda0 / k, 1.0 / k - 1.0);
                let res = md_cell_error(x, y, |tx, ty| fit_mdss(tx, ty, lambda, mu), grid.folds, s);
                scan.record(r, 0, res);
            }
            let ((r, _), errors) = scan.finish()?;
            let k = ks[r];
            let (lambda, mu) = (lambda0 / k, 1.0 / k - 1.0);
            let fit = fit_mdss(x, y, lambda, mu)?;
            let surface = CvSurface {
                row_axis: "k",
                col_axis: "lambda0",
                row_values: ks,
                col_values: vec![lambda0],
                errors,
                argmin: (r, 0),
                chosen_mu: mu,
                chosen_lambda: lambda,
                chosen_j: 0,
            };
            Ok((surface, fit))
        }
    }
}
