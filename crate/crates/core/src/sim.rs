//! Monte-Carlo harness comparing monotone decomposition against plain spline
//! baselines (MSFE/MSPE tables) and measuring test size/power, with the
//! MSE-comparison diagnostics evaluated on the known truth.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::basis;
use crate::cone;
use crate::curves::{eval_curve, gp_sample, CurveError, KernelSpec, NamedCurve};
use crate::decomposition::{detect_ties, predict, DecompositionFit, FitError, MDSS_KNOT_CAP};
use crate::testing::{wild_bootstrap_test, Hypothesis, Multiplier, TestConfig, TestError, Tuner};
use crate::tuning::{
    select_j_ls, select_lambda_ss, tune_mdcs, tune_mdss, CvGrid, MdcsStrategy, MdssStrategy, TuneError,
};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum SimError {
    #[error("lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("all {0} replications failed; last error: {1}")]
    AllRepsFailed(usize, String),
    #[error(transparent)]
    Curve(#[from] CurveError),
    #[error(transparent)]
    Basis(#[from] crate::basis::BasisError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Tune(#[from] TuneError),
    #[error(transparent)]
    Test(#[from] TestError),
}

/// Ground truth for a synthetic experiment: a named curve or a GP draw.
#[derive(Debug, Clone)]
pub enum Truth {
    Named(NamedCurve),
    Gp(KernelSpec),
}

impl Truth {
    pub fn label(&self) -> String {
        match self {
            Truth::Named(c) => c.label(),
            Truth::Gp(k) => k.label(),
        }
    }

    pub fn domain(&self) -> (f64, f64) {
        match self {
            Truth::Named(c) => c.domain(),
            Truth::Gp(_) => (-1.0, 1.0),
        }
    }

    /// Parse either a curve label or a kernel label.
    pub fn parse(label: &str) -> Result<Self, CurveError> {
        NamedCurve::parse(label)
            .map(Truth::Named)
            .or_else(|_| KernelSpec::parse(label).map(Truth::Gp))
            .map_err(|_| CurveError::UnknownLabel(label.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Baseline {
    CubicSpline,
    SmoothingSpline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Mdcs(MdcsStrategy),
    Mdss(MdssStrategy),
}

#[derive(Debug, Clone)]
pub struct FitExperimentConfig {
    pub truth: Truth,
    pub sigma: f64,
    pub n: usize,
    pub reps: usize,
    pub n_grid: usize,
    pub baseline: Baseline,
    pub strategy: Strategy,
    pub grid: CvGrid,
    pub master_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    MdBetter,
    BaseBetter,
}

/// One table row: aggregated fitting/prediction errors and the paired
/// comparison of MD against the baseline spline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub label: String,
    pub sigma: f64,
    pub n: usize,
    pub reps_used: usize,
    pub failures: usize,
    pub msfe_base: f64,
    pub msfe_base_se: f64,
    pub msfe_md: f64,
    pub msfe_md_se: f64,
    pub mspe_base: f64,
    pub mspe_base_se: f64,
    pub mspe_md: f64,
    pub mspe_md_se: f64,
    pub p_value: f64,
    pub direction: Direction,
    /// Fraction of replications where MD had the lower MSPE.
    pub prop: f64,
    /// Set when the paired differences carry no variance (e.g. sigma = 0).
    pub degenerate: bool,
}

/// Empirical plug-in estimates of the MSE-comparison conditions, averaged
/// over replications: the cubic-spline bound's C1, C2, mean tie-group count g
/// and the implied sigma^2 threshold, plus the smoothing-spline hat-matrix
/// threshold when the baseline provides a lambda0.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Diagnostics {
    pub sigma2: f64,
    pub c1_mean: Option<f64>,
    pub c2_mean: Option<f64>,
    pub g_mean: Option<f64>,
    pub cs_sigma2_threshold: Option<f64>,
    pub ss_sigma2_threshold: Option<f64>,
    pub reps_used: usize,
}

/// Mean squared fitting error (1/n) sum (y_i - yhat_i)^2.
pub fn msfe(y: &[f64], yhat: &[f64]) -> Result<f64, SimError> {
    if y.len() != yhat.len() {
        return Err(SimError::LengthMismatch(y.len(), yhat.len()));
    }
    Ok(y.iter().zip(yhat).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64)
}

/// The prediction grid t_i = lo + (i-1)(hi-lo)/n, i = 1..n; t_n stops one
/// step short of hi, exactly as displayed in the protocol.
pub fn mspe_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (1..=n).map(|i| lo + (i - 1) as f64 * (hi - lo) / n as f64).collect()
}

/// Mean squared prediction error of `fhat` against `f` over the grid.
pub fn mspe<F, G>(fhat: F, f: G, lo: f64, hi: f64, n: usize) -> f64
where
    F: Fn(f64) -> f64,
    G: Fn(f64) -> f64,
{
    let grid = mspe_grid(lo, hi, n);
    grid.iter().map(|&t| (fhat(t) - f(t)).powi(2)).sum::<f64>() / n as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTestOutcome {
    pub p_value: f64,
    pub direction: Direction,
    pub zero_variance: bool,
}

/// One-sample one-sided t-test on paired differences; the side is chosen by
/// the sign of the sum.
pub fn paired_one_sided_t(deltas: &[f64]) -> Result<TTestOutcome, SimError> {
    let r = deltas.len();
    if r < 2 {
        return Err(SimError::Config("need at least 2 paired differences".into()));
    }
    let mean = deltas.iter().sum::<f64>() / r as f64;
    let var = deltas.iter().map(|&d| (d - mean).powi(2)).sum::<f64>() / (r - 1) as f64;
    let direction = if deltas.iter().sum::<f64>() < 0.0 { Direction::MdBetter } else { Direction::BaseBetter };
    if var <= 0.0 || !var.is_finite() {
        return Ok(TTestOutcome { p_value: 1.0, direction, zero_variance: true });
    }
    let t = mean / (var / r as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, (r - 1) as f64).expect("df >= 1");
    let p = match direction {
        Direction::MdBetter => dist.cdf(t),
        Direction::BaseBetter => 1.0 - dist.cdf(t),
    };
    Ok(TTestOutcome { p_value: p, direction, zero_variance: false })
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(a.wrapping_mul(0xD1B5_4A32_D192_ED03))
        .wrapping_add(b)
}

/// Sorted uniform sample on the truth's domain plus the truth evaluated at
/// the sample and at the MSPE grid. GP truths are drawn jointly over both
/// location sets so the grid truth is exact.
fn sample_dataset(
    truth: &Truth,
    sigma: f64,
    n: usize,
    n_grid: usize,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>), SimError> {
    let (lo, hi) = truth.domain();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    x.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let xmin = x[0];
    let xmax = x[n - 1];
    let grid = mspe_grid(xmin, xmax, n_grid);
    let (f_train, f_grid) = match truth {
        Truth::Named(c) => (eval_curve(c, &x)?, eval_curve(c, &grid)?),
        Truth::Gp(k) => {
            let mut locs = x.clone();
            locs.extend_from_slice(&grid);
            let joint = gp_sample(k, &locs, mix(seed, 1, 0))?;
            (joint[..n].to_vec(), joint[n..].to_vec())
        }
    };
    let y: Vec<f64> = f_train.iter().map(|&f| f + sigma * rng.sample::<f64, _>(StandardNormal)).collect();
    Ok((x, y, f_train, grid, f_grid))
}

struct RepOutcome {
    msfe_base: f64,
    msfe_md: f64,
    mspe_base: f64,
    mspe_md: f64,
    c1: Option<f64>,
    c2: Option<f64>,
    g: Option<f64>,
    cs_thr: Option<f64>,
    ss_thr: Option<f64>,
}

fn cs_diagnostics(fit: &DecompositionFit, x: &[f64], f: &[f64]) -> Option<(f64, f64, f64, f64)> {
    let b = basis::design_matrix(&fit.knots, x).ok()?;
    let scale = fit.gamma_u.amax().max(1.0);
    let ties = detect_ties(&fit.gamma_u, 1e-6 * scale).ok()?;
    let g = ties.count();
    let j = fit.gamma_u.len();
    let gm = ties.aggregation_matrix(j);
    let bg = &b * gm.transpose();
    let core = bg.transpose() * &bg;
    let inv = core.try_inverse()?;
    let fv = DVector::from_column_slice(f);
    let n = f.len() as f64;
    let af = &bg * (inv * (bg.transpose() * &fv));
    let c1 = (fv.dot(&af) - fv.sum().powi(2) / n).max(0.0);
    let c2 = (fv.dot(&fv) - fv.dot(&af)).max(0.0);
    let (jf, gf) = (j as f64, g as f64);
    let delta = (c1 * (jf - gf) + c2 * (gf + 1.0)).powi(2) + 4.0 * c1 * c2 * (gf - 1.0).powi(2);
    let denom = 2.0 * ((jf - gf) * (gf + 1.0) + (gf - 1.0).powi(2));
    if denom <= 0.0 {
        return None;
    }
    let thr = (-c1 * (jf - gf) + c2 * (gf + 1.0) + delta.sqrt()) / denom;
    Some((c1, c2, gf, thr))
}

fn ss_diagnostics(x: &[f64], f: &[f64], lambda0: f64) -> Option<f64> {
    let kv = basis::build_knots_all_points(x, MDSS_KNOT_CAP).ok()?;
    let b = basis::design_matrix(&kv, x).ok()?;
    let omega = basis::penalty_matrix(&kv);
    let m = b.transpose() * &b + lambda0 * omega;
    let inv = m.try_inverse()?;
    let q = &b * inv * b.transpose();
    let n = x.len();
    let fv = DVector::from_column_slice(f);
    let ones = DMatrix::from_element(n, n, 1.0 / n as f64);
    let proj = DMatrix::identity(n, n) - ones * &q;
    let qf = &q * &fv;
    let numer = qf.dot(&(&proj * (&fv - &qf)));
    let denom = (&proj * &q * &q).trace();
    if denom.abs() < 1e-12 {
        return None;
    }
    Some(numer / denom)
}

fn run_one_rep(cfg: &FitExperimentConfig, rep: usize) -> Result<RepOutcome, SimError> {
    let seed = mix(cfg.master_seed, 2, rep as u64);
    let (x, y, f_train, grid, f_grid) = sample_dataset(&cfg.truth, cfg.sigma, cfg.n, cfg.n_grid, seed)?;
    let yv = DVector::from_column_slice(&y);

    // baseline spline fit plus its lambda0 when applicable
    let (base_fitted, base_grid, lambda0) = match cfg.baseline {
        Baseline::CubicSpline => {
            let j = select_j_ls(&x, &y, &cfg.grid, mix(seed, 3, 0))?;
            let kv = basis::build_knots(&x, j)?;
            let b = basis::design_matrix(&kv, &x)?;
            let coef = cone::solve_ls(&b, &yv).map_err(FitError::from)?;
            let fitted = &b * &coef;
            let on_grid = basis::eval_spline(&kv, &coef, &grid)?;
            (fitted, on_grid, None)
        }
        Baseline::SmoothingSpline => {
            let lambda = select_lambda_ss(&x, &y, &cfg.grid, mix(seed, 3, 0))?;
            let kv = basis::build_knots_all_points(&x, MDSS_KNOT_CAP)?;
            let b = basis::design_matrix(&kv, &x)?;
            let omega = basis::penalty_matrix(&kv);
            let coef = cone::solve_smoothing(&b, &omega, &yv, lambda).map_err(FitError::from)?;
            let fitted = &b * &coef;
            let on_grid = basis::eval_spline(&kv, &coef, &grid)?;
            (fitted, on_grid, Some(lambda))
        }
    };

    let md_fit = match cfg.strategy {
        Strategy::Mdcs(s) => tune_mdcs(&x, &y, &cfg.grid, s, mix(seed, 4, 0))?.1,
        Strategy::Mdss(s) => tune_mdss(&x, &y, &cfg.grid, s, mix(seed, 4, 0))?.1,
    };
    let (md_grid, _, _) = predict(&md_fit, &grid)?;

    let msfe_base = msfe(&y, base_fitted.as_slice())?;
    let msfe_md = msfe(&y, md_fit.fitted.as_slice())?;
    let mspe_base = msfe(&f_grid, base_grid.as_slice())?;
    let mspe_md = msfe(&f_grid, md_grid.as_slice())?;

    let cs = cs_diagnostics(&md_fit, &x, &f_train);
    let ss_thr = lambda0.and_then(|l| ss_diagnostics(&x, &f_train, l));
    Ok(RepOutcome {
        msfe_base,
        msfe_md,
        mspe_base,
        mspe_md,
        c1: cs.map(|d| d.0),
        c2: cs.map(|d| d.1),
        g: cs.map(|d| d.2),
        cs_thr: cs.map(|d| d.3),
        ss_thr,
    })
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let r = values.len() as f64;
    let mean = values.iter().sum::<f64>() / r;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|&v| (v - mean).powi(2)).sum::<f64>() / (r - 1.0);
    (mean, (var / r).sqrt())
}

fn mean_of(values: Vec<f64>) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Run the fitting-comparison experiment: per replication, sample data,
/// CV-tune both the baseline spline and the monotone decomposition, and
/// record MSFE/MSPE. Failed replications are excluded and counted.
pub fn run_fit_experiment(cfg: &FitExperimentConfig) -> Result<(ExperimentRow, Diagnostics), SimError> {
    if cfg.reps < 2 {
        return Err(SimError::Config("reps must be at least 2".into()));
    }
    if cfg.sigma < 0.0 {
        return Err(SimError::Config("sigma must be nonnegative".into()));
    }
    if cfg.n_grid < 2 {
        return Err(SimError::Config("n_grid must be at least 2".into()));
    }
    match (cfg.baseline, cfg.strategy) {
        (Baseline::CubicSpline, Strategy::Mdcs(_)) | (Baseline::SmoothingSpline, Strategy::Mdss(_)) => {}
        _ => return Err(SimError::Config("baseline and strategy families must match".into())),
    }
    let outcomes: Vec<Result<RepOutcome, SimError>> =
        (0..cfg.reps).into_par_iter().map(|rep| run_one_rep(cfg, rep)).collect();
    let mut ok = Vec::new();
    let mut last_err = String::new();
    for o in outcomes {
        match o {
            Ok(v) => ok.push(v),
            Err(e) => last_err = e.to_string(),
        }
    }
    let failures = cfg.reps - ok.len();
    if ok.len() < 2 {
        return Err(SimError::AllRepsFailed(cfg.reps, last_err));
    }
    let deltas: Vec<f64> = ok.iter().map(|o| o.mspe_md - o.mspe_base).collect();
    let scale = ok.iter().map(|o| o.mspe_base.abs().max(o.mspe_md.abs())).fold(0.0_f64, f64::max);
    let degenerate = scale < 1e-12 || deltas.iter().all(|&d| d == 0.0);
    let t = paired_one_sided_t(&deltas)?;
    let prop = deltas.iter().filter(|&&d| d < 0.0).count() as f64 / ok.len() as f64;
    let (msfe_base, msfe_base_se) = mean_se(&ok.iter().map(|o| o.msfe_base).collect::<Vec<_>>());
    let (msfe_md, msfe_md_se) = mean_se(&ok.iter().map(|o| o.msfe_md).collect::<Vec<_>>());
    let (mspe_base, mspe_base_se) = mean_se(&ok.iter().map(|o| o.mspe_base).collect::<Vec<_>>());
    let (mspe_md, mspe_md_se) = mean_se(&ok.iter().map(|o| o.mspe_md).collect::<Vec<_>>());
    let row = ExperimentRow {
        label: cfg.truth.label(),
        sigma: cfg.sigma,
        n: cfg.n,
        reps_used: ok.len(),
        failures,
        msfe_base,
        msfe_base_se,
        msfe_md,
        msfe_md_se,
        mspe_base,
        mspe_base_se,
        mspe_md,
        mspe_md_se,
        p_value: t.p_value,
        direction: t.direction,
        prop,
        degenerate: degenerate || t.zero_variance,
    };
    let diag = Diagnostics {
        sigma2: cfg.sigma * cfg.sigma,
        c1_mean: mean_of(ok.iter().filter_map(|o| o.c1).collect()),
        c2_mean: mean_of(ok.iter().filter_map(|o| o.c2).collect()),
        g_mean: mean_of(ok.iter().filter_map(|o| o.g).collect()),
        cs_sigma2_threshold: mean_of(ok.iter().filter_map(|o| o.cs_thr).collect()),
        ss_sigma2_threshold: mean_of(ok.iter().filter_map(|o| o.ss_thr).collect()),
        reps_used: ok.len(),
    };
    Ok((row, diag))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SizePowerRow {
    pub label: String,
    pub sigma: f64,
    pub n: usize,
    pub sims_used: usize,
    pub failures: usize,
    pub rejection_rate: f64,
}

/// Rejection-rate table: for each (truth, sigma, n) cell run `n_sims`
/// independent datasets through the wild-bootstrap test.
#[allow(clippy::too_many_arguments)]
pub fn run_size_power_experiment(
    truths: &[Truth],
    sigmas: &[f64],
    ns: &[usize],
    n_sims: usize,
    r: usize,
    alpha: f64,
    hypothesis: Hypothesis,
    tuner: &Tuner,
    seed: u64,
) -> Result<Vec<SizePowerRow>, SimError> {
    if n_sims < 1 {
        return Err(SimError::Config("n_sims must be at least 1".into()));
    }
    let mut rows = Vec::new();
    for (ti, truth) in truths.iter().enumerate() {
        for (si, &sigma) in sigmas.iter().enumerate() {
            for (ni, &n) in ns.iter().enumerate() {
                let cell = mix(seed, 5, (ti * 101 + si * 11 + ni) as u64);
                let results: Vec<Option<bool>> = (0..n_sims)
                    .into_par_iter()
                    .map(|sim| {
                        let s = mix(cell, 6, sim as u64);
                        let data = sample_dataset(truth, sigma, n, 2, s).ok()?;
                        let (x, y, _, _, _) = data;
                        let cfg = TestConfig {
                            tuner: tuner.clone(),
                            r,
                            alpha,
                            hypothesis,
                            multiplier: Multiplier::Normal,
                        };
                        wild_bootstrap_test(&x, &y, &cfg, mix(s, 7, 0)).ok().map(|res| res.reject)
                    })
                    .collect();
                let ok: Vec<bool> = results.iter().filter_map(|&v| v).collect();
                let failures = n_sims - ok.len();
                if ok.is_empty() {
                    return Err(SimError::AllRepsFailed(n_sims, "every simulation failed in a cell".into()));
                }
                let rate = ok.iter().filter(|&&v| v).count() as f64 / ok.len() as f64;
                rows.push(SizePowerRow {
                    label: truth.label(),
                    sigma,
                    n,
                    sims_used: ok.len(),
                    failures,
                    rejection_rate: rate,
                });
            }
        }
    }
    Ok(rows)
}

/// Conventional significance stars; a labeling convention, not a quantity
/// from the protocol.
pub fn significance_stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else if p < 0.1 {
        "."
    } else {
        ""
    }
}

/// TSV emitter matching the comparison-table column layout.
pub fn experiment_table_tsv(rows: &[ExperimentRow]) -> String {
    let mut out = String::from(
        "curve\tsigma\tn\treps\tfailures\tmsfe_base\tmsfe_base_se\tmsfe_md\tmsfe_md_se\tmspe_base\tmspe_base_se\tmspe_md\tmspe_md_se\tp_value\tstars\tdirection\tprop\n",
    );
    for r in rows {
        let dir = match r.direction {
            Direction::MdBetter => "md",
            Direction::BaseBetter => "base",
        };
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{:.6e}\t{:.6e}\t{:.6e}\t{:.6e}\t{:.6e}\t{:.6e}\t{:.6e}\t{:.6e}\t{:.4e}\t{}\t{}\t{:.4}\n",
            r.label,
            r.sigma,
            r.n,
            r.reps_used,
            r.failures,
            r.msfe_base,
            r.msfe_base_se,
            r.msfe_md,
            r.msfe_md_se,
            r.mspe_base,
            r.mspe_base_se,
            r.mspe_md,
            r.mspe_md_se,
            r.p_value,
            significance_stars(r.p_value),
            dir,
            r.prop,
        ));
    }
    out
}

pub fn size_power_tsv(rows: &[SizePowerRow]) -> String {
    let mut out = String::from("curve\tsigma\tn\tsims\tfailures\trejection_rate\n");
    for r in rows {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{:.4}\n",
            r.label, r.sigma, r.n, r.sims_used, r.failures, r.rejection_rate
        ));
    }
    out
}
