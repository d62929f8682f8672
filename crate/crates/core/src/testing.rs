//! Monotonicity hypothesis testing: wild-bootstrap calibration of the
//! coefficient-variance statistics, plus Benjamini-Hochberg adjustment and
//! hypergeometric enrichment for screening workflows.

use nalgebra::DVector;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::decomposition::{DecompositionFit, FitContext, FitError, FitMethod};
use crate::tuning::{tune_mdcs, tune_mdss, CvGrid, MdcsStrategy, MdssStrategy, TuneError};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum TestError {
    #[error("R must be at least 1")]
    BadReplicates,
    #[error("alpha must lie in (0, 1); got {0}")]
    BadAlpha(f64),
    #[error("initial fit failed: {0}")]
    Fit(#[from] FitError),
    #[error("tuning failed: {0}")]
    Tune(#[from] TuneError),
    #[error("invalid enrichment counts: need k <= min(n, M), M <= N, n <= N")]
    InvalidCounts,
    #[error("p-values must lie in [0, 1]")]
    BadPValue,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Hypothesis {
    IncreasingNull,
    DecreasingNull,
    MonotoneNull,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Multiplier {
    Normal,
    /// Sensitivity checks only; the reference procedure uses N(0,1).
    Rademacher,
}

/// How the null fit's hyperparameters are obtained.
#[derive(Debug, Clone)]
pub enum Tuner {
    FixedMdcs { j: usize, mu: f64 },
    FixedMdss { lambda: f64, mu: f64 },
    CvMdcs { grid: CvGrid, strategy: MdcsStrategy },
    CvMdss { grid: CvGrid, strategy: MdssStrategy },
}

#[derive(Debug, Clone)]
pub struct TestConfig {
    pub tuner: Tuner,
    pub r: usize,
    pub alpha: f64,
    pub hypothesis: Hypothesis,
    pub multiplier: Multiplier,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    /// Bootstrap statistics delta_r; +inf entries mark resamples whose refit
    /// failed twice.
    #[serde(with = "inf_aware")]
    pub bootstrap: Vec<f64>,
    pub p_value: f64,
    pub alpha: f64,
    pub reject: bool,
    pub hypothesis: Hypothesis,
    pub method: FitMethod,
    pub seed: u64,
}

/// JSON has no infinity literal; failed-refit sentinels are stored as the
/// string "inf".
mod inf_aware {
    use serde::de::Error;
    use serde::{Deserialize, Deserializer, Serializer};

    #[derive(serde::Serialize, serde::Deserialize)]
    #[serde(untagged)]
    enum Entry {
        Num(f64),
        Str(String),
    }

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let entries: Vec<Entry> = v
            .iter()
            .map(|&x| if x.is_finite() { Entry::Num(x) } else { Entry::Str("inf".into()) })
            .collect();
        serde::Serialize::serialize(&entries, s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let entries: Vec<Entry> = Deserialize::deserialize(d)?;
        entries
            .into_iter()
            .map(|e| match e {
                Entry::Num(x) => Ok(x),
                Entry::Str(s) if s == "inf" => Ok(f64::INFINITY),
                Entry::Str(s) => Err(D::Error::custom(format!("bad bootstrap entry '{s}'"))),
            })
            .collect()
    }
}

fn sample_variance(v: &DVector<f64>) -> f64 {
    let n = v.len();
    if n < 2 {
        return 0.0;
    }
    let mean = v.sum() / n as f64;
    v.iter().map(|&x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
}

/// T_u = V(gamma_d), T_d = V(gamma_u), T_m = the smaller of the two.
pub fn statistic(fit: &DecompositionFit, hypothesis: Hypothesis) -> f64 {
    let vu = sample_variance(&fit.gamma_u);
    let vd = sample_variance(&fit.gamma_d);
    match hypothesis {
        Hypothesis::IncreasingNull => vd,
        Hypothesis::DecreasingNull => vu,
        Hypothesis::MonotoneNull => vu.min(vd),
    }
}

fn replicate_seed(seed: u64, r: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(r as u64 + 1)
}

fn draw_eta(rng: &mut ChaCha8Rng, n: usize, multiplier: Multiplier) -> Vec<f64> {
    (0..n)
        .map(|_| match multiplier {
            Multiplier::Normal => rng.sample::<f64, _>(StandardNormal),
            Multiplier::Rademacher => {
                if rng.random_bool(0.5) {
                    1.0
                } else {
                    -1.0
                }
            }
        })
        .collect()
}

/// Wild-bootstrap test of the monotonicity null.
///
/// Hyperparameters are tuned once on the observed data (when a CV tuner is
/// given) and frozen inside the bootstrap loop. A resample whose refit fails
/// is retried once with a fresh eta draw, then scored delta_r = +inf, which is
/// conservative toward non-rejection.
pub fn wild_bootstrap_test(
    x: &[f64],
    y: &[f64],
    cfg: &TestConfig,
    seed: u64,
) -> Result<TestResult, TestError> {
    if cfg.r < 1 {
        return Err(TestError::BadReplicates);
    }
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(TestError::BadAlpha(cfg.alpha));
    }
    let (ctx, method) = match &cfg.tuner {
        Tuner::FixedMdcs { j, mu } => (FitContext::mdcs(x, *j, *mu)?, FitMethod::Mdcs),
        Tuner::FixedMdss { lambda, mu } => (FitContext::mdss(x, *lambda, *mu)?, FitMethod::Mdss),
        Tuner::CvMdcs { grid, strategy } => {
            let (_, fit) = tune_mdcs(x, y, grid, *strategy, seed)?;
            (FitContext::mdcs(x, fit.basis_size(), fit.mu)?, FitMethod::Mdcs)
        }
        Tuner::CvMdss { grid, strategy } => {
            let (_, fit) = tune_mdss(x, y, grid, *strategy, seed)?;
            (FitContext::mdss(x, fit.lambda, fit.mu)?, FitMethod::Mdss)
        }
    };
    let yv = DVector::from_column_slice(y);
    let fit = ctx.fit(&yv)?;
    let t_obs = statistic(&fit, cfg.hypothesis);

    let vu = sample_variance(&fit.gamma_u);
    let vd = sample_variance(&fit.gamma_d);
    let signal = match cfg.hypothesis {
        Hypothesis::IncreasingNull => &ctx.b * &fit.gamma_u,
        Hypothesis::DecreasingNull => &ctx.b * &fit.gamma_d,
        Hypothesis::MonotoneNull => {
            if vu >= vd {
                &ctx.b * &fit.gamma_u
            } else {
                &ctx.b * &fit.gamma_d
            }
        }
    };
    let c_hat = signal.sum() / signal.len() as f64;
    let null_surface = signal.add_scalar(c_hat);
    let residuals = &yv - &fit.fitted;
    let n = x.len();

    let bootstrap: Vec<f64> = (0..cfg.r)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(replicate_seed(seed, r));
            for _attempt in 0..2 {
                let eta = draw_eta(&mut rng, n, cfg.multiplier);
                let ystar = DVector::from_fn(n, |i, _| null_surface[i] + eta[i] * residuals[i]);
                if let Ok(refit) = ctx.fit(&ystar) {
                    return statistic(&refit, cfg.hypothesis);
                }
            }
            f64::INFINITY
        })
        .collect();

    let exceed = bootstrap.iter().filter(|&&d| d > t_obs).count();
    let p_value = exceed as f64 / cfg.r as f64;
    Ok(TestResult {
        statistic: t_obs,
        bootstrap,
        p_value,
        alpha: cfg.alpha,
        reject: p_value < cfg.alpha,
        hypothesis: cfg.hypothesis,
        method,
        seed,
    })
}

/// Benjamini-Hochberg step-up. Returns the rejection mask and the p-value
/// cutoff (0 when nothing is rejected).
pub fn bh_adjust(p: &[f64], alpha: f64) -> Result<(Vec<bool>, f64), TestError> {
    if p.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(TestError::BadPValue);
    }
    let m = p.len();
    if m == 0 {
        return Ok((Vec::new(), 0.0));
    }
    let mut sorted: Vec<f64> = p.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut cutoff = 0.0;
    for (i, &pv) in sorted.iter().enumerate() {
        if pv <= (i + 1) as f64 * alpha / m as f64 {
            cutoff = pv;
        }
    }
    let rejected = p.iter().map(|&v| v <= cutoff && cutoff > 0.0 || v == 0.0).collect();
    Ok((rejected, cutoff))
}

/// Enrichment counts: `reference` = N genes in the reference list, `analyzed`
/// = n in the analyzed set, `annotated` = M annotated in the reference,
/// `hits` = k annotated in the analyzed set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnrichInput {
    pub reference: usize,
    pub analyzed: usize,
    pub annotated: usize,
    pub hits: usize,
}

fn ln_choose(n: usize, k: usize) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// Hypergeometric upper-tail enrichment p-value:
/// p = 1 - sum_{i=0}^{k-1} C(M,i) C(N-M,n-i) / C(N,n), in log-space.
pub fn hypergeom_enrich(e: &EnrichInput) -> Result<f64, TestError> {
    let (nn, n, m, k) = (e.reference, e.analyzed, e.annotated, e.hits);
    if m > nn || n > nn || k > n.min(m) {
        return Err(TestError::InvalidCounts);
    }
    let ln_denom = ln_choose(nn, n);
    let mut below = 0.0;
    for i in 0..k {
        if n - i > nn - m {
            continue;
        }
        let ln_term = ln_choose(m, i) + ln_choose(nn - m, n - i) - ln_denom;
        below += ln_term.exp();
    }
    Ok((1.0 - below).clamp(0.0, 1.0))
}
