//! Deterministic test functions and Gaussian-process random-function
//! generation.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum CurveError {
    #[error("point {0} is outside the curve's domain [{1}, {2}]")]
    DomainError(f64, f64, f64),
    #[error("unknown curve or kernel label '{0}'")]
    UnknownLabel(String),
    #[error("Matern nu must be one of 1/2, 3/2, 5/2; got {0}")]
    UnsupportedNu(f64),
    #[error("kernel parameter {0} must be positive, got {1}")]
    InvalidParameter(&'static str, f64),
    #[error("covariance Cholesky failed even at jitter {0}")]
    CholeskyFailure(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum KernelFamily {
    SquaredExponential,
    RationalQuadratic,
    Matern,
    Periodic,
}

/// Covariance kernel with parameters, e.g. `SE-0.1`, `Mat32-1`, `RQ-0.1-0.5`,
/// `Periodic-0.1-4`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub ell: f64,
    /// Matern smoothness, one of 1/2, 3/2, 5/2.
    pub nu: Option<f64>,
    /// Rational-quadratic shape.
    pub alpha: Option<f64>,
    /// Periodic period.
    pub period: Option<f64>,
}

impl KernelSpec {
    pub fn se(ell: f64) -> Self {
        KernelSpec { family: KernelFamily::SquaredExponential, ell, nu: None, alpha: None, period: None }
    }

    pub fn matern(nu: f64, ell: f64) -> Self {
        KernelSpec { family: KernelFamily::Matern, ell, nu: Some(nu), alpha: None, period: None }
    }

    pub fn rq(ell: f64, alpha: f64) -> Self {
        KernelSpec { family: KernelFamily::RationalQuadratic, ell, nu: None, alpha: Some(alpha), period: None }
    }

    pub fn periodic(ell: f64, period: f64) -> Self {
        KernelSpec { family: KernelFamily::Periodic, ell, nu: None, alpha: None, period: Some(period) }
    }

    fn validate(&self) -> Result<(), CurveError> {
        if self.ell <= 0.0 {
            return Err(CurveError::InvalidParameter("ell", self.ell));
        }
        match self.family {
            KernelFamily::Matern => {
                let nu = self.nu.ok_or(CurveError::UnsupportedNu(0.0))?;
                if ![0.5, 1.5, 2.5].contains(&nu) {
                    return Err(CurveError::UnsupportedNu(nu));
                }
            }
            KernelFamily::RationalQuadratic => {
                let a = self.alpha.ok_or(CurveError::InvalidParameter("alpha", 0.0))?;
                if a <= 0.0 {
                    return Err(CurveError::InvalidParameter("alpha", a));
                }
            }
            KernelFamily::Periodic => {
                let t = self.period.ok_or(CurveError::InvalidParameter("period", 0.0))?;
                if t <= 0.0 {
                    return Err(CurveError::InvalidParameter("period", t));
                }
            }
            KernelFamily::SquaredExponential => {}
        }
        Ok(())
    }

    pub fn eval(&self, x: f64, xp: f64) -> f64 {
        let r = (x - xp).abs();
        match self.family {
            KernelFamily::SquaredExponential => (-(r * r) / (2.0 * self.ell * self.ell)).exp(),
            KernelFamily::RationalQuadratic => {
                let a = self.alpha.unwrap();
                (1.0 + r * r / (2.0 * a * self.ell * self.ell)).powf(-a)
            }
            KernelFamily::Matern => {
                let nu = self.nu.unwrap();
                let s = (2.0 * nu).sqrt() * r / self.ell;
                if nu == 0.5 {
                    (-s).exp()
                } else if nu == 1.5 {
                    (1.0 + s) * (-s).exp()
                } else {
                    (1.0 + s + s * s / 3.0) * (-s).exp()
                }
            }
            KernelFamily::Periodic => {
                let t = self.period.unwrap();
                let sn = (r / t).sin();
                (-2.0 * sn * sn / (self.ell * self.ell)).exp()
            }
        }
    }

    /// Parse a table label like `SE-0.1`, `Mat12-1`, `RQ-0.1-0.5`,
    /// `Periodic-0.1-4`.
    pub fn parse(label: &str) -> Result<Self, CurveError> {
        let parts: Vec<&str> = label.split('-').collect();
        let bad = || CurveError::UnknownLabel(label.to_string());
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
        let spec = match parts[0].to_ascii_lowercase().as_str() {
            "se" if parts.len() == 2 => KernelSpec::se(num(parts[1])?),
            "mat12" if parts.len() == 2 => KernelSpec::matern(0.5, num(parts[1])?),
            "mat32" if parts.len() == 2 => KernelSpec::matern(1.5, num(parts[1])?),
            "mat52" if parts.len() == 2 => KernelSpec::matern(2.5, num(parts[1])?),
            "rq" if parts.len() == 3 => KernelSpec::rq(num(parts[1])?, num(parts[2])?),
            "periodic" if parts.len() == 3 => KernelSpec::periodic(num(parts[1])?, num(parts[2])?),
            _ => return Err(bad()),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn label(&self) -> String {
        match self.family {
            KernelFamily::SquaredExponential => format!("SE-{}", self.ell),
            KernelFamily::Matern => {
                let tag = match self.nu.unwrap() {
                    v if v == 0.5 => "Mat12",
                    v if v == 1.5 => "Mat32",
                    _ => "Mat52",
                };
                format!("{tag}-{}", self.ell)
            }
            KernelFamily::RationalQuadratic => format!("RQ-{}-{}", self.ell, self.alpha.unwrap()),
            KernelFamily::Periodic => format!("Periodic-{}-{}", self.ell, self.period.unwrap()),
        }
    }
}

/// Deterministic test curves from the simulation studies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NamedCurve {
    /// y = x on [-1, 1]
    X,
    /// y = x^2 on [-1, 1]
    X2,
    /// y = x^3 on [-1, 1]
    X3,
    /// y = x^(1/3) (sign-preserving) on [-1, 1]
    Cbrt,
    /// y = exp(x) on [-1, 1]
    Exp,
    /// y = 1 / (1 + exp(-5x)) on [-1, 1]
    Sigmoid5,
    /// y = 1 / (1 + exp(-x)) on [-1, 1]
    SigmoidStd,
    /// y = 1 + x - a exp(-(x - 0.5)^2 / 0.02) on [0, 1]
    BowmanA(f64),
    /// The four benchmark curves m1..m4 on [0, 1]
    GhosalM(u8),
}

impl NamedCurve {
    pub fn domain(&self) -> (f64, f64) {
        match self {
            NamedCurve::BowmanA(_) | NamedCurve::GhosalM(_) => (0.0, 1.0),
            _ => (-1.0, 1.0),
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        match self {
            NamedCurve::X => x,
            NamedCurve::X2 => x * x,
            NamedCurve::X3 => x * x * x,
            NamedCurve::Cbrt => x.cbrt(),
            NamedCurve::Exp => x.exp(),
            NamedCurve::Sigmoid5 => 1.0 / (1.0 + (-5.0 * x).exp()),
            NamedCurve::SigmoidStd => 1.0 / (1.0 + (-x).exp()),
            NamedCurve::BowmanA(a) => 1.0 + x - a * (-(x - 0.5).powi(2) / (2.0 * 0.01)).exp(),
            NamedCurve::GhosalM(i) => match i {
                1 => 0.0,
                2 => x * (1.0 - x),
                3 => x + 0.415 * (-50.0 * x * x).exp(),
                _ => {
                    let bump = (-100.0 * (x - 0.25).powi(2)).exp();
                    if x < 0.5 {
                        10.0 * (x - 0.5).powi(3) - bump
                    } else {
                        0.1 * (x - 0.5) - bump
                    }
                }
            },
        }
    }

    pub fn parse(label: &str) -> Result<Self, CurveError> {
        let l = label.to_ascii_lowercase();
        let curve = match l.as_str() {
            "x" => NamedCurve::X,
            "x2" => NamedCurve::X2,
            "x3" => NamedCurve::X3,
            "cbrt" | "x13" => NamedCurve::Cbrt,
            "exp" => NamedCurve::Exp,
            "sigmoid" | "sigmoid5" => NamedCurve::Sigmoid5,
            "sigmoid1" => NamedCurve::SigmoidStd,
            "m1" => NamedCurve::GhosalM(1),
            "m2" => NamedCurve::GhosalM(2),
            "m3" => NamedCurve::GhosalM(3),
            "m4" => NamedCurve::GhosalM(4),
            _ => {
                if let Some(rest) = l.strip_prefix("bowman-") {
                    let a = rest.parse::<f64>().map_err(|_| CurveError::UnknownLabel(label.to_string()))?;
                    NamedCurve::BowmanA(a)
                } else {
                    return Err(CurveError::UnknownLabel(label.to_string()));
                }
            }
        };
        if let NamedCurve::GhosalM(i) = curve {
            debug_assert!((1..=4).contains(&i));
        }
        Ok(curve)
    }

    pub fn label(&self) -> String {
        match self {
            NamedCurve::X => "x".into(),
            NamedCurve::X2 => "x2".into(),
            NamedCurve::X3 => "x3".into(),
            NamedCurve::Cbrt => "cbrt".into(),
            NamedCurve::Exp => "exp".into(),
            NamedCurve::Sigmoid5 => "sigmoid".into(),
            NamedCurve::SigmoidStd => "sigmoid1".into(),
            NamedCurve::BowmanA(a) => format!("bowman-{a}"),
            NamedCurve::GhosalM(i) => format!("m{i}"),
        }
    }
}

/// Evaluate a named curve, rejecting points outside its conventional domain.
pub fn eval_curve(curve: &NamedCurve, x: &[f64]) -> Result<Vec<f64>, CurveError> {
    let (lo, hi) = curve.domain();
    x.iter()
        .map(|&xi| {
            if xi < lo || xi > hi {
                Err(CurveError::DomainError(xi, lo, hi))
            } else {
                Ok(curve.value(xi))
            }
        })
        .collect()
}

/// Covariance matrix of a kernel over the points `x`.
pub fn kernel_matrix(spec: &KernelSpec, x: &[f64]) -> Result<DMatrix<f64>, CurveError> {
    spec.validate()?;
    let n = x.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = spec.eval(x[i], x[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// Draw one function sample `f ~ N(0, K + jitter I)` at the points `x`.
pub fn gp_sample(spec: &KernelSpec, x: &[f64], seed: u64) -> Result<Vec<f64>, CurveError> {
    let sigma = kernel_matrix(spec, x)?;
    let n = x.len();
    let mut jitter = 1e-7;
    let chol = loop {
        let mut m = sigma.clone();
        for i in 0..n {
            m[(i, i)] += jitter;
        }
        match Cholesky::new(m) {
            Some(c) => break c,
            None => {
                jitter *= 10.0;
                if jitter > 1e-4 {
                    return Err(CurveError::CholeskyFailure(jitter / 10.0));
                }
            }
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let f = chol.l() * z;
    Ok(f.as_slice().to_vec())
}
