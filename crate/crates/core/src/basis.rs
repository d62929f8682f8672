//! Cubic B-spline bases with quantile knots, design matrices and the exact
//! roughness penalty matrix.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Spline order (cubic).
pub const ORDER: usize = 4;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum BasisError {
    #[error("basis size J must be at least {ORDER}, got {0}")]
    BasisSizeTooSmall(usize),
    #[error("need at least J = {j} points with distinct values, got {n} points ({distinct} distinct)")]
    TooFewPoints { n: usize, distinct: usize, j: usize },
    #[error("all sample points coincide; cannot place knots")]
    DegenerateRange,
    #[error("point {0} lies outside the knot range [{1}, {2}]")]
    OutOfRange(f64, f64, f64),
}

/// Knot sequence for a cubic B-spline basis with replicated boundary knots.
///
/// The full sequence is `[lo, lo, lo, lo, interior..., hi, hi, hi, hi]`
/// of length `J + 4`, where `J = interior.len() + 4`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnotVector {
    interior: Vec<f64>,
    lo: f64,
    hi: f64,
}

impl KnotVector {
    /// Build directly from boundary and interior knots.
    pub fn new(lo: f64, hi: f64, interior: Vec<f64>) -> Result<Self, BasisError> {
        if !(lo < hi) {
            return Err(BasisError::DegenerateRange);
        }
        for w in interior.windows(2) {
            assert!(w[0] <= w[1], "interior knots must be nondecreasing");
        }
        if let (Some(&first), Some(&last)) = (interior.first(), interior.last()) {
            assert!(lo < first && last < hi, "interior knots must lie strictly inside (lo, hi)");
        }
        Ok(KnotVector { interior, lo, hi })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn interior(&self) -> &[f64] {
        &self.interior
    }

    /// Basis size J.
    pub fn basis_size(&self) -> usize {
        self.interior.len() + ORDER
    }

    /// Full knot sequence of length J + 4.
    pub fn full(&self) -> Vec<f64> {
        let mut t = Vec::with_capacity(self.basis_size() + ORDER);
        t.extend(std::iter::repeat(self.lo).take(ORDER));
        t.extend_from_slice(&self.interior);
        t.extend(std::iter::repeat(self.hi).take(ORDER));
        t
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }
}

/// Evaluated design matrix together with the roughness penalty for the same knots.
#[derive(Debug, Clone)]
pub struct DesignPair {
    pub b: DMatrix<f64>,
    pub omega: DMatrix<f64>,
    pub xs: Vec<f64>,
}

impl DesignPair {
    pub fn build(knots: &KnotVector, x: &[f64]) -> Result<Self, BasisError> {
        let b = design_matrix(knots, x)?;
        let omega = penalty_matrix(knots);
        Ok(DesignPair { b, omega, xs: x.to_vec() })
    }
}

/// Quantile of the sorted slice `v` at level `p`, interpolating linearly
/// between order statistics.
fn quantile_sorted(v: &[f64], p: f64) -> f64 {
    let h = (v.len() - 1) as f64 * p;
    let i = h.floor() as usize;
    if i + 1 >= v.len() {
        v[v.len() - 1]
    } else {
        v[i] + (h - i as f64) * (v[i + 1] - v[i])
    }
}

/// Place J - 4 interior knots at equally spaced quantiles of the distinct
/// sample values; boundaries at the sample extremes.
pub fn build_knots(x: &[f64], j: usize) -> Result<KnotVector, BasisError> {
    if j < ORDER {
        return Err(BasisError::BasisSizeTooSmall(j));
    }
    let mut distinct: Vec<f64> = x.to_vec();
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(BasisError::DegenerateRange);
    }
    if x.len() < j || distinct.len() < j {
        return Err(BasisError::TooFewPoints { n: x.len(), distinct: distinct.len(), j });
    }
    let lo = distinct[0];
    let hi = distinct[distinct.len() - 1];
    let m = j - ORDER;
    let interior: Vec<f64> = (1..=m)
        .map(|k| quantile_sorted(&distinct, k as f64 / (m + 1) as f64))
        .collect();
    KnotVector::new(lo, hi, interior)
}

/// Knots for the smoothing-spline convention: every distinct interior sample
/// value is a knot, giving J = (#distinct x) + 2. Above `cap` distinct
/// interior values the knots are thinned to `cap` quantile positions.
pub fn build_knots_all_points(x: &[f64], cap: usize) -> Result<KnotVector, BasisError> {
    let mut distinct: Vec<f64> = x.to_vec();
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(BasisError::DegenerateRange);
    }
    let lo = distinct[0];
    let hi = distinct[distinct.len() - 1];
    let inner = &distinct[1..distinct.len() - 1];
    let interior: Vec<f64> = if inner.len() <= cap {
        inner.to_vec()
    } else {
        (1..=cap).map(|k| quantile_sorted(inner, k as f64 / (cap + 1) as f64)).collect()
    };
    KnotVector::new(lo, hi, interior)
}

/// Index of the knot span containing `x`: largest `mu` in `[3, J-1]` with
/// `t[mu] <= x`, closing the last interval at `hi`.
fn find_span(t: &[f64], j: usize, x: f64) -> usize {
    if x >= t[j] {
        return j - 1;
    }
    let mut lo = ORDER - 1;
    let mut hi = j - 1;
    while lo < hi {
        let mid = (lo + hi + 1) / 2;
        if t[mid] <= x {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    lo
}

/// The four nonzero cubic basis values at `x`, for basis indices
/// `span-3 ..= span`.
fn nonzero_basis(t: &[f64], span: usize, x: f64) -> [f64; ORDER] {
    let mut n = [0.0; ORDER];
    let mut left = [0.0; ORDER];
    let mut right = [0.0; ORDER];
    n[0] = 1.0;
    for d in 1..ORDER {
        left[d] = x - t[span + 1 - d];
        right[d] = t[span + d] - x;
        let mut saved = 0.0;
        for r in 0..d {
            let temp = n[r] / (right[r + 1] + left[d - r]);
            n[r] = saved + right[r + 1] * temp;
            saved = left[d - r] * temp;
        }
        n[d] = saved;
    }
    n
}

/// Evaluate the basis matrix `B` with `B[i][j] = B_j(x_i)`.
pub fn design_matrix(knots: &KnotVector, x: &[f64]) -> Result<DMatrix<f64>, BasisError> {
    let j = knots.basis_size();
    let t = knots.full();
    let mut b = DMatrix::zeros(x.len(), j);
    for (i, &xi) in x.iter().enumerate() {
        if !knots.contains(xi) {
            return Err(BasisError::OutOfRange(xi, knots.lo, knots.hi));
        }
        let span = find_span(&t, j, xi);
        let vals = nonzero_basis(&t, span, xi);
        for (d, &v) in vals.iter().enumerate() {
            b[(i, span - (ORDER - 1) + d)] = v;
        }
    }
    Ok(b)
}

/// Order-k B-spline value by the definitional recursion. The support is
/// half-open except at the right boundary, where the last interval is closed.
pub fn naive_basis(t: &[f64], idx: usize, k: usize, x: f64) -> f64 {
    let hi = t[t.len() - 1];
    if k == 1 {
        let inside = if x >= hi {
            t[idx] < hi && t[idx + 1] >= hi
        } else {
            t[idx] <= x && x < t[idx + 1]
        };
        return if inside { 1.0 } else { 0.0 };
    }
    let mut v = 0.0;
    let d1 = t[idx + k - 1] - t[idx];
    if d1 > 0.0 {
        v += (x - t[idx]) / d1 * naive_basis(t, idx, k - 1, x);
    }
    let d2 = t[idx + k] - t[idx + 1];
    if d2 > 0.0 {
        v += (t[idx + k] - x) / d2 * naive_basis(t, idx + 1, k - 1, x);
    }
    v
}

fn naive_deriv(t: &[f64], idx: usize, k: usize, x: f64) -> f64 {
    let mut v = 0.0;
    let d1 = t[idx + k - 1] - t[idx];
    if d1 > 0.0 {
        v += naive_basis(t, idx, k - 1, x) / d1;
    }
    let d2 = t[idx + k] - t[idx + 1];
    if d2 > 0.0 {
        v -= naive_basis(t, idx + 1, k - 1, x) / d2;
    }
    (k - 1) as f64 * v
}

/// Second derivative of the order-4 basis function `idx` at `x`.
pub fn naive_deriv2(t: &[f64], idx: usize, x: f64) -> f64 {
    let k = ORDER;
    let mut v = 0.0;
    let d1 = t[idx + k - 1] - t[idx];
    if d1 > 0.0 {
        v += naive_deriv(t, idx, k - 1, x) / d1;
    }
    let d2 = t[idx + k] - t[idx + 1];
    if d2 > 0.0 {
        v -= naive_deriv(t, idx + 1, k - 1, x) / d2;
    }
    (k - 1) as f64 * v
}

/// Roughness penalty `Omega[j][k] = integral of B_j'' B_k''` over `[lo, hi]`.
///
/// For cubic splines the integrand is piecewise quadratic, so two-point
/// Gauss-Legendre per knot interval integrates it exactly.
pub fn penalty_matrix(knots: &KnotVector) -> DMatrix<f64> {
    let j = knots.basis_size();
    let t = knots.full();
    let mut omega = DMatrix::zeros(j, j);
    let inv_sqrt3 = 1.0 / 3.0_f64.sqrt();
    for span in (ORDER - 1)..j {
        let (a, b) = (t[span], t[span + 1]);
        if b <= a {
            continue;
        }
        let mid = 0.5 * (a + b);
        let half = 0.5 * (b - a);
        for &node in &[mid - half * inv_sqrt3, mid + half * inv_sqrt3] {
            // only basis functions span-3..=span are supported here
            let lo_idx = span - (ORDER - 1);
            let d2: Vec<f64> = (lo_idx..=span).map(|i| naive_deriv2(&t, i, node)).collect();
            for (p, &dp) in d2.iter().enumerate() {
                for (q, &dq) in d2.iter().enumerate() {
                    omega[(lo_idx + p, lo_idx + q)] += half * dp * dq;
                }
            }
        }
    }
    // symmetrize away round-off
    for p in 0..j {
        for q in (p + 1)..j {
            let v = 0.5 * (omega[(p, q)] + omega[(q, p)]);
            omega[(p, q)] = v;
            omega[(q, p)] = v;
        }
    }
    omega
}

/// Evaluate the spline with coefficients `gamma` at the points `t`.
pub fn eval_spline(knots: &KnotVector, gamma: &DVector<f64>, t: &[f64]) -> Result<DVector<f64>, BasisError> {
    let b = design_matrix(knots, t)?;
    Ok(&b * gamma)
}
