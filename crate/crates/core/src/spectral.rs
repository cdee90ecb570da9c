//! Extremal spectra of Δ̃ and of layer weights, and the closed-form energy
//! bounds and limits built from them.

use faer::{Mat, Side};
use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

/// Largest n for which the dense eigensolver is attempted.
pub const DEFAULT_EIGEN_CAP: usize = 5000;

/// Eigenvalues with magnitude at or below this count as zero.
pub const ZERO_EIGEN_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralSummary {
    /// Smallest nonzero eigenvalue.
    pub lambda0: f64,
    /// Nonzero eigenvalue closest to 1; the smaller one on ties.
    pub lambda1: f64,
    pub n_zero: usize,
    pub lambda_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightSpectrum {
    /// Squared smallest singular value.
    pub s_min: f64,
    /// Squared largest singular value.
    pub s_max: f64,
}

/// All eigenvalues of a symmetric sparse matrix, ascending.
pub fn eigenvalues(m: &CsrMatrix, cap: usize) -> Result<Vec<f64>> {
    let n = m.n_rows();
    if n > cap {
        return Err(Error::SpectralUnavailable { n, cap });
    }
    let mut dense = Mat::<f64>::zeros(n, n);
    for (i, j, v) in m.iter() {
        dense[(i, j)] = v;
    }
    let mut eig = dense.selfadjoint_eigenvalues(Side::Lower);
    eig.sort_by(f64::total_cmp);
    Ok(eig)
}

/// Eigenvalues (ascending) and matching unit eigenvectors as columns.
pub fn eigen_decomposition(m: &CsrMatrix, cap: usize) -> Result<(Vec<f64>, Array2<f64>)> {
    let n = m.n_rows();
    if n > cap {
        return Err(Error::SpectralUnavailable { n, cap });
    }
    let mut dense = Mat::<f64>::zeros(n, n);
    for (i, j, v) in m.iter() {
        dense[(i, j)] = v;
    }
    let evd = dense.selfadjoint_eigendecomposition(Side::Lower);
    let s = evd.s().column_vector();
    let u = evd.u();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| s.read(a).total_cmp(&s.read(b)));
    let values = order.iter().map(|&k| s.read(k)).collect();
    let vectors = Array2::from_shape_fn((n, n), |(i, c)| u.read(i, order[c]));
    Ok((values, vectors))
}

/// Summarize an ascending eigenvalue list.
pub fn summarize_eigenvalues(eig: &[f64]) -> Result<SpectralSummary> {
    let n_zero = eig.iter().filter(|l| l.abs() <= ZERO_EIGEN_TOL).count();
    let nonzero: Vec<f64> = eig.iter().copied().filter(|l| l.abs() > ZERO_EIGEN_TOL).collect();
    let (&lambda0, &lambda_max) = match (nonzero.first(), nonzero.last()) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::NoNonzeroEigenvalues),
    };
    let mut lambda1 = nonzero[0];
    for &l in &nonzero[1..] {
        let (d, best) = ((l - 1.0).abs(), (lambda1 - 1.0).abs());
        if d < best {
            lambda1 = l;
        } else if d == best && l != lambda1 {
            log::info!("eigenvalues {lambda1} and {l} are equidistant from 1; keeping {lambda1}");
        }
    }
    Ok(SpectralSummary {
        lambda0,
        lambda1,
        n_zero,
        lambda_max,
    })
}

pub fn spectral_summary(delta_tilde: &CsrMatrix) -> Result<SpectralSummary> {
    spectral_summary_capped(delta_tilde, DEFAULT_EIGEN_CAP)
}

pub fn spectral_summary_capped(delta_tilde: &CsrMatrix, cap: usize) -> Result<SpectralSummary> {
    summarize_eigenvalues(&eigenvalues(delta_tilde, cap)?)
}

pub fn weight_spectrum(w: ArrayView2<'_, f64>) -> Result<WeightSpectrum> {
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::Contract("weight matrix has non-finite entries".into()));
    }
    if w.is_empty() {
        return Err(Error::Contract("weight matrix is empty".into()));
    }
    let m = Mat::<f64>::from_fn(w.nrows(), w.ncols(), |i, j| w[[i, j]]);
    let sv = m.singular_values();
    let (lo, hi) = sv
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &s| (lo.min(s), hi.max(s)));
    // A wide matrix has rank-deficient WᵀW; its smallest squared singular value is 0.
    let lo = if w.ncols() > w.nrows() { 0.0 } else { lo };
    Ok(WeightSpectrum {
        s_min: lo * lo,
        s_max: hi * hi,
    })
}

/// Energy bracket for a linear layer P̃XW given E(X).
pub fn lemma1_bounds(e_prev: f64, s: WeightSpectrum, spec: SpectralSummary) -> (f64, f64) {
    let lower = (1.0 - spec.lambda1).powi(2) * s.s_min * e_prev;
    let upper = (1.0 - spec.lambda0).powi(2) * s.s_max * e_prev;
    (lower, upper)
}

/// Relaxed upper bound with λ₀ → 0.
pub fn relaxed_upper(e_prev: f64, s: WeightSpectrum) -> f64 {
    s.s_max * e_prev
}

/// Constrained-learning band [c_min·E(k−1), c_max·E(0)].
pub fn prop1_limits(e0: f64, e_prev: f64, c_min: f64, c_max: f64) -> (f64, f64) {
    (c_min * e_prev, c_max * e0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Undefined,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::Undefined => "undefined (denominator zero)",
        }
    }

    pub fn passed(self) -> bool {
        self == Verdict::Pass
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub verdict: Verdict,
    pub lhs: f64,
    /// None when the right-hand side is undefined.
    pub rhs: Option<f64>,
}

/// Lower-limit (c_max ≥ c_min/(2c_min−1)²) and upper-limit
/// (√c_max ≥ β/((1−c_min)λ₀+β)) preconditions of the residual layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreconditionReport {
    pub lower_limit: Condition,
    pub upper_limit: Condition,
}

impl PreconditionReport {
    pub fn all_pass(&self) -> bool {
        self.lower_limit.verdict.passed() && self.upper_limit.verdict.passed()
    }
}

pub fn check_preconditions(c_min: f64, c_max: f64, beta: f64, lambda0: f64) -> PreconditionReport {
    let denom = (2.0 * c_min - 1.0).powi(2);
    let lower_limit = if denom == 0.0 {
        Condition {
            verdict: Verdict::Undefined,
            lhs: c_max,
            rhs: None,
        }
    } else {
        let rhs = c_min / denom;
        Condition {
            verdict: if c_max >= rhs { Verdict::Pass } else { Verdict::Fail },
            lhs: c_max,
            rhs: Some(rhs),
        }
    };
    let lhs = c_max.sqrt();
    let d = (1.0 - c_min) * lambda0 + beta;
    let upper_limit = if d == 0.0 {
        // β = 0 and λ₀ = 0 (or c_min = 1): the fraction is 0/0.
        Condition {
            verdict: Verdict::Undefined,
            lhs,
            rhs: None,
        }
    } else {
        let rhs = beta / d;
        Condition {
            verdict: if lhs >= rhs { Verdict::Pass } else { Verdict::Fail },
            lhs,
            rhs: Some(rhs),
        }
    };
    PreconditionReport {
        lower_limit,
        upper_limit,
    }
}

/// Smallest |λ| of Q = (1−c_min)P̃ + αI from the eigenvalues of Δ̃.
pub fn residual_operator_min_abs_eigenvalue(delta_eigs: &[f64], c_min: f64, alpha: f64) -> f64 {
    delta_eigs
        .iter()
        .map(|l| ((1.0 - c_min) * (1.0 - l) + alpha).abs())
        .fold(f64::INFINITY, f64::min)
}
