//! Weighted linear least squares.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LsqError {
    #[error("design matrix is {rows}x{cols}; need at least as many rows as columns")]
    Underdetermined { rows: usize, cols: usize },

    #[error("design matrix is rank deficient (condition estimate {condition:e})")]
    RankDeficient { condition: f64 },

    #[error("weights must be finite and positive")]
    BadWeights,

    #[error("non-finite value in least-squares input")]
    NonFinite,
}

/// Relative singular-value floor below which the design is called singular.
pub const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct LinearFit {
    pub coefficients: DVector<f64>,
    /// `(XᵀWX)⁻¹`, the covariance when weights are inverse variances.
    pub covariance: DMatrix<f64>,
    /// Weighted residual sum of squares.
    pub chi_squared: f64,
}

/// Minimizes `Σ wᵢ (yᵢ − (Xβ)ᵢ)²` through an SVD of `√W X`.
pub fn weighted_linear_fit(x: &DMatrix<f64>, y: &DVector<f64>, w: &DVector<f64>) -> Result<LinearFit, LsqError> {
    let (rows, cols) = x.shape();
    if rows < cols || cols == 0 {
        return Err(LsqError::Underdetermined { rows, cols });
    }
    assert_eq!(y.len(), rows, "observation count");
    assert_eq!(w.len(), rows, "weight count");
    if w.iter().any(|&v| !(v.is_finite() && v > 0.0)) {
        return Err(LsqError::BadWeights);
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(LsqError::NonFinite);
    }

    let sw = w.map(f64::sqrt);
    let xw = DMatrix::from_fn(rows, cols, |i, j| x[(i, j)] * sw[i]);
    let yw = y.component_mul(&sw);

    let svd = xw.clone().svd(true, true);
    let s = &svd.singular_values;
    let s_max = s.max();
    let s_min = s.min();
    if !(s_max > 0.0) || s_min <= RANK_TOLERANCE * s_max {
        let condition = if s_min > 0.0 { s_max / s_min } else { f64::INFINITY };
        return Err(LsqError::RankDeficient { condition });
    }
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");

    let uty = u.transpose() * &yw;
    let scaled = DVector::from_fn(cols, |k, _| uty[k] / s[k]);
    let coefficients = vt.transpose() * scaled;

    let inv_s2 = DMatrix::from_diagonal(&s.map(|v| 1.0 / (v * v)));
    let covariance = vt.transpose() * inv_s2 * vt;

    let resid = &yw - &xw * &coefficients;
    Ok(LinearFit {
        coefficients,
        covariance,
        chi_squared: resid.norm_squared(),
    })
}
