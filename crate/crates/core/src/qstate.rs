//! Two-photon polarization states and their measurement statistics.
//!
//! States of the form
//!
//! ```text
//! ρ = p|ψ⟩⟨ψ| + (1 − p)/2 (|HH⟩⟨HH| + |VV⟩⟨VV|),   |ψ⟩ = √x|HH⟩ + e^{iθ}√(1−x)|VV⟩
//! ```
//!
//! are stored by their parameters and expanded into the two-qubit basis
//! (HH, HV, VH, VV) on demand. The ideal target |Φ⁻⟩ = (|HH⟩ − |VV⟩)/√2 is
//! p = 1, x = ½, θ = π.
//!
//! Polarizer angles are in degrees with 0° = H, 45° = D, 90° = V, −45° = A.
//! Circular analyzers follow L = (|H⟩ + i|V⟩)/√2.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use nalgebra::{Matrix4, Vector2, Vector4};
use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StateError {
    #[error("invalid state parameter: {0}")]
    Parameter(String),

    #[error("not a density matrix: {0}")]
    MatrixDomain(String),

    #[error("visibility undefined when maximum and minimum are both zero")]
    UndefinedVisibility,

    #[error("invalid visibility input: {0}")]
    Visibility(String),
}

const HERMITIAN_TOL: f64 = 1e-12;
const TRACE_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoPhotonState {
    p: f64,
    x: f64,
    theta: f64,
}

impl TwoPhotonState {
    /// `theta` is reduced to (−π, π].
    pub fn new(p: f64, x: f64, theta: f64) -> Result<Self, StateError> {
        if !(0.0..=1.0).contains(&p) {
            return Err(StateError::Parameter(format!("purity p = {p} outside [0, 1]")));
        }
        if !(0.0..=1.0).contains(&x) {
            return Err(StateError::Parameter(format!("balance x = {x} outside [0, 1]")));
        }
        if !theta.is_finite() {
            return Err(StateError::Parameter(format!("phase theta = {theta}")));
        }
        Ok(Self {
            p,
            x,
            theta: crate::phasecomp::wrap_phase(theta),
        })
    }

    pub fn phi_minus() -> Self {
        Self { p: 1.0, x: 0.5, theta: PI }
    }

    pub fn phi_plus() -> Self {
        Self { p: 1.0, x: 0.5, theta: 0.0 }
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// Imbalance `p(2x − 1)`.
    pub fn imbalance(&self) -> f64 {
        self.p * (2.0 * self.x - 1.0)
    }

    /// Coherence `2p√(x(1−x))·cos θ`, the HH–VV interference term.
    pub fn coherence(&self) -> f64 {
        2.0 * self.p * (self.x * (1.0 - self.x)).sqrt() * self.theta.cos()
    }

    pub fn to_density_matrix(&self) -> DensityMatrix4 {
        let mut m = Matrix4::<Complex64>::zeros();
        let (p, x) = (self.p, self.x);
        let off = Complex64::from_polar(p * (x * (1.0 - x)).sqrt(), -self.theta);
        m[(0, 0)] = Complex64::new(p * x + 0.5 * (1.0 - p), 0.0);
        m[(3, 3)] = Complex64::new(p * (1.0 - x) + 0.5 * (1.0 - p), 0.0);
        m[(0, 3)] = off;
        m[(3, 0)] = off.conj();
        DensityMatrix4(m)
    }

    /// Coefficients `(A, B, C)` of `A cos⁴α + B sin⁴α + C cos²α sin²α`, the
    /// pair transmission through one polarizer acting on both photons.
    pub fn polarizer_coefficients(&self) -> (f64, f64, f64) {
        let a = self.imbalance();
        (0.5 * (1.0 + a), 0.5 * (1.0 - a), self.coherence())
    }
}

/// Probability that both photons pass a single polarizer at `angle_deg`.
pub fn single_polarizer_rate(state: &TwoPhotonState, angle_deg: f64) -> f64 {
    let (c, s) = {
        let (s, c) = angle_deg.to_radians().sin_cos();
        (c * c, s * s)
    };
    let amp = Complex64::new(state.x.sqrt() * c, 0.0)
        + Complex64::from_polar((1.0 - state.x).sqrt() * s, state.theta);
    state.p * amp.norm_sqr() + 0.5 * (1.0 - state.p) * (c * c + s * s)
}

/// Analyzer family for one arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnalyzerBasis {
    /// cos β|H⟩ + sin β|V⟩.
    Linear,
    /// cos β|H⟩ + i sin β|V⟩; β = 45° is L, −45° is R.
    Circular,
}

pub fn analyzer_vector(angle_deg: f64, basis: AnalyzerBasis) -> Vector2<Complex64> {
    let (s, c) = angle_deg.to_radians().sin_cos();
    match basis {
        AnalyzerBasis::Linear => Vector2::new(Complex64::new(c, 0.0), Complex64::new(s, 0.0)),
        AnalyzerBasis::Circular => Vector2::new(Complex64::new(c, 0.0), Complex64::new(0.0, s)),
    }
}

/// Two-analyzer correlation bases. Each fixes the signal analyzer and
/// sweeps the idler analyzer through the same family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CorrelationBasis {
    /// Signal at H, linear idler sweep.
    HV,
    /// Signal at D, linear idler sweep.
    DA,
    /// Signal at L, circular idler sweep.
    LR,
}

impl CorrelationBasis {
    pub const ALL: [CorrelationBasis; 3] = [Self::HV, Self::DA, Self::LR];

    /// `(signal angle in degrees, analyzer family)`.
    pub fn fixed_analyzer(self) -> (f64, AnalyzerBasis) {
        match self {
            Self::HV => (0.0, AnalyzerBasis::Linear),
            Self::DA => (45.0, AnalyzerBasis::Linear),
            Self::LR => (45.0, AnalyzerBasis::Circular),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::HV => "H/V",
            Self::DA => "D/A",
            Self::LR => "L/R",
        }
    }
}

/// Probability that the signal photon alone passes an analyzer at
/// `angle_deg`. States of this family have no HV/VH coherence, so the
/// reduced state is diagonal and the result is the same for both families.
pub fn marginal_pass_probability(state: &TwoPhotonState, angle_deg: f64) -> f64 {
    let (s, c) = angle_deg.to_radians().sin_cos();
    let h = state.p * state.x + 0.5 * (1.0 - state.p);
    h * c * c + (1.0 - h) * s * s
}

/// Coincidence probability with independent analyzers on signal (`beta`)
/// and idler (`gamma`), both from the same family.
pub fn two_polarizer_rate(state: &TwoPhotonState, beta_deg: f64, gamma_deg: f64, basis: AnalyzerBasis) -> f64 {
    let a = analyzer_vector(beta_deg, basis);
    let b = analyzer_vector(gamma_deg, basis);
    state.to_density_matrix().expectation(&product(&a, &b))
}

fn product(a: &Vector2<Complex64>, b: &Vector2<Complex64>) -> Vector4<Complex64> {
    Vector4::new(a[0] * b[0], a[0] * b[1], a[1] * b[0], a[1] * b[1])
}

/// `(max − min)/(max + min)`.
pub fn visibility(max: f64, min: f64) -> Result<f64, StateError> {
    if max == 0.0 && min == 0.0 {
        return Err(StateError::UndefinedVisibility);
    }
    if !(max >= min && min >= 0.0) {
        return Err(StateError::Visibility(format!("need max >= min >= 0, got max = {max}, min = {min}")));
    }
    Ok((max - min) / (max + min))
}

/// `√(¼(1 + V_HV + V_DA + V_LR))`.
pub fn fidelity_from_visibilities(v_hv: f64, v_da: f64, v_lr: f64) -> Result<f64, StateError> {
    for v in [v_hv, v_da, v_lr] {
        if !(-1.0..=1.0).contains(&v) {
            return Err(StateError::Visibility(format!("visibility {v} outside [-1, 1]")));
        }
    }
    let arg = 0.25 * (1.0 + v_hv + v_da + v_lr);
    if arg < 0.0 {
        return Err(StateError::Visibility(format!("negative fidelity argument {arg}")));
    }
    Ok(arg.sqrt())
}

/// A validated two-qubit density matrix over (HH, HV, VH, VV).
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix4(Matrix4<Complex64>);

impl DensityMatrix4 {
    /// Checks Hermiticity, unit trace and positivity.
    pub fn new(m: Matrix4<Complex64>) -> Result<Self, StateError> {
        let herm = (m - m.adjoint()).iter().fold(0.0f64, |a, z| a.max(z.norm()));
        if herm > HERMITIAN_TOL {
            return Err(StateError::MatrixDomain(format!("not Hermitian (deviation {herm:e})")));
        }
        let tr = m.trace();
        if (tr - Complex64::new(1.0, 0.0)).norm() > TRACE_TOL {
            return Err(StateError::MatrixDomain(format!("trace {tr} != 1")));
        }
        let min_eig = m.symmetric_eigenvalues().min();
        if min_eig < -PSD_TOL {
            return Err(StateError::MatrixDomain(format!("negative eigenvalue {min_eig:e}")));
        }
        Ok(Self(m))
    }

    pub fn pure(psi: &Vector4<Complex64>) -> Result<Self, StateError> {
        let n = psi.norm();
        if n == 0.0 {
            return Err(StateError::MatrixDomain("zero state vector".into()));
        }
        let v = psi / Complex64::new(n, 0.0);
        Self::new(v * v.adjoint())
    }

    pub fn phi_minus() -> Self {
        let h = Complex64::new(FRAC_1_SQRT_2, 0.0);
        Self::pure(&Vector4::new(h, Complex64::default(), Complex64::default(), -h)).expect("valid")
    }

    pub fn phi_plus() -> Self {
        let h = Complex64::new(FRAC_1_SQRT_2, 0.0);
        Self::pure(&Vector4::new(h, Complex64::default(), Complex64::default(), h)).expect("valid")
    }

    pub fn matrix(&self) -> &Matrix4<Complex64> {
        &self.0
    }

    /// `⟨v|ρ|v⟩` for an unnormalized projector vector.
    pub fn expectation(&self, v: &Vector4<Complex64>) -> f64 {
        (v.adjoint() * self.0 * v)[(0, 0)].re
    }

    /// Checks the same invariants as [`DensityMatrix4::new`].
    pub fn validate(&self) -> Result<(), StateError> {
        Self::new(self.0).map(|_| ())
    }

    /// Principal square root. Eigenvalues below [`SQRT_CUTOFF`] of the
    /// largest are treated as zero so round-off in the null space does not
    /// leak into the root as √ε.
    fn sqrt(&self) -> Matrix4<Complex64> {
        let eig = self.0.symmetric_eigen();
        let cutoff = SQRT_CUTOFF * eig.eigenvalues.max().max(0.0);
        let roots = eig
            .eigenvalues
            .map(|l| Complex64::new(if l > cutoff { l.sqrt() } else { 0.0 }, 0.0));
        let v = eig.eigenvectors;
        v * Matrix4::from_diagonal(&roots) * v.adjoint()
    }
}

const SQRT_CUTOFF: f64 = 1e-13;

/// Uhlmann fidelity `Tr √(√ρ σ √ρ)`, evaluated as the sum of singular values
/// of `√σ √ρ` (the same quantity without squaring the round-off).
pub fn fidelity_trace(rho: &DensityMatrix4, sigma: &DensityMatrix4) -> f64 {
    let product = sigma.sqrt() * rho.sqrt();
    product.singular_values().sum().min(1.0)
}
