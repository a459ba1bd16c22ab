//! Fidelity estimation from polarization-correlation sweeps.
//!
//! A single polarizer in front of both photons gives
//!
//! ```text
//! R(α) = N·[(1 + a)/2·cos⁴α + (1 − a)/2·sin⁴α + b·cos²α·sin²α]
//! ```
//!
//! with `a = p(2x − 1)` and `b = 2p√(x(1−x))·cos θ`. Only `(N, a, b)` are
//! identifiable, so the fit works in those coordinates. The model is linear
//! in `(N, N·a, N·b)`, which makes the weighted least-squares optimum a
//! closed-form solve; estimates outside the physical disk `a² + b² ≤ 1` are
//! replaced by the best weighted fit on its boundary. Fidelity to |Φ⁻⟩ is
//! `√((1 − b)/2)`.
//!
//! Uncertainties come from a parametric Poisson bootstrap. Resample `k`
//! draws from a ChaCha8 stream keyed by `(seed, k)`, so results do not depend
//! on evaluation order or thread count.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
#[cfg(feature = "parallel")]
use rayon::prelude::*;
use thiserror::Error;

use crate::lsq::{weighted_linear_fit, LsqError};
use crate::qstate::{fidelity_from_visibilities, CorrelationBasis, StateError, TwoPhotonState};
use crate::scalar::golden_section_minimize;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("invalid measurement record: {0}")]
    InvalidRecord(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("bootstrap needs at least {min} resamples, got {0}", min = MIN_BOOTSTRAP)]
    BootstrapTooSmall(usize),

    #[error("bootstrap unstable: {failed} of {total} resample fits failed")]
    BootstrapUnstable { failed: usize, total: usize },

    #[error("constraint not satisfiable: {0}")]
    Constraint(String),

    #[error(transparent)]
    State(#[from] StateError),
}

pub const MIN_DISTINCT_ANGLES: usize = 8;
pub const MIN_ANGLE_SPAN_DEG: f64 = 135.0;
pub const MIN_BOOTSTRAP: usize = 100;
/// Fraction of failed resample fits above which a bootstrap is rejected.
pub const MAX_BOOTSTRAP_FAILURE: f64 = 0.1;
/// Central interval reported by the bootstrap.
pub const CI_LEVEL: f64 = 0.68;

#[derive(Debug, Clone, PartialEq)]
pub struct Singles {
    pub signal: Vec<u64>,
    pub idler: Vec<u64>,
}

/// Counts at a list of analyzer angles. For two-polarizer sweeps the angle is
/// the idler analyzer setting.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementRecord {
    pub angles_deg: Vec<f64>,
    pub coincidences: Vec<u64>,
    pub integration_s: Vec<f64>,
    pub singles: Option<Singles>,
}

impl MeasurementRecord {
    pub fn len(&self) -> usize {
        self.angles_deg.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles_deg.is_empty()
    }

    pub fn validate(&self) -> Result<(), FitError> {
        let n = self.angles_deg.len();
        if self.coincidences.len() != n || self.integration_s.len() != n {
            return Err(FitError::InvalidRecord(format!(
                "column lengths differ: {} angles, {} coincidences, {} integration times",
                n,
                self.coincidences.len(),
                self.integration_s.len()
            )));
        }
        if let Some(s) = &self.singles {
            if s.signal.len() != n || s.idler.len() != n {
                return Err(FitError::InvalidRecord("singles columns differ in length from angles".into()));
            }
        }
        if let Some(a) = self.angles_deg.iter().find(|a| !a.is_finite()) {
            return Err(FitError::InvalidRecord(format!("non-finite angle {a}")));
        }
        if let Some(t) = self.integration_s.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
            return Err(FitError::InvalidRecord(format!("integration time {t} s must be positive")));
        }

        // Settings 180° apart are the same polarizer orientation.
        let mut reduced: Vec<f64> = self.angles_deg.iter().map(|a| a.rem_euclid(180.0)).collect();
        reduced.sort_by(f64::total_cmp);
        reduced.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
        if reduced.len() > 1 && (reduced[0] + 180.0 - reduced[reduced.len() - 1]).abs() < 1e-9 {
            reduced.pop();
        }
        if reduced.len() < 3 {
            return Err(FitError::DegenerateInput(format!(
                "only {} distinct polarizer orientation(s); the three-parameter curve is not determined",
                reduced.len()
            )));
        }
        if reduced.len() < MIN_DISTINCT_ANGLES {
            return Err(FitError::InvalidRecord(format!(
                "{} distinct angles, need at least {MIN_DISTINCT_ANGLES}",
                reduced.len()
            )));
        }
        let (lo, hi) = self
            .angles_deg
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &a| (l.min(a), h.max(a)));
        if hi - lo < MIN_ANGLE_SPAN_DEG {
            return Err(FitError::InvalidRecord(format!(
                "angles span {:.1}°, need at least {MIN_ANGLE_SPAN_DEG}°",
                hi - lo
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Coincidence window for the accidental estimate `S₁·S₂·τ`.
    pub coincidence_window_s: f64,
    /// Subtract accidentals when the record carries singles.
    pub subtract_accidentals: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            coincidence_window_s: 4e-9,
            subtract_accidentals: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub a: f64,
    pub b: f64,
    /// Pair counts per point at full transmission (`N`).
    pub amplitude: f64,
    /// Fidelity to |Φ⁻⟩.
    pub fidelity: f64,
    /// Central 68% bootstrap interval, when a bootstrap was run.
    pub ci_fidelity: Option<(f64, f64)>,
    /// Bootstrap standard deviation of the fidelity.
    pub fidelity_se: Option<f64>,
    pub n_bootstrap: usize,
    pub converged: bool,
    /// The unconstrained optimum lay outside `a² + b² ≤ 1`.
    pub projected: bool,
    /// Weighted residual sum of squares at the reported point.
    pub chi_squared: f64,
}

/// Fidelity to |Φ⁻⟩ from the coherence coordinate `b`.
pub fn fidelity_from_coherence(b: f64) -> f64 {
    (0.5 * (1.0 - b)).max(0.0).sqrt()
}

/// Which extra condition pins down `(p, x, θ)` from the identifiable `(a, b)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateConstraint {
    /// `p = 1`; θ is reported in `[0, π]` (its sign is not observable).
    Pure,
    /// `θ = π`.
    PhaseMinus,
}

impl StateConstraint {
    pub fn label(self) -> &'static str {
        match self {
            Self::Pure => "assuming p = 1",
            Self::PhaseMinus => "assuming theta = pi",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstrainedState {
    pub constraint: StateConstraint,
    pub state: TwoPhotonState,
}

impl FitResult {
    pub fn constrained_state(&self, constraint: StateConstraint) -> Result<ConstrainedState, FitError> {
        let (a, b) = (self.a, self.b);
        let state = match constraint {
            StateConstraint::Pure => {
                let room = (1.0 - a * a).max(0.0).sqrt();
                let cos_t = if room > 0.0 { (b / room).clamp(-1.0, 1.0) } else { -1.0 };
                TwoPhotonState::new(1.0, (0.5 * (1.0 + a)).clamp(0.0, 1.0), cos_t.acos())?
            }
            StateConstraint::PhaseMinus => {
                if b > 1e-12 {
                    return Err(FitError::Constraint(format!("b = {b} > 0 cannot arise with theta = pi")));
                }
                let p = a.hypot(b).min(1.0);
                let x = if p > 0.0 { (0.5 * (1.0 + a / p)).clamp(0.0, 1.0) } else { 0.5 };
                TwoPhotonState::new(p, x, std::f64::consts::PI)?
            }
        };
        Ok(ConstrainedState { constraint, state })
    }
}

/// Basis functions `(½(c⁴ + s⁴), ½(c⁴ − s⁴), c²s²)` at `angle_deg`.
fn basis_row(angle_deg: f64) -> [f64; 3] {
    let (s, c) = angle_deg.to_radians().sin_cos();
    let (c2, s2) = (c * c, s * s);
    [0.5 * (c2 * c2 + s2 * s2), 0.5 * (c2 * c2 - s2 * s2), c2 * s2]
}

/// Model value `N·[(1 + a)/2 cos⁴ + (1 − a)/2 sin⁴ + b c² s²]`.
pub fn single_polarizer_model(amplitude: f64, a: f64, b: f64, angle_deg: f64) -> f64 {
    let g = basis_row(angle_deg);
    amplitude * (g[0] + a * g[1] + b * g[2])
}

/// Counts after accidental subtraction, and the Poisson weights of the raw
/// counts.
fn prepared(rec: &MeasurementRecord, counts: &[u64], opts: &FitOptions) -> (DVector<f64>, DVector<f64>) {
    let n = rec.len();
    let y = DVector::from_fn(n, |i, _| {
        let raw = counts[i] as f64;
        match (&rec.singles, opts.subtract_accidentals) {
            (Some(s), true) => {
                raw - s.signal[i] as f64 * s.idler[i] as f64 * opts.coincidence_window_s / rec.integration_s[i]
            }
            _ => raw,
        }
    });
    let w = DVector::from_fn(n, |i, _| 1.0 / (counts[i] as f64).max(1.0));
    (y, w)
}

fn fit_counts(rec: &MeasurementRecord, counts: &[u64], opts: &FitOptions) -> Result<FitResult, FitError> {
    let n = rec.len();
    let (y, w) = prepared(rec, counts, opts);
    let rows: Vec<[f64; 3]> = rec.angles_deg.iter().map(|&a| basis_row(a)).collect();
    let x = DMatrix::from_fn(n, 3, |i, j| rows[i][j]);

    let lin = weighted_linear_fit(&x, &y, &w).map_err(|e| match e {
        LsqError::RankDeficient { .. } => FitError::DegenerateInput(e.to_string()),
        other => FitError::InvalidRecord(other.to_string()),
    })?;
    let beta = &lin.coefficients;
    let amplitude = beta[0];
    if !(amplitude > 0.0) {
        return Err(FitError::DegenerateInput(format!(
            "fitted amplitude {amplitude} is not positive; no pair signal"
        )));
    }
    let (a, b) = (beta[1] / amplitude, beta[2] / amplitude);
    if a * a + b * b <= 1.0 {
        return Ok(FitResult {
            a,
            b,
            amplitude,
            fidelity: fidelity_from_coherence(b),
            ci_fidelity: None,
            fidelity_se: None,
            n_bootstrap: 0,
            converged: true,
            projected: false,
            chi_squared: lin.chi_squared,
        });
    }

    // Boundary a = cos φ, b = sin φ with the amplitude profiled out.
    let profile = |phi: f64| -> (f64, f64) {
        let (sp, cp) = phi.sin_cos();
        let (mut gy, mut gg) = (0.0, 0.0);
        for i in 0..n {
            let g = rows[i][0] + cp * rows[i][1] + sp * rows[i][2];
            gy += w[i] * g * y[i];
            gg += w[i] * g * g;
        }
        let amp = if gg > 0.0 { (gy / gg).max(0.0) } else { 0.0 };
        let cost = (0..n)
            .map(|i| {
                let g = rows[i][0] + cp * rows[i][1] + sp * rows[i][2];
                w[i] * (y[i] - amp * g).powi(2)
            })
            .sum();
        (amp, cost)
    };
    const SCAN: usize = 720;
    let step = std::f64::consts::TAU / SCAN as f64;
    let start = b.atan2(a);
    let best = (0..SCAN)
        .map(|k| start - std::f64::consts::PI + k as f64 * step)
        .min_by(|p, q| profile(*p).1.total_cmp(&profile(*q).1))
        .expect("non-empty scan");
    let (phi, _) = golden_section_minimize(|p| profile(p).1, best - step, best + step, 1e-12);
    let (amplitude, chi_squared) = profile(phi);
    if !(amplitude > 0.0) {
        return Err(FitError::DegenerateInput("no positive amplitude on the physical boundary".into()));
    }
    let (b, a) = phi.sin_cos();
    Ok(FitResult {
        a,
        b,
        amplitude,
        fidelity: fidelity_from_coherence(b),
        ci_fidelity: None,
        fidelity_se: None,
        n_bootstrap: 0,
        converged: true,
        projected: true,
        chi_squared,
    })
}

/// Weighted least-squares fit with default options.
pub fn fit_single_polarizer(rec: &MeasurementRecord) -> Result<FitResult, FitError> {
    fit_single_polarizer_with(rec, &FitOptions::default())
}

pub fn fit_single_polarizer_with(rec: &MeasurementRecord, opts: &FitOptions) -> Result<FitResult, FitError> {
    rec.validate()?;
    fit_counts(rec, &rec.coincidences, opts)
}

/// The generator for resample `index` under `seed`.
pub fn resample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn poisson_draw(mean: f64, rng: &mut ChaCha8Rng) -> u64 {
    if mean > 0.0 {
        Poisson::new(mean).expect("finite positive mean").sample(rng) as u64
    } else {
        0
    }
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Point fit plus `n` parametric Poisson resamples.
pub fn bootstrap(rec: &MeasurementRecord, n: usize, seed: u64) -> Result<FitResult, FitError> {
    bootstrap_with(rec, n, seed, &FitOptions::default())
}

pub fn bootstrap_with(rec: &MeasurementRecord, n: usize, seed: u64, opts: &FitOptions) -> Result<FitResult, FitError> {
    if n < MIN_BOOTSTRAP {
        return Err(FitError::BootstrapTooSmall(n));
    }
    let mut result = fit_single_polarizer_with(rec, opts)?;

    let one = |k: usize| -> Option<f64> {
        let mut rng = resample_rng(seed, k as u64);
        let counts: Vec<u64> = rec.coincidences.iter().map(|&c| poisson_draw(c as f64, &mut rng)).collect();
        fit_counts(rec, &counts, opts).ok().map(|f| f.fidelity)
    };
    #[cfg(feature = "parallel")]
    let draws: Vec<Option<f64>> = (0..n).into_par_iter().map(one).collect();
    #[cfg(not(feature = "parallel"))]
    let draws: Vec<Option<f64>> = (0..n).map(one).collect();

    let mut fids: Vec<f64> = draws.into_iter().flatten().collect();
    let failed = n - fids.len();
    if failed as f64 > MAX_BOOTSTRAP_FAILURE * n as f64 {
        return Err(FitError::BootstrapUnstable { failed, total: n });
    }
    let m = fids.len() as f64;
    let mean = fids.iter().sum::<f64>() / m;
    let var = fids.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / (m - 1.0);
    fids.sort_by(f64::total_cmp);
    let tail = 0.5 * (1.0 - CI_LEVEL);
    result.ci_fidelity = Some((percentile(&fids, tail), percentile(&fids, 1.0 - tail)));
    result.fidelity_se = Some(var.sqrt());
    result.n_bootstrap = n;
    Ok(result)
}

/// Fisher information of the over-parameterized model `(N, p, x, θ)` with
/// variances `max(mean, 1)`. It has rank at most three.
pub fn state_fisher_information(state: &TwoPhotonState, amplitude: f64, angles_deg: &[f64]) -> DMatrix<f64> {
    let (p, x, t) = (state.p(), state.x(), state.theta());
    let a = state.imbalance();
    let b = state.coherence();
    let r = (x * (1.0 - x)).sqrt();
    let da = [2.0 * x - 1.0, 2.0 * p, 0.0];
    let db = if r > 0.0 {
        [2.0 * r * t.cos(), p * (1.0 - 2.0 * x) / r * t.cos(), -2.0 * p * r * t.sin()]
    } else {
        [0.0, 0.0, 0.0]
    };
    let mut info = DMatrix::zeros(4, 4);
    for &ang in angles_deg {
        let g = basis_row(ang);
        let mean = amplitude * (g[0] + a * g[1] + b * g[2]);
        let grad = [
            g[0] + a * g[1] + b * g[2],
            amplitude * (g[1] * da[0] + g[2] * db[0]),
            amplitude * (g[1] * da[1] + g[2] * db[1]),
            amplitude * (g[1] * da[2] + g[2] * db[2]),
        ];
        let w = 1.0 / mean.max(1.0);
        for i in 0..4 {
            for j in 0..4 {
                info[(i, j)] += w * grad[i] * grad[j];
            }
        }
    }
    info
}

/// A two-analyzer sweep in one correlation basis.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisSweep {
    pub basis: CorrelationBasis,
    pub record: MeasurementRecord,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasisVisibility {
    pub basis: CorrelationBasis,
    pub visibility: f64,
    pub se: f64,
    /// Fitted visibility exceeded one.
    pub unphysical: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoPolarizerResult {
    pub visibilities: Vec<BasisVisibility>,
    /// Computed with unphysical visibilities clamped to one.
    pub fidelity: f64,
    pub fidelity_se: f64,
    pub unphysical: bool,
}

/// Fits `c₀ + c₁ cos 2γ + s₁ sin 2γ` and returns `(V, σ_V)` with
/// `V = √(c₁² + s₁²)/c₀`.
pub fn sweep_visibility(rec: &MeasurementRecord, opts: &FitOptions) -> Result<(f64, f64), FitError> {
    rec.validate()?;
    let n = rec.len();
    let (y, w) = prepared(rec, &rec.coincidences, opts);
    let x = DMatrix::from_fn(n, 3, |i, j| {
        let g = 2.0 * rec.angles_deg[i].to_radians();
        match j {
            0 => 1.0,
            1 => g.cos(),
            _ => g.sin(),
        }
    });
    let fit = weighted_linear_fit(&x, &y, &w).map_err(|e| FitError::DegenerateInput(e.to_string()))?;
    let (c0, c1, s1) = (fit.coefficients[0], fit.coefficients[1], fit.coefficients[2]);
    if !(c0 > 0.0) {
        return Err(FitError::DegenerateInput(format!("mean coincidence level {c0} is not positive")));
    }
    let r = c1.hypot(s1);
    let v = r / c0;
    let grad = if r > 0.0 {
        DVector::from_row_slice(&[-v / c0, c1 / (r * c0), s1 / (r * c0)])
    } else {
        DVector::from_row_slice(&[0.0, 1.0 / c0, 0.0])
    };
    let var = (grad.transpose() * &fit.covariance * &grad)[(0, 0)];
    Ok((v, var.max(0.0).sqrt()))
}

/// Fidelity from H/V, D/A and L/R visibilities, with error propagation.
pub fn fidelity_from_two_polarizer(sweeps: &[BasisSweep], opts: &FitOptions) -> Result<TwoPolarizerResult, FitError> {
    let mut visibilities = Vec::with_capacity(3);
    for basis in CorrelationBasis::ALL {
        let mut matching = sweeps.iter().filter(|s| s.basis == basis);
        let sweep = matching
            .next()
            .ok_or_else(|| FitError::InvalidRecord(format!("missing {} sweep", basis.label())))?;
        if matching.next().is_some() {
            return Err(FitError::InvalidRecord(format!("more than one {} sweep", basis.label())));
        }
        let (visibility, se) = sweep_visibility(&sweep.record, opts)?;
        visibilities.push(BasisVisibility {
            basis,
            visibility,
            se,
            unphysical: visibility > 1.0,
        });
    }
    let v: Vec<f64> = visibilities.iter().map(|b| b.visibility.min(1.0)).collect();
    let fidelity = fidelity_from_visibilities(v[0], v[1], v[2])?;
    let spread = visibilities.iter().map(|b| b.se * b.se).sum::<f64>().sqrt();
    let fidelity_se = if fidelity > 0.0 { spread / (8.0 * fidelity) } else { f64::INFINITY };
    Ok(TwoPolarizerResult {
        unphysical: visibilities.iter().any(|b| b.unphysical),
        visibilities,
        fidelity,
        fidelity_se,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qstate::{fidelity_trace, single_polarizer_rate, two_polarizer_rate, DensityMatrix4};
    use std::f64::consts::PI;

    fn grid() -> Vec<f64> {
        (-9..=9).map(|k| 10.0 * k as f64).collect()
    }

    fn noiseless(state: &TwoPhotonState, scale: f64) -> MeasurementRecord {
        let angles = grid();
        MeasurementRecord {
            coincidences: angles
                .iter()
                .map(|&a| (scale * single_polarizer_rate(state, a)).round() as u64)
                .collect(),
            integration_s: vec![1.0; angles.len()],
            angles_deg: angles,
            singles: None,
        }
    }

    #[test]
    fn recovers_bell_states() {
        let f = fit_single_polarizer(&noiseless(&TwoPhotonState::phi_minus(), 1e8)).unwrap();
        assert!(f.a.abs() < 1e-6 && (f.b + 1.0).abs() < 1e-6, "{f:?}");
        assert!((f.fidelity - 1.0).abs() < 1e-6);
        let f = fit_single_polarizer(&noiseless(&TwoPhotonState::phi_plus(), 1e8)).unwrap();
        assert!(f.a.abs() < 1e-6 && (f.b - 1.0).abs() < 1e-6);
        assert!(f.fidelity < 1e-3);
    }

    #[test]
    fn noiseless_fit_is_exact_for_generic_state() {
        let s = TwoPhotonState::new(0.83, 0.37, 2.2).unwrap();
        let angles = grid();
        let rec = MeasurementRecord {
            coincidences: vec![0; angles.len()],
            integration_s: vec![1.0; angles.len()],
            angles_deg: angles.clone(),
            singles: None,
        };
        let y: Vec<u64> = angles.iter().map(|&a| (1e12 * single_polarizer_rate(&s, a)).round() as u64).collect();
        let f = fit_counts(&rec, &y, &FitOptions::default()).unwrap();
        assert!((f.a - s.imbalance()).abs() < 1e-9);
        assert!((f.b - s.coherence()).abs() < 1e-9);
        assert!(!f.projected);
    }

    #[test]
    fn unphysical_estimates_are_projected() {
        // A curve deeper than any physical state: zero at ±45° and above
        // the Φ⁻ shape elsewhere.
        let angles = grid();
        let counts = angles
            .iter()
            .map(|&a: &f64| (1000.0 * (2.0 * a.to_radians()).cos().powi(2) * (1.0 + 0.3 * (4.0 * a.to_radians()).cos().powi(2))) as u64)
            .collect();
        let rec = MeasurementRecord {
            coincidences: counts,
            integration_s: vec![1.0; angles.len()],
            angles_deg: angles,
            singles: None,
        };
        let f = fit_single_polarizer(&rec).unwrap();
        assert!(f.projected);
        assert!(f.a * f.a + f.b * f.b <= 1.0 + 1e-9);
        // Boundary optimum beats nearby boundary points.
        let (_, w) = prepared(&rec, &rec.coincidences, &FitOptions::default());
        let cost = |a: f64, b: f64, amp: f64| -> f64 {
            rec.angles_deg
                .iter()
                .enumerate()
                .map(|(i, &ang)| w[i] * (rec.coincidences[i] as f64 - single_polarizer_model(amp, a, b, ang)).powi(2))
                .sum()
        };
        let phi = f.b.atan2(f.a);
        for d in [-0.01, 0.01] {
            let (b, a) = (phi + d).sin_cos();
            for s in [0.99, 1.0, 1.01] {
                assert!(cost(a, b, f.amplitude * s) >= f.chi_squared - 1e-9);
            }
        }
    }

    #[test]
    fn record_validation() {
        let mut rec = noiseless(&TwoPhotonState::phi_minus(), 1000.0);
        rec.angles_deg = vec![10.0; rec.len()];
        assert!(matches!(fit_single_polarizer(&rec), Err(FitError::DegenerateInput(_))));

        let rec = MeasurementRecord {
            angles_deg: (0..8).map(|k| 10.0 * k as f64).collect(),
            coincidences: vec![5; 8],
            integration_s: vec![1.0; 8],
            singles: None,
        };
        assert!(matches!(rec.validate(), Err(FitError::InvalidRecord(_))));

        let mut rec = noiseless(&TwoPhotonState::phi_minus(), 1000.0);
        rec.coincidences.pop();
        assert!(matches!(rec.validate(), Err(FitError::InvalidRecord(_))));

        let mut rec = noiseless(&TwoPhotonState::phi_minus(), 1000.0);
        rec.integration_s[3] = 0.0;
        assert!(rec.validate().is_err());
    }

    #[test]
    fn zero_counts_rejected() {
        let rec = noiseless(&TwoPhotonState::phi_minus(), 0.0);
        assert!(matches!(fit_single_polarizer(&rec), Err(FitError::DegenerateInput(_))));
    }

    #[test]
    fn accidentals_subtracted_when_singles_given() {
        let s = TwoPhotonState::phi_minus();
        let mut rec = noiseless(&s, 1e6);
        let acc_per_point = 1e5 * 1e5 * 4e-9;
        for c in rec.coincidences.iter_mut() {
            *c += acc_per_point as u64;
        }
        rec.singles = Some(Singles {
            signal: vec![100_000; rec.len()],
            idler: vec![100_000; rec.len()],
        });
        let f = fit_single_polarizer(&rec).unwrap();
        assert!((f.fidelity - 1.0).abs() < 1e-5, "{f:?}");
        let raw = fit_single_polarizer_with(
            &rec,
            &FitOptions {
                subtract_accidentals: false,
                ..FitOptions::default()
            },
        )
        .unwrap();
        assert!(raw.fidelity < f.fidelity - 1e-5);
    }

    #[test]
    fn bootstrap_is_deterministic_and_shrinks() {
        let s = TwoPhotonState::new(0.97, 0.5, PI).unwrap();
        let rec = noiseless(&s, 6500.0);
        let a = bootstrap(&rec, 200, 7).unwrap();
        let b = bootstrap(&rec, 200, 7).unwrap();
        assert_eq!(a.ci_fidelity, b.ci_fidelity);
        assert_eq!(a.fidelity_se, b.fidelity_se);
        let (lo, hi) = a.ci_fidelity.unwrap();
        assert!(lo <= a.fidelity && a.fidelity <= hi);

        let big = bootstrap(&noiseless(&s, 650_000.0), 200, 7).unwrap();
        let w_small = hi - lo;
        let (l2, h2) = big.ci_fidelity.unwrap();
        assert!(h2 - l2 < w_small / 5.0, "{} vs {}", h2 - l2, w_small);
        assert!(matches!(bootstrap(&rec, 50, 1), Err(FitError::BootstrapTooSmall(50))));
    }

    #[test]
    fn constrained_reports() {
        let s = TwoPhotonState::new(0.9, 0.4, PI).unwrap();
        let f = fit_single_polarizer(&noiseless(&s, 1e10)).unwrap();
        let c = f.constrained_state(StateConstraint::PhaseMinus).unwrap();
        assert!((c.state.p() - 0.9).abs() < 1e-6 && (c.state.x() - 0.4).abs() < 1e-6);

        let s = TwoPhotonState::new(1.0, 0.3, 2.0).unwrap();
        let f = fit_single_polarizer(&noiseless(&s, 1e10)).unwrap();
        let c = f.constrained_state(StateConstraint::Pure).unwrap();
        assert!((c.state.x() - 0.3).abs() < 1e-6 && (c.state.theta() - 2.0).abs() < 1e-5);
        assert!(f.constrained_state(StateConstraint::PhaseMinus).is_ok());

        let plus = fit_single_polarizer(&noiseless(&TwoPhotonState::phi_plus(), 1e8)).unwrap();
        assert!(matches!(plus.constrained_state(StateConstraint::PhaseMinus), Err(FitError::Constraint(_))));
    }

    #[test]
    fn full_state_fisher_matrix_is_singular() {
        // Compare on the correlation scale so unit choices do not matter.
        fn normalized_spectrum(m: &DMatrix<f64>) -> (f64, f64) {
            let d = m.diagonal().map(|v| 1.0 / v.sqrt());
            let c = DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] * d[i] * d[j]);
            let e = c.symmetric_eigen().eigenvalues;
            (e.min(), e.max())
        }
        let s = TwoPhotonState::new(0.9, 0.4, 2.5).unwrap();
        let (lo, hi) = normalized_spectrum(&state_fisher_information(&s, 6500.0, &grid()));
        assert!(lo.abs() < 1e-10 * hi, "{lo} {hi}");

        let mut red = DMatrix::<f64>::zeros(3, 3);
        for &ang in &grid() {
            let g = basis_row(ang);
            let m = single_polarizer_model(6500.0, s.imbalance(), s.coherence(), ang).max(1.0);
            let grad = [g[0] + s.imbalance() * g[1] + s.coherence() * g[2], 6500.0 * g[1], 6500.0 * g[2]];
            for i in 0..3 {
                for j in 0..3 {
                    red[(i, j)] += grad[i] * grad[j] / m;
                }
            }
        }
        let (lo, hi) = normalized_spectrum(&red);
        assert!(lo > 1e-3 * hi, "{lo} {hi}");
    }

    fn two_pol_sweeps(state: &TwoPhotonState, scale: f64) -> Vec<BasisSweep> {
        CorrelationBasis::ALL
            .iter()
            .map(|&basis| {
                let (beta, fam) = basis.fixed_analyzer();
                let angles = grid();
                BasisSweep {
                    basis,
                    record: MeasurementRecord {
                        coincidences: angles
                            .iter()
                            .map(|&g| (scale * two_polarizer_rate(state, beta, g, fam)).round() as u64)
                            .collect(),
                        integration_s: vec![1.0; angles.len()],
                        angles_deg: angles,
                        singles: None,
                    },
                }
            })
            .collect()
    }

    #[test]
    fn two_polarizer_route_on_ideal_curves() {
        let r = fidelity_from_two_polarizer(&two_pol_sweeps(&TwoPhotonState::phi_minus(), 1e9), &FitOptions::default())
            .unwrap();
        assert!((r.fidelity - 1.0).abs() < 1e-6, "{r:?}");
        assert!(!r.unphysical);

        let s = TwoPhotonState::new(0.9, 0.5, PI).unwrap();
        let r = fidelity_from_two_polarizer(&two_pol_sweeps(&s, 1e9), &FitOptions::default()).unwrap();
        let expected = fidelity_trace(&s.to_density_matrix(), &DensityMatrix4::phi_minus());
        assert!((r.fidelity - expected).abs() < 1e-6);
        for v in &r.visibilities {
            let want = if v.basis == CorrelationBasis::HV { 1.0 } else { 0.9 };
            assert!((v.visibility - want).abs() < 1e-6, "{v:?}");
        }
    }

    #[test]
    fn two_polarizer_requires_all_bases() {
        let mut sweeps = two_pol_sweeps(&TwoPhotonState::phi_minus(), 1e6);
        sweeps.pop();
        assert!(fidelity_from_two_polarizer(&sweeps, &FitOptions::default()).is_err());
    }

    #[test]
    fn unphysical_visibility_flagged() {
        let mut sweeps = two_pol_sweeps(&TwoPhotonState::phi_minus(), 1e6);
        // Push the D/A curve below zero at its minimum.
        let rec = &mut sweeps[1].record;
        let (y, _) = prepared(rec, &rec.coincidences, &FitOptions::default());
        let max = y.max();
        rec.coincidences = rec.coincidences.iter().map(|&c| (c as f64 * 1.2 - 0.1 * max).max(0.0) as u64).collect();
        let r = fidelity_from_two_polarizer(&sweeps, &FitOptions::default()).unwrap();
        assert!(r.unphysical);
        assert!(r.visibilities[1].unphysical);
        assert!(r.fidelity <= 1.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(500))]
            #[test]
            fn coherence_fidelity_matches_trace(p in 0.0f64..=1.0, x in 0.0f64..=1.0, t in -PI..PI) {
                let s = TwoPhotonState::new(p, x, t).unwrap();
                let via_trace = fidelity_trace(&s.to_density_matrix(), &DensityMatrix4::phi_minus());
                prop_assert!((fidelity_from_coherence(s.coherence()) - via_trace).abs() < 1e-10);
            }

            #[test]
            fn fitted_point_is_physical(p in 0.0f64..=1.0, x in 0.0f64..=1.0, t in -PI..PI, seed in any::<u64>()) {
                let s = TwoPhotonState::new(p, x, t).unwrap();
                let mut rng = resample_rng(seed, 0);
                let angles = grid();
                let counts: Vec<u64> = angles.iter().map(|&a| poisson_draw(200.0 * single_polarizer_rate(&s, a), &mut rng)).collect();
                let rec = MeasurementRecord { integration_s: vec![1.0; angles.len()], angles_deg: angles, coincidences: counts, singles: None };
                if let Ok(f) = fit_single_polarizer(&rec) {
                    prop_assert!(f.a * f.a + f.b * f.b <= 1.0 + 1e-9);
                    prop_assert!((0.0..=1.0).contains(&f.fidelity));
                }
            }

            #[test]
            fn scale_invariance_noiseless(p in 0.0f64..=1.0, x in 0.05f64..=0.95, t in -PI..PI, k in 2u64..50) {
                let s = TwoPhotonState::new(p, x, t).unwrap();
                let base = noiseless(&s, 1e9);
                let mut scaled = base.clone();
                scaled.coincidences.iter_mut().for_each(|c| *c *= k);
                let f1 = fit_single_polarizer(&base).unwrap();
                let f2 = fit_single_polarizer(&scaled).unwrap();
                prop_assert!((f1.a - f2.a).abs() < 1e-9 && (f1.b - f2.b).abs() < 1e-9);
                prop_assert!((f2.amplitude / f1.amplitude - k as f64).abs() < 1e-6 * k as f64);
            }
        }
    }
}
