//! Collinear type-I (e → o + o) critical phase matching.
//!
//! The pump travels as an extraordinary wave at the cut angle; signal and
//! idler are ordinary. Phase matching is the collinear condition
//! `n_eff(θ, λp)/λp = n_o(λs)/λs + n_o(λi)/λi` together with energy
//! conservation `1/λp = 1/λs + 1/λi`.

use thiserror::Error;

use crate::materials::{Material, MaterialError};
use crate::scalar::bisect;

/// Tolerance on `1/λp − 1/λs − 1/λi`, nm⁻¹.
pub const ENERGY_TOLERANCE: f64 = 1e-6;
/// Guaranteed accuracy of [`solve_cut_angle`], degrees.
pub const ANGLE_TOLERANCE_DEG: f64 = 1e-4;
/// Bracket width at which bisection stops. Emission wavelengths near
/// degeneracy vary as the square root of the angle offset, so the inverse
/// needs far more angular precision than the guaranteed accuracy.
const SOLVER_TOLERANCE_DEG: f64 = 1e-9;
/// Cut angles this close to the degenerate cut map to the degenerate pair.
const DEGENERATE_SNAP_DEG: f64 = 1e-6;
/// Cut-angle search bracket, degrees.
pub const ANGLE_BRACKET_DEG: (f64, f64) = (0.1, 89.9);

#[derive(Debug, Error)]
pub enum PhaseMatchError {
    #[error("signal wavelength {signal_nm} nm must exceed pump wavelength {pump_nm} nm")]
    SignalNotLonger { pump_nm: f64, signal_nm: f64 },

    #[error("energy not conserved: 1/{pump_nm} - 1/{signal_nm} - 1/{idler_nm} = {residual:e} nm^-1")]
    EnergyMismatch {
        pump_nm: f64,
        signal_nm: f64,
        idler_nm: f64,
        residual: f64,
    },

    #[error("not phase-matchable: {0}")]
    NotPhaseMatchable(String),

    #[error(transparent)]
    Material(#[from] MaterialError),
}

/// A consistent set of collinear wavelengths and the cut angle that matches
/// them. `signal_nm ≤ idler_nm` by convention.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseMatchSpec {
    pub pump_nm: f64,
    pub signal_nm: f64,
    pub idler_nm: f64,
    pub cut_angle_deg: f64,
}

impl PhaseMatchSpec {
    /// Solves the cut angle for `(pump, signal)`; the idler follows from
    /// energy conservation and the pair is ordered shorter-first.
    pub fn solve(crystal: &Material, pump_nm: f64, signal_nm: f64) -> Result<Self, PhaseMatchError> {
        let idler_nm = idler_wavelength(pump_nm, signal_nm)?;
        let (signal_nm, idler_nm) = (signal_nm.min(idler_nm), signal_nm.max(idler_nm));
        let cut_angle_deg = solve_cut_angle(crystal, pump_nm, signal_nm, idler_nm)?;
        Ok(Self {
            pump_nm,
            signal_nm,
            idler_nm,
            cut_angle_deg,
        })
    }
}

/// `1/(1/λp − 1/λs)`.
pub fn idler_wavelength(pump_nm: f64, signal_nm: f64) -> Result<f64, PhaseMatchError> {
    if !(signal_nm > pump_nm && pump_nm > 0.0) {
        return Err(PhaseMatchError::SignalNotLonger { pump_nm, signal_nm });
    }
    Ok(1.0 / (1.0 / pump_nm - 1.0 / signal_nm))
}

pub fn check_energy(pump_nm: f64, signal_nm: f64, idler_nm: f64) -> Result<(), PhaseMatchError> {
    let residual = 1.0 / pump_nm - 1.0 / signal_nm - 1.0 / idler_nm;
    if !(residual.abs() <= ENERGY_TOLERANCE) {
        return Err(PhaseMatchError::EnergyMismatch {
            pump_nm,
            signal_nm,
            idler_nm,
            residual,
        });
    }
    Ok(())
}

/// Wavevector mismatch `k_p − k_s − k_i` in units of 2π nm⁻¹.
pub fn collinear_mismatch(
    crystal: &Material,
    angle_deg: f64,
    pump_nm: f64,
    signal_nm: f64,
    idler_nm: f64,
) -> Result<f64, MaterialError> {
    Ok(crystal.effective_extraordinary_index(angle_deg, pump_nm)? / pump_nm
        - crystal.n_o(signal_nm)? / signal_nm
        - crystal.n_o(idler_nm)? / idler_nm)
}

/// Cut angle (degrees) at which the collinear condition holds, found by
/// bisection over [`ANGLE_BRACKET_DEG`].
pub fn solve_cut_angle(
    crystal: &Material,
    pump_nm: f64,
    signal_nm: f64,
    idler_nm: f64,
) -> Result<f64, PhaseMatchError> {
    check_energy(pump_nm, signal_nm, idler_nm)?;
    // Surface index errors before entering the closure.
    collinear_mismatch(crystal, 45.0, pump_nm, signal_nm, idler_nm)?;
    let f = |angle: f64| {
        collinear_mismatch(crystal, angle, pump_nm, signal_nm, idler_nm).unwrap_or(f64::NAN)
    };
    let (lo, hi) = ANGLE_BRACKET_DEG;
    bisect(f, lo, hi, SOLVER_TOLERANCE_DEG).ok_or_else(|| {
        PhaseMatchError::NotPhaseMatchable(format!(
            "no collinear solution for {pump_nm} -> {signal_nm} + {idler_nm} nm in ({lo}, {hi}) deg"
        ))
    })
}

/// Collinear `(signal, idler)` pair produced at `cut_angle_deg`, choosing the
/// solution nearest degeneracy.
///
/// Type-I collinear emission is symmetric about degeneracy: the mismatch at
/// fixed angle falls monotonically with detuning, so a solution exists only
/// for angles at or below the degenerate cut. Angles within the solver
/// precision of the degenerate cut return the degenerate pair.
pub fn emission_wavelengths(
    crystal: &Material,
    pump_nm: f64,
    cut_angle_deg: f64,
) -> Result<(f64, f64), PhaseMatchError> {
    let degenerate_nm = 2.0 * pump_nm;
    let degenerate_cut = solve_cut_angle(crystal, pump_nm, degenerate_nm, degenerate_nm)?;
    if (cut_angle_deg - degenerate_cut).abs() <= DEGENERATE_SNAP_DEG {
        return Ok((degenerate_nm, degenerate_nm));
    }
    let not_matchable = || {
        PhaseMatchError::NotPhaseMatchable(format!(
            "no collinear pair for a {pump_nm} nm pump at {cut_angle_deg} deg \
             (degenerate cut is {degenerate_cut:.4} deg)"
        ))
    };
    if cut_angle_deg > degenerate_cut {
        return Err(not_matchable());
    }

    // Shortest signal whose idler is still inside the crystal's window.
    let (_, max_nm) = crystal.valid_nm;
    let min_signal = if max_nm.is_finite() {
        1.0 / (1.0 / pump_nm - 1.0 / max_nm)
    } else {
        pump_nm
    }
    .max(crystal.valid_nm.0)
    .max(pump_nm * (1.0 + 1e-9));
    if min_signal >= degenerate_nm {
        return Err(not_matchable());
    }
    let mismatch = |signal: f64| {
        let idler = 1.0 / (1.0 / pump_nm - 1.0 / signal);
        collinear_mismatch(crystal, cut_angle_deg, pump_nm, signal, idler).unwrap_or(f64::NAN)
    };

    // Walk outward from degeneracy to find the first sign change.
    const STEP_NM: f64 = 0.5;
    let mut hi = degenerate_nm;
    let mut f_hi = mismatch(hi);
    loop {
        let lo = (hi - STEP_NM).max(min_signal);
        let f_lo = mismatch(lo);
        if f_lo.is_nan() || f_hi.is_nan() {
            return Err(not_matchable());
        }
        if f_lo.signum() != f_hi.signum() || f_lo == 0.0 {
            let signal = bisect(mismatch, lo, hi, 1e-9).ok_or_else(not_matchable)?;
            let idler = idler_wavelength(pump_nm, signal)?;
            return Ok((signal, idler));
        }
        if lo <= min_signal {
            return Err(not_matchable());
        }
        hi = lo;
        f_hi = f_lo;
    }
}
