//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Three operations: the residual phase curve for a chosen compensator
//! thickness, predicted polarizer curves for a chosen state, and a
//! simulated single-polarizer sweep with its bootstrap fit. Results cross
//! the boundary as flat `Float64Array`s.

use pairsource::expsim::{generate_sweep, ExperimentConfig};
use pairsource::layout::SourceLayout;
use pairsource::phasecomp::{
    optimize_compensator, relative_phase_curve, wavelength_grid, CompensatorOptions, CompositeWaveplate, StackMedia,
};
use pairsource::phasematch::PhaseMatchSpec;
use pairsource::qstate::{
    fidelity_trace, single_polarizer_rate, two_polarizer_rate, CorrelationBasis, DensityMatrix4, TwoPhotonState,
};
use pairsource::tomofit::bootstrap;
use pairsource::MaterialDb;
use wasm_bindgen::prelude::*;

const PUMP_NM: f64 = 405.0;
const SIGNAL_NM: f64 = 776.0;
const CRYSTAL_MM: f64 = 5.0;
const HWP: CompositeWaveplate = CompositeWaveplate {
    mgf2_mm: 0.9159,
    quartz_mm: 1.1582,
};

fn reference_stack() -> Result<(StackMedia, SourceLayout, (f64, f64)), String> {
    let db = MaterialDb::builtin();
    let media = StackMedia::from_db(&db).map_err(|e| e.to_string())?;
    let spec = PhaseMatchSpec::solve(&media.crystal, PUMP_NM, SIGNAL_NM).map_err(|e| e.to_string())?;
    let layout = SourceLayout::new(CRYSTAL_MM, spec.cut_angle_deg, PUMP_NM, HWP, 0.0).map_err(|e| e.to_string())?;
    Ok((media, layout, (spec.signal_nm, spec.idler_nm)))
}

/// `[λ₀, Δφ₀, λ₁, Δφ₁, …]` over the signal/idler band for a compensator of
/// `compensator_mm`, relative to the degenerate wavelength.
pub fn phase_curve_rows(compensator_mm: f64) -> Result<Vec<f64>, String> {
    let (media, layout, band) = reference_stack()?;
    let layout = layout.with_compensator(compensator_mm);
    let curve = relative_phase_curve(&media, &layout, &wavelength_grid(band, 0.5)).map_err(|e| e.to_string())?;
    Ok(curve.wavelengths_nm.iter().zip(&curve.phase_rad).flat_map(|(&w, &p)| [w, p]).collect())
}

/// `[optimal thickness mm, band max rad, uncompensated band max rad]`.
pub fn optimum() -> Result<Vec<f64>, String> {
    let (media, layout, band) = reference_stack()?;
    let opt = optimize_compensator(&media, &layout, band, &CompensatorOptions::default()).map_err(|e| e.to_string())?;
    Ok(vec![opt.length_mm, opt.band_max_rad, opt.uncompensated_band_max_rad])
}

fn state(p: f64, x: f64, theta_deg: f64) -> Result<TwoPhotonState, String> {
    TwoPhotonState::new(p, x, theta_deg.to_radians()).map_err(|e| e.to_string())
}

/// Rows `[angle, single, H/V, D/A, L/R]` for angles −180..180 in 2° steps.
pub fn polarizer_rows(p: f64, x: f64, theta_deg: f64) -> Result<Vec<f64>, String> {
    let s = state(p, x, theta_deg)?;
    let mut out = Vec::with_capacity(181 * 5);
    for k in -90..=90 {
        let a = 2.0 * f64::from(k);
        out.push(a);
        out.push(single_polarizer_rate(&s, a));
        for basis in CorrelationBasis::ALL {
            let (beta, family) = basis.fixed_analyzer();
            out.push(two_polarizer_rate(&s, beta, a, family));
        }
    }
    Ok(out)
}

pub fn state_fidelity(p: f64, x: f64, theta_deg: f64) -> Result<f64, String> {
    Ok(fidelity_trace(&state(p, x, theta_deg)?.to_density_matrix(), &DensityMatrix4::phi_minus()))
}

/// Simulates a 19-point sweep and fits it. Returns
/// `[true F, fitted F, CI low, CI high, a, b, N]` followed by
/// `(angle, counts, model)` triples.
pub fn simulate_fit_rows(p: f64, x: f64, theta_deg: f64, power_mw: f64, seed: u64, resamples: usize) -> Result<Vec<f64>, String> {
    let cfg = ExperimentConfig {
        state: state(p, x, theta_deg)?,
        pump_power_mw: power_mw,
        seed,
        ..ExperimentConfig::default()
    };
    let angles: Vec<f64> = (-9..=9).map(|k| 10.0 * f64::from(k)).collect();
    let rec = generate_sweep(&cfg, &angles).map_err(|e| e.to_string())?;
    let fit = bootstrap(&rec, resamples, seed ^ 0x5eed).map_err(|e| e.to_string())?;
    let (lo, hi) = fit.ci_fidelity.unwrap_or((fit.fidelity, fit.fidelity));
    let mut out = vec![state_fidelity(p, x, theta_deg)?, fit.fidelity, lo, hi, fit.a, fit.b, fit.amplitude];
    for (i, &a) in rec.angles_deg.iter().enumerate() {
        let model = pairsource::tomofit::single_polarizer_model(fit.amplitude, fit.a, fit.b, a);
        out.extend([a, rec.coincidences[i] as f64, model]);
    }
    Ok(out)
}

#[wasm_bindgen(js_name = phaseCurve)]
pub fn phase_curve(compensator_mm: f64) -> Result<Vec<f64>, JsError> {
    phase_curve_rows(compensator_mm).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = optimalCompensator)]
pub fn optimal_compensator() -> Result<Vec<f64>, JsError> {
    optimum().map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = polarizerCurves)]
pub fn polarizer_curves(p: f64, x: f64, theta_deg: f64) -> Result<Vec<f64>, JsError> {
    polarizer_rows(p, x, theta_deg).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn fidelity(p: f64, x: f64, theta_deg: f64) -> Result<f64, JsError> {
    state_fidelity(p, x, theta_deg).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = simulateAndFit)]
pub fn simulate_and_fit(p: f64, x: f64, theta_deg: f64, power_mw: f64, seed: u32, resamples: u32) -> Result<Vec<f64>, JsError> {
    simulate_fit_rows(p, x, theta_deg, power_mw, u64::from(seed), resamples as usize).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensator_flattens_the_curve() {
        let opt = optimum().unwrap();
        let max = |rows: Vec<f64>| rows.chunks(2).fold(0.0f64, |m, r| m.max(r[1].abs()));
        let bare = max(phase_curve_rows(0.0).unwrap());
        let best = max(phase_curve_rows(opt[0]).unwrap());
        assert!(best * 10.0 < bare);
    }

    #[test]
    fn polarizer_rows_have_five_columns() {
        let rows = polarizer_rows(1.0, 0.5, 180.0).unwrap();
        assert_eq!(rows.len(), 181 * 5);
        assert!((state_fidelity(1.0, 0.5, 180.0).unwrap() - 1.0).abs() < 1e-12);
        assert!(polarizer_rows(1.5, 0.5, 0.0).is_err());
    }

    #[test]
    fn simulate_fit_recovers_the_state() {
        let rows = simulate_fit_rows(0.98005, 0.5, 180.0, 0.1, 3, 200).unwrap();
        assert_eq!(rows.len(), 7 + 19 * 3);
        assert!((rows[1] - rows[0]).abs() < 0.005);
    }
}
