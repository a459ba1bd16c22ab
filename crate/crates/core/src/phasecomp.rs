//! Relative phase between the |VV⟩ and |HH⟩ pair amplitudes, the achromatic
//! waveplate that rotates first-crystal pairs, and the birefringent
//! compensator that flattens the phase across the pair bandwidth.
//!
//! Pairs born in the first crystal cross the waveplate, then the second
//! crystal as extraordinary waves at the cut angle, then the compensator as
//! ordinary waves. Pairs born in the second crystal only cross the
//! compensator, as extraordinary waves. Pump-photon contributions are the
//! same for every pair wavelength and are dropped.

use std::f64::consts::{PI, TAU};

use thiserror::Error;

use crate::layout::{LayoutError, SourceLayout};
use crate::materials::{Material, MaterialDb, MaterialError};
use crate::scalar::golden_section_minimize;

#[derive(Debug, Error)]
pub enum PhaseCompError {
    #[error("invalid band [{0}, {1}] nm: must lie above the pump wavelength {2} nm")]
    InvalidBand(f64, f64, f64),

    #[error("no waveplate meets the band tolerance {tolerance} rad; best found: {best:?}")]
    Infeasible { tolerance: f64, best: HwpDesign },

    #[error(transparent)]
    Layout(#[from] LayoutError),

    #[error(transparent)]
    Material(#[from] MaterialError),
}

/// The four media the stack is built from.
#[derive(Debug, Clone)]
pub struct StackMedia {
    pub crystal: Material,
    pub compensator: Material,
    pub mgf2: Material,
    pub quartz: Material,
}

impl StackMedia {
    /// Looks up BBO, YVO4, MgF2 and quartz.
    pub fn from_db(db: &MaterialDb) -> Result<Self, MaterialError> {
        Ok(Self {
            crystal: db.get("BBO")?.clone(),
            compensator: db.get("YVO4")?.clone(),
            mgf2: db.get("MgF2")?.clone(),
            quartz: db.get("quartz")?.clone(),
        })
    }
}

/// Which index an element presents to a photon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ElementPolarization {
    Ordinary,
    Extraordinary,
    /// Extraordinary wave at this angle (deg) to the optic axis.
    Effective(f64),
}

/// Dynamic phase `2π·n·L/λ` for `length_mm` of material.
pub fn element_phase(
    material: &Material,
    pol: ElementPolarization,
    wavelength_nm: f64,
    length_mm: f64,
) -> Result<f64, MaterialError> {
    let n = match pol {
        ElementPolarization::Ordinary => material.n_o(wavelength_nm)?,
        ElementPolarization::Extraordinary => material.n_e(wavelength_nm)?,
        ElementPolarization::Effective(angle) => {
            material.effective_extraordinary_index(angle, wavelength_nm)?
        }
    };
    Ok(TAU * n * length_mm * 1e6 / wavelength_nm)
}

/// MgF2 and quartz plates with crossed fast axes; retardances subtract.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CompositeWaveplate {
    pub mgf2_mm: f64,
    pub quartz_mm: f64,
}

impl CompositeWaveplate {
    pub fn total_mm(&self) -> f64 {
        self.mgf2_mm + self.quartz_mm
    }
}

/// How the waveplate enters the pair phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HwpPhaseModel {
    /// Mean of the two principal dynamic phases of each plate.
    #[default]
    MeanDynamicPhase,
    /// Wavelength-independent; for sensitivity studies.
    Constant,
}

/// Dynamic phase a pair photon picks up in the waveplate: for each plate,
/// the mean of its ordinary and extraordinary phases.
pub fn hwp_phase(media: &StackMedia, hwp: &CompositeWaveplate, wavelength_nm: f64) -> Result<f64, MaterialError> {
    let mean = |m: &Material, t: f64| -> Result<f64, MaterialError> {
        Ok(0.5
            * (element_phase(m, ElementPolarization::Ordinary, wavelength_nm, t)?
                + element_phase(m, ElementPolarization::Extraordinary, wavelength_nm, t)?))
    };
    Ok(mean(&media.mgf2, hwp.mgf2_mm)? + mean(&media.quartz, hwp.quartz_mm)?)
}

/// Retardance `2π[Δn_qz·t_qz − Δn_MgF2·t_MgF2]/λ`, Δn = n_e − n_o.
pub fn hwp_retardance(media: &StackMedia, hwp: &CompositeWaveplate, wavelength_nm: f64) -> Result<f64, MaterialError> {
    let dq = media.quartz.birefringence(wavelength_nm)?;
    let dm = media.mgf2.birefringence(wavelength_nm)?;
    Ok(retardance_from(dq, dm, hwp.mgf2_mm, hwp.quartz_mm, wavelength_nm))
}

fn retardance_from(dq: f64, dm: f64, mgf2_mm: f64, quartz_mm: f64, wavelength_nm: f64) -> f64 {
    TAU * (dq * quartz_mm - dm * mgf2_mm) * 1e6 / wavelength_nm
}

/// Wraps an angle into (−π, π].
pub fn wrap_phase(x: f64) -> f64 {
    let r = x.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HwpDesignOptions {
    /// Upper bound on each plate, mm.
    pub max_thickness_mm: f64,
    /// MgF2 grid step along each pump-order line, mm.
    pub grid_step_mm: f64,
    pub band_samples: usize,
    /// Allowed |Γ(pump)| mod 2π, rad.
    pub pump_tolerance_rad: f64,
    /// A design fails unless max |Γ − π| over the band is below this, rad.
    pub band_tolerance_rad: f64,
}

impl Default for HwpDesignOptions {
    fn default() -> Self {
        Self {
            max_thickness_mm: 3.0,
            grid_step_mm: 1e-3,
            band_samples: 21,
            pump_tolerance_rad: 0.1,
            band_tolerance_rad: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HwpDesign {
    pub plate: CompositeWaveplate,
    /// max over band of |Γ − π| mod 2π, rad.
    pub band_error_rad: f64,
    /// |Γ(pump)| mod 2π, rad.
    pub pump_error_rad: f64,
}

struct RetardanceTable {
    band: Vec<(f64, f64, f64)>,
    pump: (f64, f64, f64),
}

impl RetardanceTable {
    fn band_error(&self, mgf2: f64, quartz: f64) -> f64 {
        self.band
            .iter()
            .map(|&(wl, dq, dm)| wrap_phase(retardance_from(dq, dm, mgf2, quartz, wl) - PI).abs())
            .fold(0.0, f64::max)
    }

    fn pump_error(&self, mgf2: f64, quartz: f64) -> f64 {
        let (wl, dq, dm) = self.pump;
        wrap_phase(retardance_from(dq, dm, mgf2, quartz, wl)).abs()
    }
}

/// Designs an achromatic half-wave plate for `band` that leaves the pump
/// polarization unchanged.
///
/// Retardance is linear in the two thicknesses, so the pump condition
/// Γ(pump) = 2πm is a family of lines in (t_MgF2, t_quartz). The search
/// walks each line on a grid of MgF2 thickness, keeps the best points, then
/// refines them by a shrinking compass search that may leave the line within
/// the pump tolerance. Among refined designs within 1% of the best band
/// error the thinnest is returned.
pub fn design_hwp(
    media: &StackMedia,
    band_nm: (f64, f64),
    pump_nm: f64,
    opts: &HwpDesignOptions,
) -> Result<HwpDesign, PhaseCompError> {
    let (lo, hi) = (band_nm.0.min(band_nm.1), band_nm.0.max(band_nm.1));
    if !(lo > pump_nm && pump_nm > 0.0) {
        return Err(PhaseCompError::InvalidBand(lo, hi, pump_nm));
    }
    let n = opts.band_samples.max(2);
    let entry = |wl: f64| -> Result<(f64, f64, f64), MaterialError> {
        Ok((wl, media.quartz.birefringence(wl)?, media.mgf2.birefringence(wl)?))
    };
    let table = RetardanceTable {
        band: (0..n)
            .map(|i| entry(lo + (hi - lo) * i as f64 / (n - 1) as f64))
            .collect::<Result<_, _>>()?,
        pump: entry(pump_nm)?,
    };

    let max_t = opts.max_thickness_mm;
    let (_, dq_p, dm_p) = table.pump;
    let order_mm = pump_nm * 1e-6;
    // dq_p·t_q − dm_p·t_m = m·λp spans [−dm_p·max, dq_p·max].
    let m_min = ((-dm_p.max(0.0) * max_t) / order_mm).floor() as i64;
    let m_max = ((dq_p.max(0.0) * max_t) / order_mm).ceil() as i64;
    let steps = (max_t / opts.grid_step_mm).round() as usize;

    let mut seeds: Vec<(f64, f64, f64)> = Vec::new();
    for m in m_min..=m_max {
        let mut best: Option<(f64, f64, f64)> = None;
        for k in 0..=steps {
            let tm = k as f64 * opts.grid_step_mm;
            let tq = (m as f64 * order_mm + dm_p * tm) / dq_p;
            if !(0.0..=max_t).contains(&tq) {
                continue;
            }
            let err = table.band_error(tm, tq);
            if best.is_none_or(|b| err < b.0) {
                best = Some((err, tm, tq));
            }
        }
        seeds.extend(best);
    }
    seeds.sort_by(|a, b| a.0.total_cmp(&b.0));
    seeds.truncate(8);

    let mut refined: Vec<HwpDesign> = seeds
        .into_iter()
        .map(|(_, tm, tq)| refine_plate(&table, tm, tq, opts))
        .collect();
    refined.sort_by(|a, b| a.band_error_rad.total_cmp(&b.band_error_rad));
    let best_err = refined
        .first()
        .map(|d| d.band_error_rad)
        .ok_or(PhaseCompError::InvalidBand(lo, hi, pump_nm))?;
    let chosen = refined
        .iter()
        .filter(|d| d.band_error_rad <= best_err * 1.01 + 1e-12)
        .min_by(|a, b| a.plate.total_mm().total_cmp(&b.plate.total_mm()))
        .copied()
        .unwrap_or(refined[0]);

    if chosen.band_error_rad > opts.band_tolerance_rad {
        return Err(PhaseCompError::Infeasible {
            tolerance: opts.band_tolerance_rad,
            best: chosen,
        });
    }
    Ok(chosen)
}

fn refine_plate(table: &RetardanceTable, tm: f64, tq: f64, opts: &HwpDesignOptions) -> HwpDesign {
    let max_t = opts.max_thickness_mm;
    let feasible = |m: f64, q: f64| {
        (0.0..=max_t).contains(&m)
            && (0.0..=max_t).contains(&q)
            && table.pump_error(m, q) <= opts.pump_tolerance_rad
    };
    let (mut m, mut q) = (tm, tq);
    let mut err = table.band_error(m, q);
    let mut step = opts.grid_step_mm;
    // Directions along each axis and along the pump-order line.
    let (_, dq_p, dm_p) = table.pump;
    let norm = (dq_p * dq_p + dm_p * dm_p).sqrt();
    let line = (dq_p / norm, dm_p / norm);
    let dirs = [(1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0), line, (-line.0, -line.1)];
    while step > 1e-8 {
        let mut improved = false;
        for (dx, dy) in dirs {
            let (cm, cq) = (m + step * dx, q + step * dy);
            if !feasible(cm, cq) {
                continue;
            }
            let e = table.band_error(cm, cq);
            if e < err {
                (m, q, err) = (cm, cq, e);
                improved = true;
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    HwpDesign {
        plate: CompositeWaveplate {
            mgf2_mm: m,
            quartz_mm: q,
        },
        band_error_rad: err,
        pump_error_rad: table.pump_error(m, q),
    }
}

/// Relative phase Δφ against signal wavelength, shifted so it vanishes at
/// the degenerate wavelength.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseCurve {
    pub wavelengths_nm: Vec<f64>,
    pub phase_rad: Vec<f64>,
    /// Δφ at the degenerate wavelength before subtraction, rad.
    pub degenerate_offset_rad: f64,
}

impl PhaseCurve {
    pub fn max_abs(&self) -> f64 {
        self.phase_rad.iter().fold(0.0, |m, p| m.max(p.abs()))
    }

    /// Shifts the curve so it vanishes at `reference_nm`, interpolating
    /// linearly if that wavelength is not a sample point. Assumes ascending
    /// wavelengths.
    pub fn rereferenced(&self, reference_nm: f64) -> Self {
        let shift = interpolate(&self.wavelengths_nm, &self.phase_rad, reference_nm);
        Self {
            wavelengths_nm: self.wavelengths_nm.clone(),
            phase_rad: self.phase_rad.iter().map(|p| p - shift).collect(),
            degenerate_offset_rad: self.degenerate_offset_rad + shift,
        }
    }
}

fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    match xs.iter().position(|&v| v >= x) {
        Some(0) => ys[0],
        Some(i) => {
            let t = (x - xs[i - 1]) / (xs[i] - xs[i - 1]);
            ys[i - 1] + t * (ys[i] - ys[i - 1])
        }
        None => *ys.last().unwrap_or(&0.0),
    }
}

/// Δφ at one signal wavelength split into the compensator-independent part
/// and the contribution per millimetre of compensator.
fn phase_terms(media: &StackMedia, layout: &SourceLayout, signal_nm: f64) -> Result<(f64, f64), PhaseCompError> {
    let idler_nm = crate::phasematch::idler_wavelength(layout.pump_nm, signal_nm)
        .map_err(|_| PhaseCompError::InvalidBand(signal_nm, signal_nm, layout.pump_nm))?;
    let mut fixed = 0.0;
    let mut per_mm = 0.0;
    for wl in [signal_nm, idler_nm] {
        if layout.hwp_model == HwpPhaseModel::MeanDynamicPhase {
            fixed += hwp_phase(media, &layout.hwp, wl)?;
        }
        fixed += element_phase(
            &media.crystal,
            ElementPolarization::Effective(layout.cut_angle_deg),
            wl,
            layout.crystal_length_mm,
        )?;
        per_mm += element_phase(&media.compensator, ElementPolarization::Ordinary, wl, 1.0)?
            - element_phase(&media.compensator, ElementPolarization::Extraordinary, wl, 1.0)?;
    }
    Ok((fixed, per_mm))
}

/// Δφ = φ1 − φ2 at one signal wavelength, without offset subtraction.
pub fn relative_phase(media: &StackMedia, layout: &SourceLayout, signal_nm: f64) -> Result<f64, PhaseCompError> {
    let (fixed, per_mm) = phase_terms(media, layout, signal_nm)?;
    Ok(fixed + layout.compensator_length_mm * per_mm)
}

/// First-crystal and second-crystal pair phases at one signal wavelength,
/// each summed over signal and idler. Pump terms are omitted.
pub fn pair_phases(media: &StackMedia, layout: &SourceLayout, signal_nm: f64) -> Result<(f64, f64), PhaseCompError> {
    let idler_nm = crate::phasematch::idler_wavelength(layout.pump_nm, signal_nm)
        .map_err(|_| PhaseCompError::InvalidBand(signal_nm, signal_nm, layout.pump_nm))?;
    let lc = layout.compensator_length_mm;
    let mut phi1 = 0.0;
    let mut phi2 = 0.0;
    for wl in [signal_nm, idler_nm] {
        if layout.hwp_model == HwpPhaseModel::MeanDynamicPhase {
            phi1 += hwp_phase(media, &layout.hwp, wl)?;
        }
        phi1 += element_phase(
            &media.crystal,
            ElementPolarization::Effective(layout.cut_angle_deg),
            wl,
            layout.crystal_length_mm,
        )?;
        phi1 += element_phase(&media.compensator, ElementPolarization::Ordinary, wl, lc)?;
        phi2 += element_phase(&media.compensator, ElementPolarization::Extraordinary, wl, lc)?;
    }
    Ok((phi1, phi2))
}

pub fn relative_phase_curve(
    media: &StackMedia,
    layout: &SourceLayout,
    signal_grid_nm: &[f64],
) -> Result<PhaseCurve, PhaseCompError> {
    layout.validate()?;
    let offset = relative_phase(media, layout, layout.degenerate_nm)?;
    let phase_rad = signal_grid_nm
        .iter()
        .map(|&wl| Ok(relative_phase(media, layout, wl)? - offset))
        .collect::<Result<_, PhaseCompError>>()?;
    Ok(PhaseCurve {
        wavelengths_nm: signal_grid_nm.to_vec(),
        phase_rad,
        degenerate_offset_rad: offset,
    })
}

/// Uniform grid with `step_nm` spacing that always includes both endpoints.
pub fn wavelength_grid(band_nm: (f64, f64), step_nm: f64) -> Vec<f64> {
    let (lo, hi) = (band_nm.0.min(band_nm.1), band_nm.0.max(band_nm.1));
    let n = ((hi - lo) / step_nm).ceil().max(1.0) as usize;
    (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompensatorOptions {
    pub max_length_mm: f64,
    pub scan_step_mm: f64,
    pub refine_tolerance_mm: f64,
    /// Spacing of the band samples, nm.
    pub band_step_nm: f64,
}

impl Default for CompensatorOptions {
    fn default() -> Self {
        Self {
            max_length_mm: 20.0,
            scan_step_mm: 0.01,
            refine_tolerance_mm: 1e-3,
            band_step_nm: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompensatorOptimum {
    pub length_mm: f64,
    /// Band-max |Δφ − Δφ(degenerate)| at the optimum, rad.
    pub band_max_rad: f64,
    /// The same without a compensator, rad.
    pub uncompensated_band_max_rad: f64,
    /// The scan found more than one local minimum; `length_mm` is the global
    /// scan minimum, refined.
    pub multiple_minima: bool,
}

/// Compensator thickness minimizing the band-max deviation of Δφ from its
/// degenerate value. A 0.01 mm scan picks the bracket (ties go to the
/// shorter length); golden-section search refines inside it.
pub fn optimize_compensator(
    media: &StackMedia,
    layout: &SourceLayout,
    band_nm: (f64, f64),
    opts: &CompensatorOptions,
) -> Result<CompensatorOptimum, PhaseCompError> {
    layout.validate()?;
    let (lo, hi) = (band_nm.0.min(band_nm.1), band_nm.0.max(band_nm.1));
    if !(lo > layout.pump_nm) {
        return Err(PhaseCompError::InvalidBand(lo, hi, layout.pump_nm));
    }
    let (fixed0, slope0) = phase_terms(media, layout, layout.degenerate_nm)?;
    let rows: Vec<(f64, f64)> = wavelength_grid((lo, hi), opts.band_step_nm)
        .into_iter()
        .map(|wl| {
            let (f, s) = phase_terms(media, layout, wl)?;
            Ok((f - fixed0, s - slope0))
        })
        .collect::<Result<_, PhaseCompError>>()?;
    // Δφ is affine in the compensator length, so the objective is cheap.
    let objective =
        |lc: f64| rows.iter().fold(0.0f64, |m, &(f, s)| m.max((f + lc * s).abs()));

    let n = (opts.max_length_mm / opts.scan_step_mm).round() as usize;
    let scan: Vec<f64> = (0..=n)
        .map(|k| objective(k as f64 * opts.scan_step_mm))
        .collect();
    let mut best_k = 0;
    for (k, v) in scan.iter().enumerate() {
        if *v < scan[best_k] {
            best_k = k;
        }
    }
    let local_minima = (0..=n)
        .filter(|&k| {
            let left = k == 0 || scan[k] < scan[k - 1];
            let right = k == n || scan[k] <= scan[k + 1];
            left && right
        })
        .count();

    let x0 = best_k as f64 * opts.scan_step_mm;
    let a = (x0 - opts.scan_step_mm).max(0.0);
    let b = (x0 + opts.scan_step_mm).min(opts.max_length_mm);
    let (xr, fr) = golden_section_minimize(objective, a, b, opts.refine_tolerance_mm);
    let (length_mm, band_max_rad) = if fr < scan[best_k] { (xr, fr) } else { (x0, scan[best_k]) };

    Ok(CompensatorOptimum {
        length_mm,
        band_max_rad,
        uncompensated_band_max_rad: objective(0.0),
        multiple_minima: local_minima > 1,
    })
}
