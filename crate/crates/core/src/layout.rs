//! Geometry of the parallel-axis two-crystal stack.
//!
//! Both crystals share the optic-axis orientation, so every extraordinary
//! beam walks off in the same transverse direction. The pump is
//! extraordinary in both crystals; pairs from the first crystal are rotated
//! to extraordinary by the waveplate and walk off through the second crystal,
//! while pairs from the second crystal are ordinary and do not walk off.
//!
//! Pairs are treated as born at the exit face of their crystal, the same
//! approximation the relative-phase model makes.

use thiserror::Error;

use crate::materials::{Material, MaterialError};
use crate::phasecomp::{CompositeWaveplate, HwpPhaseModel};

#[derive(Debug, Error)]
pub enum LayoutError {
    #[error("invalid layout: {0}")]
    Invalid(String),

    #[error("mode width must be positive (got {0} um)")]
    NonPositiveWidth(f64),

    #[error(transparent)]
    Material(#[from] MaterialError),
}

/// The birefringent stack: two identical nonlinear crystals with parallel
/// optic axes, the composite waveplate between them and the compensator.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceLayout {
    /// Thickness of each nonlinear crystal, mm.
    pub crystal_length_mm: f64,
    pub cut_angle_deg: f64,
    pub pump_nm: f64,
    /// Degenerate pair wavelength, always twice the pump wavelength.
    pub degenerate_nm: f64,
    pub hwp: CompositeWaveplate,
    pub hwp_model: HwpPhaseModel,
    /// Compensator thickness, mm. Zero removes it.
    pub compensator_length_mm: f64,
}

impl SourceLayout {
    pub fn new(
        crystal_length_mm: f64,
        cut_angle_deg: f64,
        pump_nm: f64,
        hwp: CompositeWaveplate,
        compensator_length_mm: f64,
    ) -> Result<Self, LayoutError> {
        let layout = Self {
            crystal_length_mm,
            cut_angle_deg,
            pump_nm,
            degenerate_nm: 2.0 * pump_nm,
            hwp,
            hwp_model: HwpPhaseModel::MeanDynamicPhase,
            compensator_length_mm,
        };
        layout.validate()?;
        Ok(layout)
    }

    pub fn with_compensator(&self, compensator_length_mm: f64) -> Self {
        Self {
            compensator_length_mm,
            ..self.clone()
        }
    }

    pub fn with_crystal_length(&self, crystal_length_mm: f64) -> Self {
        Self {
            crystal_length_mm,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), LayoutError> {
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !finite_nonneg(self.crystal_length_mm) {
            return Err(LayoutError::Invalid(format!(
                "crystal length {} mm",
                self.crystal_length_mm
            )));
        }
        if !(self.cut_angle_deg > 0.0 && self.cut_angle_deg < 90.0) {
            return Err(LayoutError::Invalid(format!(
                "cut angle {} deg outside (0, 90)",
                self.cut_angle_deg
            )));
        }
        if !(self.pump_nm > 0.0 && (self.degenerate_nm - 2.0 * self.pump_nm).abs() < 1e-9) {
            return Err(LayoutError::Invalid(format!(
                "degenerate wavelength {} nm is not twice the pump {} nm",
                self.degenerate_nm, self.pump_nm
            )));
        }
        if !finite_nonneg(self.compensator_length_mm)
            || !finite_nonneg(self.hwp.mgf2_mm)
            || !finite_nonneg(self.hwp.quartz_mm)
        {
            return Err(LayoutError::Invalid(
                "element thicknesses must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Pump and collection mode sizes (intensity FWHM, µm).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamGeometry {
    pub pump_fwhm_major_um: f64,
    pub pump_fwhm_minor_um: f64,
    pub collection_fwhm_um: f64,
}

impl BeamGeometry {
    pub fn new(major: f64, minor: f64, collection: f64) -> Result<Self, LayoutError> {
        for w in [major, minor, collection] {
            if !(w > 0.0 && w.is_finite()) {
                return Err(LayoutError::NonPositiveWidth(w));
            }
        }
        if major < minor {
            return Err(LayoutError::Invalid(format!(
                "pump major axis {major} um shorter than minor axis {minor} um"
            )));
        }
        Ok(Self {
            pump_fwhm_major_um: major,
            pump_fwhm_minor_um: minor,
            collection_fwhm_um: collection,
        })
    }
}

/// Transverse offset after `length_mm` of extraordinary propagation, µm.
pub fn lateral_displacement(
    material: &Material,
    angle_deg: f64,
    wavelength_nm: f64,
    length_mm: f64,
) -> Result<f64, LayoutError> {
    let rho = material.walkoff_angle(angle_deg, wavelength_nm)?;
    Ok(1e3 * length_mm * rho.to_radians().tan())
}

/// Exit-face centroid offsets of the two pair emissions and their relative
/// mismatch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WalkoffBudget {
    pub pump_walkoff_deg: f64,
    pub pair_walkoff_deg: f64,
    /// Pump displacement through one crystal, µm.
    pub pump_step_um: f64,
    /// First-crystal pairs: pump walk-off in crystal 1 plus pair walk-off in
    /// crystal 2, µm.
    pub first_crystal_offset_um: f64,
    /// Second-crystal pairs: pump walk-off through both crystals, µm.
    pub second_crystal_offset_um: f64,
    /// `|tan ρ_pump − tan ρ_pair| / tan ρ_pump`.
    pub mismatch: f64,
}

/// Offsets are measured at the exit face of the second crystal from the
/// pump entry point; the mismatch is their difference per unit pump step,
/// which makes it independent of crystal length.
pub fn walkoff_budget(crystal: &Material, layout: &SourceLayout) -> Result<WalkoffBudget, LayoutError> {
    layout.validate()?;
    let theta = layout.cut_angle_deg;
    let rho_p = crystal.walkoff_angle(theta, layout.pump_nm)?;
    let rho_e = crystal.walkoff_angle(theta, layout.degenerate_nm)?;
    let (tp, te) = (rho_p.to_radians().tan(), rho_e.to_radians().tan());
    if tp <= 0.0 {
        return Err(LayoutError::Invalid("pump has no walk-off at this cut angle".into()));
    }
    let l_um = 1e3 * layout.crystal_length_mm;
    Ok(WalkoffBudget {
        pump_walkoff_deg: rho_p,
        pair_walkoff_deg: rho_e,
        pump_step_um: l_um * tp,
        first_crystal_offset_um: l_um * (tp + te),
        second_crystal_offset_um: 2.0 * l_um * tp,
        mismatch: (tp - te).abs() / tp,
    })
}

/// Relative lateral mismatch of the two pair emissions.
pub fn emission_mismatch(crystal: &Material, layout: &SourceLayout) -> Result<f64, LayoutError> {
    Ok(walkoff_budget(crystal, layout)?.mismatch)
}

/// Normalized overlap `|∫E_a E_b| / √(∫E_a² ∫E_b²)` of two 1-D Gaussian
/// field amplitudes whose intensity profiles have the given FWHMs and whose
/// centres are `displacement_um` apart.
pub fn gaussian_mode_overlap(
    displacement_um: f64,
    fwhm_a_um: f64,
    fwhm_b_um: f64,
) -> Result<f64, LayoutError> {
    for w in [fwhm_a_um, fwhm_b_um] {
        if !(w > 0.0 && w.is_finite()) {
            return Err(LayoutError::NonPositiveWidth(w));
        }
    }
    // Field E = exp(-x²/(2s²)) has intensity FWHM 2s·√(ln 2).
    let to_sigma = |fwhm: f64| fwhm / (2.0 * std::f64::consts::LN_2.sqrt());
    let (a, b) = (to_sigma(fwhm_a_um), to_sigma(fwhm_b_um));
    let sum = a * a + b * b;
    Ok((2.0 * a * b / sum).sqrt() * (-displacement_um * displacement_um / (2.0 * sum)).exp())
}

/// `(displacement, overlap)` rows for a design report.
pub fn overlap_table(
    budget: &WalkoffBudget,
    beams: &BeamGeometry,
) -> Result<Vec<(&'static str, f64, f64)>, LayoutError> {
    let d = (budget.first_crystal_offset_um - budget.second_crystal_offset_um).abs();
    let c = beams.collection_fwhm_um;
    Ok(vec![
        ("pair emissions, collection mode", d, gaussian_mode_overlap(d, c, c)?),
        (
            "pump minor axis vs collection",
            0.0,
            gaussian_mode_overlap(0.0, beams.pump_fwhm_minor_um, c)?,
        ),
        (
            "pump step vs pump major axis",
            budget.pump_step_um,
            gaussian_mode_overlap(budget.pump_step_um, beams.pump_fwhm_major_um, beams.pump_fwhm_major_um)?,
        ),
    ])
}
