//! Run configuration: a TOML file with one table per pipeline stage.
//!
//! Every key has a default, so an empty file describes the reference source
//! (405 nm pump, 5 mm BBO crystals, 776/847 nm pairs). Units are part of the
//! key names. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use pairsource::expsim::{DetectorModel, ExperimentConfig};
use pairsource::phasecomp::{CompensatorOptions, CompositeWaveplate, HwpDesignOptions, HwpPhaseModel};
use pairsource::qstate::TwoPhotonState;
use pairsource::tomofit::{FitOptions, StateConstraint};
use pairsource::MaterialDb;
use serde::Deserialize;

use crate::error::CliError;

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub materials: MaterialsSection,
    pub source: SourceSection,
    pub beams: BeamsSection,
    pub hwp_design: HwpDesignSection,
    pub compensation: CompensationSection,
    pub state: StateSection,
    pub experiment: ExperimentSection,
    pub fit: FitSection,
    pub replicate: ReplicateSection,
    pub output: OutputSection,
    /// Directory that relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            materials: Default::default(),
            source: Default::default(),
            beams: Default::default(),
            hwp_design: Default::default(),
            compensation: Default::default(),
            state: Default::default(),
            experiment: Default::default(),
            fit: Default::default(),
            replicate: Default::default(),
            output: Default::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct MaterialsSection {
    /// Path to a material database; the built-in table when absent.
    pub database: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SourceSection {
    pub pump_nm: f64,
    pub signal_nm: f64,
    pub crystal_length_mm: f64,
    /// Overrides the cut angle solved from the wavelengths.
    pub cut_angle_deg: Option<f64>,
    pub compensator_length_mm: f64,
    pub hwp_mgf2_mm: f64,
    pub hwp_quartz_mm: f64,
    /// "mean-dynamic" or "constant".
    pub hwp_phase_model: String,
}

impl Default for SourceSection {
    fn default() -> Self {
        Self {
            pump_nm: 405.0,
            signal_nm: 776.0,
            crystal_length_mm: 5.0,
            cut_angle_deg: None,
            compensator_length_mm: 3.12,
            hwp_mgf2_mm: 0.9159,
            hwp_quartz_mm: 1.1582,
            hwp_phase_model: "mean-dynamic".into(),
        }
    }
}

impl SourceSection {
    pub fn hwp(&self) -> CompositeWaveplate {
        CompositeWaveplate {
            mgf2_mm: self.hwp_mgf2_mm,
            quartz_mm: self.hwp_quartz_mm,
        }
    }

    pub fn phase_model(&self) -> Result<HwpPhaseModel, CliError> {
        match self.hwp_phase_model.as_str() {
            "mean-dynamic" => Ok(HwpPhaseModel::MeanDynamicPhase),
            "constant" => Ok(HwpPhaseModel::Constant),
            other => Err(CliError::Config(format!(
                "source.hwp_phase_model = {other:?}; expected \"mean-dynamic\" or \"constant\""
            ))),
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct BeamsSection {
    pub pump_fwhm_major_um: f64,
    pub pump_fwhm_minor_um: f64,
    pub collection_fwhm_um: f64,
}

impl Default for BeamsSection {
    fn default() -> Self {
        Self {
            pump_fwhm_major_um: 133.0,
            pump_fwhm_minor_um: 63.0,
            collection_fwhm_um: 53.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct HwpDesignSection {
    pub band_nm: [f64; 2],
    pub max_thickness_mm: f64,
    pub grid_step_mm: f64,
    pub band_samples: usize,
    pub pump_tolerance_rad: f64,
    pub band_tolerance_rad: f64,
}

impl Default for HwpDesignSection {
    fn default() -> Self {
        let d = HwpDesignOptions::default();
        Self {
            band_nm: [760.0, 860.0],
            max_thickness_mm: d.max_thickness_mm,
            grid_step_mm: d.grid_step_mm,
            band_samples: d.band_samples,
            pump_tolerance_rad: d.pump_tolerance_rad,
            band_tolerance_rad: d.band_tolerance_rad,
        }
    }
}

impl HwpDesignSection {
    pub fn options(&self) -> HwpDesignOptions {
        HwpDesignOptions {
            max_thickness_mm: self.max_thickness_mm,
            grid_step_mm: self.grid_step_mm,
            band_samples: self.band_samples,
            pump_tolerance_rad: self.pump_tolerance_rad,
            band_tolerance_rad: self.band_tolerance_rad,
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct CompensationSection {
    /// Signal band; defaults to the signal and its energy-conserving idler.
    pub band_nm: Option<[f64; 2]>,
    pub band_step_nm: f64,
    pub max_length_mm: f64,
    pub scan_step_mm: f64,
    /// Spacing of the written phase curves, nm.
    pub curve_step_nm: f64,
}

impl Default for CompensationSection {
    fn default() -> Self {
        let d = CompensatorOptions::default();
        Self {
            band_nm: None,
            band_step_nm: d.band_step_nm,
            max_length_mm: d.max_length_mm,
            scan_step_mm: d.scan_step_mm,
            curve_step_nm: 0.5,
        }
    }
}

impl CompensationSection {
    pub fn options(&self) -> CompensatorOptions {
        CompensatorOptions {
            max_length_mm: self.max_length_mm,
            scan_step_mm: self.scan_step_mm,
            band_step_nm: self.band_step_nm,
            ..CompensatorOptions::default()
        }
    }
}

/// The mixed state used by `curves`, `simulate` and `replicate`.
#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct StateSection {
    pub p: f64,
    pub x: f64,
    pub theta_deg: f64,
}

impl Default for StateSection {
    fn default() -> Self {
        // p = 2F² − 1 for F = 0.995 at x = ½, θ = π.
        Self {
            p: 0.98005,
            x: 0.5,
            theta_deg: 180.0,
        }
    }
}

impl StateSection {
    pub fn state(&self) -> Result<TwoPhotonState, CliError> {
        TwoPhotonState::new(self.p, self.x, self.theta_deg.to_radians()).map_err(|e| CliError::Config(format!("[state]: {e}")))
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub pump_power_mw: f64,
    pub brightness_pairs_per_s_per_mw: f64,
    pub coincidence_window_ns: f64,
    pub integration_s: f64,
    pub heralding_signal: f64,
    pub heralding_idler: f64,
    pub detector_efficiency: f64,
    pub dark_rate_per_s: f64,
    pub dead_time_us: f64,
    pub angles_deg: Vec<f64>,
    pub seed: u64,
    /// Powers for the saturation scan, mW.
    pub power_scan_mw: Vec<f64>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            pump_power_mw: 0.1,
            brightness_pairs_per_s_per_mw: 65_000.0,
            coincidence_window_ns: 4.0,
            integration_s: 1.0,
            heralding_signal: 0.27,
            heralding_idler: 0.22,
            detector_efficiency: 1.0,
            dark_rate_per_s: DetectorModel::DEFAULT_DARK_RATE,
            dead_time_us: DetectorModel::DEFAULT_DEAD_TIME * 1e6,
            angles_deg: (-9..=9).map(|k| 10.0 * k as f64).collect(),
            seed: 0,
            power_scan_mw: vec![0.05, 0.1, 0.2, 0.5, 1.0, 1.5, 2.0],
        }
    }
}

impl ExperimentSection {
    pub fn config(&self, state: TwoPhotonState, seed: u64) -> Result<ExperimentConfig, CliError> {
        let detector = DetectorModel {
            efficiency: self.detector_efficiency,
            dark_rate: self.dark_rate_per_s,
            dead_time: self.dead_time_us * 1e-6,
        };
        let cfg = ExperimentConfig {
            pump_power_mw: self.pump_power_mw,
            brightness: self.brightness_pairs_per_s_per_mw,
            coincidence_window_s: self.coincidence_window_ns * 1e-9,
            integration_time_s: self.integration_s,
            state,
            heralding_s: self.heralding_signal,
            heralding_i: self.heralding_idler,
            detectors: [detector; 2],
            seed,
        };
        cfg.validate().map_err(|e| CliError::Config(format!("[experiment]: {e}")))?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct FitSection {
    pub n_bootstrap: usize,
    pub coincidence_window_ns: f64,
    pub subtract_accidentals: bool,
    /// "theta-pi", "pure" or "none": how (p, x, θ) are reported.
    pub constraint: String,
}

impl Default for FitSection {
    fn default() -> Self {
        Self {
            n_bootstrap: 1000,
            coincidence_window_ns: 4.0,
            subtract_accidentals: true,
            constraint: "theta-pi".into(),
        }
    }
}

impl FitSection {
    pub fn options(&self) -> FitOptions {
        FitOptions {
            coincidence_window_s: self.coincidence_window_ns * 1e-9,
            subtract_accidentals: self.subtract_accidentals,
        }
    }

    pub fn constraint(&self) -> Result<Option<StateConstraint>, CliError> {
        match self.constraint.as_str() {
            "theta-pi" => Ok(Some(StateConstraint::PhaseMinus)),
            "pure" => Ok(Some(StateConstraint::Pure)),
            "none" => Ok(None),
            other => Err(CliError::Config(format!(
                "fit.constraint = {other:?}; expected \"theta-pi\", \"pure\" or \"none\""
            ))),
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ReplicateSection {
    /// Synthetic experiments in the tomography round trip.
    pub runs: usize,
    /// Bootstrap resamples per experiment.
    pub resamples: usize,
}

impl Default for ReplicateSection {
    fn default() -> Self {
        Self {
            runs: 500,
            resamples: 400,
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

/// Parsed configuration plus the raw text it came from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub sha256: String,
    pub path: Option<PathBuf>,
}

impl LoadedConfig {
    pub fn defaults() -> Self {
        Self {
            config: RunConfig::default(),
            sha256: pairsource::materials::sha256_hex(b""),
            path: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut loaded = Self::parse(&text)?;
        loaded.config.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
        loaded.path = Some(path.to_path_buf());
        Ok(loaded)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let config: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(Self {
            config,
            sha256: pairsource::materials::sha256_hex(text.as_bytes()),
            path: None,
        })
    }
}

impl RunConfig {
    /// Unit and range checks that do not need any files.
    pub fn validate(&self) -> Result<(), CliError> {
        let s = &self.source;
        let positive = [
            ("source.pump_nm", s.pump_nm),
            ("source.signal_nm", s.signal_nm),
            ("beams.pump_fwhm_major_um", self.beams.pump_fwhm_major_um),
            ("beams.pump_fwhm_minor_um", self.beams.pump_fwhm_minor_um),
            ("beams.collection_fwhm_um", self.beams.collection_fwhm_um),
            ("compensation.band_step_nm", self.compensation.band_step_nm),
            ("compensation.scan_step_mm", self.compensation.scan_step_mm),
            ("compensation.curve_step_nm", self.compensation.curve_step_nm),
        ];
        for (key, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CliError::Config(format!("{key} = {v} must be positive")));
            }
        }
        let non_negative = [
            ("source.crystal_length_mm", s.crystal_length_mm),
            ("source.compensator_length_mm", s.compensator_length_mm),
            ("source.hwp_mgf2_mm", s.hwp_mgf2_mm),
            ("source.hwp_quartz_mm", s.hwp_quartz_mm),
        ];
        for (key, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(CliError::Config(format!("{key} = {v} must be non-negative")));
            }
        }
        if s.signal_nm <= s.pump_nm {
            return Err(CliError::Config(format!(
                "source.signal_nm = {} must exceed source.pump_nm = {}",
                s.signal_nm, s.pump_nm
            )));
        }
        s.phase_model()?;
        self.fit.constraint()?;
        self.state.state()?;
        if self.experiment.angles_deg.is_empty() {
            return Err(CliError::Config("experiment.angles_deg is empty".into()));
        }
        if self.replicate.runs == 0 {
            return Err(CliError::Config("replicate.runs must be at least 1".into()));
        }
        Ok(())
    }

    pub fn material_db(&self) -> Result<MaterialDb, CliError> {
        match &self.materials.database {
            None => Ok(MaterialDb::builtin()),
            Some(p) => {
                let path = self.base_dir.join(p);
                if !path.exists() {
                    return Err(CliError::Config(format!("material database {} not found", path.display())));
                }
                MaterialDb::load(&path).map_err(|e| CliError::Config(format!("material database {}: {e}", path.display())))
            }
        }
    }

    pub fn idler_nm(&self) -> Result<f64, CliError> {
        pairsource::phasematch::idler_wavelength(self.source.pump_nm, self.source.signal_nm)
            .map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn band(&self) -> Result<(f64, f64), CliError> {
        match self.compensation.band_nm {
            Some([a, b]) => Ok((a.min(b), a.max(b))),
            None => {
                let i = self.idler_nm()?;
                Ok((self.source.signal_nm.min(i), self.source.signal_nm.max(i)))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_reference_setup() {
        let c = LoadedConfig::parse("").unwrap().config;
        assert_eq!(c.source.pump_nm, 405.0);
        assert_eq!(c.experiment.angles_deg.len(), 19);
        let (lo, hi) = c.band().unwrap();
        assert_eq!(lo, 776.0);
        assert!((hi - 847.116).abs() < 1e-3);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_units() {
        assert!(matches!(LoadedConfig::parse("[source]\npump_mm = 1.0"), Err(CliError::Config(_))));
        assert!(matches!(LoadedConfig::parse("[source]\npump_nm = -405.0"), Err(CliError::Config(_))));
        assert!(matches!(LoadedConfig::parse("[fit]\nconstraint = \"maybe\""), Err(CliError::Config(_))));
        assert!(matches!(LoadedConfig::parse("[state]\np = 1.5"), Err(CliError::Config(_))));
    }

    #[test]
    fn checksum_tracks_text() {
        let a = LoadedConfig::parse("[source]\npump_nm = 405.0\n").unwrap();
        let b = LoadedConfig::parse("[source]\npump_nm = 405.0 \n").unwrap();
        assert_ne!(a.sha256, b.sha256);
        assert_eq!(a.config, b.config);
    }
}
