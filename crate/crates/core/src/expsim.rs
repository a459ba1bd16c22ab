//! Synthetic photon-counting experiments.
//!
//! Rates follow a simple detection chain. Pairs are produced at
//! `brightness·power`. Each arm's singles are the pair rate divided by the
//! partner arm's heralding efficiency, scaled by the analyzer's marginal
//! transmission, plus the dark rate. Every detector is non-paralyzable with
//! live fraction `1/(1 + S·τ_d)`, and true coincidences are scaled by both
//! live fractions. Accidentals are `D₁·D₂·τ` from the detected singles, so
//! dark counts enter the coincidences through that term only.
//!
//! Draws are Poisson. Point `k` of a sweep uses its own ChaCha8 stream
//! derived from `(seed, sweep tag, k)`, so output is independent of the
//! evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use thiserror::Error;

use crate::qstate::{marginal_pass_probability, single_polarizer_rate, two_polarizer_rate, AnalyzerBasis, CorrelationBasis, TwoPhotonState};
use crate::tomofit::{MeasurementRecord, Singles};

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid experiment parameter: {0}")]
    Parameter(String),

    #[error("heralding efficiency of the {arm} arm is zero; singles would be infinite (set a value in (0, 1])")]
    ZeroHeralding { arm: &'static str },

    #[error("singles ({singles}) must exceed dark counts ({dark})")]
    SinglesBelowDark { singles: f64, dark: f64 },

    #[error("sweep needs at least one angle")]
    NoAngles,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorModel {
    /// Relative detection factor applied on top of the brightness, which is
    /// already a detected rate. 1 leaves rates unchanged.
    pub efficiency: f64,
    pub dark_rate: f64,
    pub dead_time: f64,
}

impl DetectorModel {
    pub const DEFAULT_DARK_RATE: f64 = 100.0;
    pub const DEFAULT_DEAD_TIME: f64 = 1e-6;

    /// No darks and no dead time.
    pub fn ideal() -> Self {
        Self {
            efficiency: 1.0,
            dark_rate: 0.0,
            dead_time: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(0.0..=1.0).contains(&self.efficiency) {
            return Err(SimError::Parameter(format!("efficiency {} outside [0, 1]", self.efficiency)));
        }
        if !(self.dark_rate >= 0.0 && self.dark_rate.is_finite()) {
            return Err(SimError::Parameter(format!("dark rate {} /s", self.dark_rate)));
        }
        if !(self.dead_time >= 0.0 && self.dead_time.is_finite()) {
            return Err(SimError::Parameter(format!("dead time {} s", self.dead_time)));
        }
        Ok(())
    }
}

impl Default for DetectorModel {
    fn default() -> Self {
        Self {
            efficiency: 1.0,
            dark_rate: Self::DEFAULT_DARK_RATE,
            dead_time: Self::DEFAULT_DEAD_TIME,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExperimentConfig {
    pub pump_power_mw: f64,
    /// Detected pairs per second per mW.
    pub brightness: f64,
    pub coincidence_window_s: f64,
    pub integration_time_s: f64,
    pub state: TwoPhotonState,
    /// Coincidences over idler singles.
    pub heralding_s: f64,
    /// Coincidences over signal singles.
    pub heralding_i: f64,
    /// Signal, idler.
    pub detectors: [DetectorModel; 2],
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            pump_power_mw: 0.1,
            brightness: 65_000.0,
            coincidence_window_s: 4e-9,
            integration_time_s: 1.0,
            state: TwoPhotonState::phi_minus(),
            heralding_s: 0.27,
            heralding_i: 0.22,
            detectors: [DetectorModel::default(); 2],
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let nonneg = [
            ("pump power", self.pump_power_mw),
            ("brightness", self.brightness),
            ("integration time", self.integration_time_s),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(SimError::Parameter(format!("{name} = {v} must be non-negative")));
            }
        }
        if !(self.coincidence_window_s > 0.0 && self.coincidence_window_s.is_finite()) {
            return Err(SimError::Parameter(format!(
                "coincidence window {} s must be positive",
                self.coincidence_window_s
            )));
        }
        for (arm, h) in [("signal", self.heralding_s), ("idler", self.heralding_i)] {
            if h == 0.0 {
                return Err(SimError::ZeroHeralding { arm });
            }
            if !(0.0..=1.0).contains(&h) {
                return Err(SimError::Parameter(format!("{arm} heralding efficiency {h} outside (0, 1]")));
            }
        }
        self.detectors.iter().try_for_each(DetectorModel::validate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rates {
    pub pair: f64,
    pub singles_s: f64,
    pub singles_i: f64,
}

/// Source rates before analyzers and detectors.
pub fn true_rates(cfg: &ExperimentConfig) -> Result<Rates, SimError> {
    cfg.validate()?;
    let pair = cfg.brightness * cfg.pump_power_mw;
    Ok(Rates {
        pair,
        singles_s: pair / cfg.heralding_i,
        singles_i: pair / cfg.heralding_s,
    })
}

/// `S₁·S₂·τ`.
pub fn accidental_rate(singles_1: f64, singles_2: f64, window_s: f64) -> f64 {
    singles_1 * singles_2 * window_s
}

/// Non-paralyzable dead time: `r/(1 + r·τ)`.
pub fn saturate(true_rate: f64, dead_time: f64) -> f64 {
    true_rate / (1.0 + true_rate * dead_time)
}

/// `coincidences/(singles − dark)`.
pub fn heralding_efficiency(coincidences: f64, singles: f64, dark: f64) -> Result<f64, SimError> {
    if singles <= dark {
        return Err(SimError::SinglesBelowDark { singles, dark });
    }
    Ok(coincidences / (singles - dark))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Analyzer {
    None,
    /// One polarizer in front of both photons.
    Single { angle_deg: f64 },
    /// Independent analyzers on signal and idler.
    Pair {
        signal_deg: f64,
        idler_deg: f64,
        family: AnalyzerBasis,
    },
}

/// Mean detected rates in counts/s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectedRates {
    /// True coincidences after dead time.
    pub pairs: f64,
    pub accidentals: f64,
    pub singles_s: f64,
    pub singles_i: f64,
}

impl DetectedRates {
    pub fn coincidences(&self) -> f64 {
        self.pairs + self.accidentals
    }
}

pub fn detected_rates(cfg: &ExperimentConfig, analyzer: Analyzer) -> Result<DetectedRates, SimError> {
    let r = true_rates(cfg)?;
    let s = &cfg.state;
    let (joint, m_s, m_i) = match analyzer {
        Analyzer::None => (1.0, 1.0, 1.0),
        Analyzer::Single { angle_deg } => (
            single_polarizer_rate(s, angle_deg),
            marginal_pass_probability(s, angle_deg),
            marginal_pass_probability(s, angle_deg),
        ),
        Analyzer::Pair {
            signal_deg,
            idler_deg,
            family,
        } => (
            two_polarizer_rate(s, signal_deg, idler_deg, family),
            marginal_pass_probability(s, signal_deg),
            marginal_pass_probability(s, idler_deg),
        ),
    };
    let [ds, di] = cfg.detectors;
    let in_s = ds.efficiency * r.singles_s * m_s + ds.dark_rate;
    let in_i = di.efficiency * r.singles_i * m_i + di.dark_rate;
    let live_s = 1.0 / (1.0 + in_s * ds.dead_time);
    let live_i = 1.0 / (1.0 + in_i * di.dead_time);
    let singles_s = saturate(in_s, ds.dead_time);
    let singles_i = saturate(in_i, di.dead_time);
    Ok(DetectedRates {
        pairs: r.pair * joint * ds.efficiency * di.efficiency * live_s * live_i,
        accidentals: accidental_rate(singles_s, singles_i, cfg.coincidence_window_s),
        singles_s,
        singles_i,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CountSample {
    pub coincidences: u64,
    pub singles_s: u64,
    pub singles_i: u64,
}

/// Stream tags keep different sweep types of one seed independent.
const TAG_SINGLE: u64 = 0;
const TAG_UNANALYZED: u64 = 4;

fn basis_tag(basis: CorrelationBasis) -> u64 {
    match basis {
        CorrelationBasis::HV => 1,
        CorrelationBasis::DA => 2,
        CorrelationBasis::LR => 3,
    }
}

fn point_rng(seed: u64, tag: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((tag << 32) | index as u64);
    rng
}

fn poisson(mean: f64, rng: &mut ChaCha8Rng) -> u64 {
    if mean > 0.0 {
        Poisson::new(mean).expect("finite positive mean").sample(rng) as u64
    } else {
        0
    }
}

fn draw(cfg: &ExperimentConfig, analyzer: Analyzer, tag: u64, index: usize) -> Result<CountSample, SimError> {
    let d = detected_rates(cfg, analyzer)?;
    let t = cfg.integration_time_s;
    let mut rng = point_rng(cfg.seed, tag, index);
    Ok(CountSample {
        coincidences: poisson(d.coincidences() * t, &mut rng),
        singles_s: poisson(d.singles_s * t, &mut rng),
        singles_i: poisson(d.singles_i * t, &mut rng),
    })
}

/// One integration window without analyzers; `index` selects the stream.
pub fn generate_counts(cfg: &ExperimentConfig, index: usize) -> Result<CountSample, SimError> {
    draw(cfg, Analyzer::None, TAG_UNANALYZED, index)
}

fn assemble(cfg: &ExperimentConfig, angles: &[f64], samples: Vec<CountSample>) -> MeasurementRecord {
    MeasurementRecord {
        angles_deg: angles.to_vec(),
        coincidences: samples.iter().map(|s| s.coincidences).collect(),
        integration_s: vec![cfg.integration_time_s; angles.len()],
        singles: Some(Singles {
            signal: samples.iter().map(|s| s.singles_s).collect(),
            idler: samples.iter().map(|s| s.singles_i).collect(),
        }),
    }
}

/// Single-polarizer sweep. The mean coincidence count at `α` is
/// `pair rate × single_polarizer_rate(α) × T`, reduced by dead time, plus
/// accidentals.
pub fn generate_sweep(cfg: &ExperimentConfig, angles_deg: &[f64]) -> Result<MeasurementRecord, SimError> {
    if angles_deg.is_empty() {
        return Err(SimError::NoAngles);
    }
    let samples = angles_deg
        .iter()
        .enumerate()
        .map(|(k, &a)| draw(cfg, Analyzer::Single { angle_deg: a }, TAG_SINGLE, k))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(assemble(cfg, angles_deg, samples))
}

/// Two-analyzer sweep of the idler setting in `basis`.
pub fn generate_two_polarizer_sweep(
    cfg: &ExperimentConfig,
    basis: CorrelationBasis,
    angles_deg: &[f64],
) -> Result<MeasurementRecord, SimError> {
    if angles_deg.is_empty() {
        return Err(SimError::NoAngles);
    }
    let (signal_deg, family) = basis.fixed_analyzer();
    let samples = angles_deg
        .iter()
        .enumerate()
        .map(|(k, &g)| {
            let analyzer = Analyzer::Pair {
                signal_deg,
                idler_deg: g,
                family,
            };
            draw(cfg, analyzer, basis_tag(basis), k)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(assemble(cfg, angles_deg, samples))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerPoint {
    pub pump_power_mw: f64,
    /// Expected detected coincidence rate, accidentals included.
    pub detected: f64,
    /// The same chain without dead time, proportional to power.
    pub linear: f64,
}

impl PowerPoint {
    /// Fractional shortfall below the linear rate.
    pub fn deficit(&self) -> f64 {
        1.0 - self.detected / self.linear
    }
}

/// Coincidence rate against pump power for the configured analyzer.
pub fn power_scan(cfg: &ExperimentConfig, powers_mw: &[f64], analyzer: Analyzer) -> Result<Vec<PowerPoint>, SimError> {
    let mut unsaturated = *cfg;
    for d in unsaturated.detectors.iter_mut() {
        d.dead_time = 0.0;
    }
    powers_mw
        .iter()
        .map(|&p| {
            let at = |c: &ExperimentConfig| -> Result<f64, SimError> {
                let mut c = *c;
                c.pump_power_mw = p;
                Ok(detected_rates(&c, analyzer)?.pairs)
            };
            Ok(PowerPoint {
                pump_power_mw: p,
                detected: at(cfg)?,
                linear: at(&unsaturated)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn quiet(cfg: ExperimentConfig) -> ExperimentConfig {
        ExperimentConfig {
            detectors: [DetectorModel::ideal(); 2],
            ..cfg
        }
    }

    #[test]
    fn source_rates() {
        let r = true_rates(&ExperimentConfig::default()).unwrap();
        assert!((r.pair - 6500.0).abs() < 1e-9);
        assert!((r.singles_s - 6500.0 / 0.22).abs() < 1e-6);
        let cfg = ExperimentConfig {
            heralding_s: 1.0,
            heralding_i: 1.0,
            ..Default::default()
        };
        let r = true_rates(&cfg).unwrap();
        assert_eq!((r.singles_s, r.singles_i), (r.pair, r.pair));
        let r = true_rates(&ExperimentConfig {
            pump_power_mw: 0.0,
            ..Default::default()
        })
        .unwrap();
        assert_eq!((r.pair, r.singles_s, r.singles_i), (0.0, 0.0, 0.0));
        let bad = ExperimentConfig {
            heralding_i: 0.0,
            ..Default::default()
        };
        assert_eq!(true_rates(&bad).unwrap_err(), SimError::ZeroHeralding { arm: "idler" });
    }

    #[test]
    fn accidentals_and_saturation() {
        assert!((accidental_rate(1e5, 1e5, 4e-9) - 40.0).abs() < 1e-9);
        assert_eq!(accidental_rate(0.0, 1e5, 4e-9), 0.0);
        assert!((accidental_rate(2e5, 2e5, 4e-9) - 4.0 * accidental_rate(1e5, 1e5, 4e-9)).abs() < 1e-9);
        assert_eq!(saturate(1234.5, 0.0), 1234.5);
        assert_eq!(saturate(1e6, 1e-6), 5e5);
    }

    #[test]
    fn heralding_inputs() {
        assert_eq!(heralding_efficiency(100.0, 100.0, 0.0).unwrap(), 1.0);
        assert_eq!(heralding_efficiency(0.0, 100.0, 10.0).unwrap(), 0.0);
        assert!(heralding_efficiency(1.0, 10.0, 10.0).is_err());
    }

    #[test]
    fn heralding_recovered_from_synthetic_counts() {
        let cfg = ExperimentConfig {
            detectors: [DetectorModel {
                dead_time: 0.0,
                ..Default::default()
            }; 2],
            seed: 11,
            ..Default::default()
        };
        let s = generate_counts(&cfg, 0).unwrap();
        let dark = cfg.detectors[1].dark_rate * cfg.integration_time_s;
        let h = heralding_efficiency(s.coincidences as f64, s.singles_i as f64, dark).unwrap();
        let sigma = (0.27 * 0.73 / s.singles_i as f64).sqrt() + 0.27 / (s.coincidences as f64).sqrt();
        assert!((h - 0.27).abs() < 3.0 * sigma, "{h}");
    }

    #[test]
    fn phi_minus_null_and_phi_plus_flat() {
        let cfg = quiet(ExperimentConfig::default());
        let d = detected_rates(&cfg, Analyzer::Single { angle_deg: 45.0 }).unwrap();
        assert!(d.pairs.abs() < 1e-9);
        let plus = ExperimentConfig {
            state: TwoPhotonState::phi_plus(),
            ..ExperimentConfig::default()
        };
        let means: Vec<f64> = (-90..=90)
            .step_by(5)
            .map(|a| detected_rates(&plus, Analyzer::Single { angle_deg: a as f64 }).unwrap().coincidences())
            .collect();
        let spread = means.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - means.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(spread < 1e-9 * means[0], "{spread}");
    }

    #[test]
    fn seeded_sweeps_are_reproducible() {
        let cfg = ExperimentConfig {
            seed: 99,
            ..Default::default()
        };
        let angles: Vec<f64> = (-9..=9).map(|k| 10.0 * k as f64).collect();
        let a = generate_sweep(&cfg, &angles).unwrap();
        let b = generate_sweep(&cfg, &angles).unwrap();
        assert_eq!(a, b);
        // Each point depends only on its own index.
        let tail = generate_sweep(&cfg, &angles[..5]).unwrap();
        assert_eq!(&a.coincidences[..5], &tail.coincidences[..]);
        let other = generate_sweep(&ExperimentConfig { seed: 100, ..cfg }, &angles).unwrap();
        assert_ne!(a.coincidences, other.coincidences);
        assert_eq!(generate_sweep(&cfg, &[]).unwrap_err(), SimError::NoAngles);
    }

    #[test]
    fn total_counts_scale_with_integration() {
        let angles: Vec<f64> = (-9..=9).map(|k| 10.0 * k as f64).collect();
        let base = ExperimentConfig {
            state: TwoPhotonState::new(0.95, 0.5, PI).unwrap(),
            ..Default::default()
        };
        for t in [0.5, 2.0] {
            let cfg = ExperimentConfig {
                integration_time_s: t,
                ..base
            };
            let expect: f64 = angles
                .iter()
                .map(|&a| detected_rates(&cfg, Analyzer::Single { angle_deg: a }).unwrap().coincidences() * t)
                .sum();
            let runs = 200;
            let mean = (0..runs)
                .map(|s| {
                    let c = ExperimentConfig { seed: s, ..cfg };
                    generate_sweep(&c, &angles).unwrap().coincidences.iter().sum::<u64>() as f64
                })
                .sum::<f64>()
                / runs as f64;
            let se = (expect / runs as f64).sqrt();
            assert!((mean - expect).abs() < 3.0 * se, "T = {t}: {mean} vs {expect}");
        }
    }

    #[test]
    fn saturation_with_default_dead_time() {
        let cfg = ExperimentConfig::default();
        let pts = power_scan(&cfg, &[0.1, 2.0], Analyzer::Single { angle_deg: 0.0 }).unwrap();
        assert!(pts[0].deficit() < 0.05, "{:?}", pts[0]);
        assert!(pts[1].deficit() > 0.20, "{:?}", pts[1]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn saturate_monotone_concave_bounded(r in 0.0f64..1e8, dr in 1.0f64..1e6, tau in 1e-9f64..1e-5) {
                let f = |x: f64| saturate(x, tau);
                prop_assert!(f(r + dr) > f(r));
                prop_assert!(f(r + dr) - f(r) <= f(r) - f((r - dr).max(0.0)) + 1e-9 || r < dr);
                prop_assert!(f(r) <= r.min(1.0 / tau) * (1.0 + 1e-12));
            }

            #[test]
            fn accidental_bilinear(a in 0.0f64..1e6, b in 0.0f64..1e6, k in 0.0f64..10.0) {
                let base = accidental_rate(a, b, 4e-9);
                prop_assert!((accidental_rate(k * a, b, 4e-9) - k * base).abs() <= 1e-9 * base.max(1.0) * k.max(1.0));
            }

            #[test]
            fn heralding_inverts_true_rates(hs in 0.05f64..1.0, hi in 0.05f64..1.0, p in 0.01f64..2.0) {
                let cfg = quiet(ExperimentConfig { heralding_s: hs, heralding_i: hi, pump_power_mw: p, ..Default::default() });
                let d = detected_rates(&cfg, Analyzer::None).unwrap();
                let h = heralding_efficiency(d.pairs, d.singles_i, 0.0).unwrap();
                prop_assert!((h - hs).abs() < 1e-12);
                let h = heralding_efficiency(d.pairs, d.singles_s, 0.0).unwrap();
                prop_assert!((h - hi).abs() < 1e-12);
            }
        }
    }
}
