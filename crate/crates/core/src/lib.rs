//! Design and analysis toolkit for two-crystal, parallel-axis, type-I
//! polarization-entangled photon-pair sources.
//!
//! The modules follow the pipeline: dispersion ([`materials`]) feeds phase
//! matching ([`phasematch`]), stack geometry ([`layout`]) and the relative
//! phase model ([`phasecomp`]); [`qstate`] predicts polarization correlations
//! for the resulting two-photon state, [`expsim`] turns those predictions
//! into photon counts, and [`tomofit`] recovers the Bell-state fidelity from
//! counts with bootstrap uncertainties.

pub mod expsim;
pub mod layout;
pub mod lsq;
pub mod materials;
pub mod phasecomp;
pub mod phasematch;
pub mod qstate;
pub mod scalar;
pub mod tomofit;

pub use materials::{Material, MaterialDb, MaterialError, PolarizationClass};
pub use phasematch::{PhaseMatchError, PhaseMatchSpec};
pub use qstate::TwoPhotonState;
