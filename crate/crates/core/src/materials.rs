//! Dispersion of uniaxial media.
//!
//! Principal indices come from Sellmeier-type formulas stored in a plain-text
//! (TOML) database; see `data/materials.toml` for the shipped records and the
//! supported forms. Wavelengths are vacuum wavelengths in nanometres at every
//! public boundary and are converted to micrometres only for formula
//! evaluation. Angles are in degrees, measured from the optic axis.

use std::fmt;
use std::path::Path;

use serde::Deserialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Contents of the shipped material database.
pub const BUILTIN_DATABASE: &str = include_str!("../data/materials.toml");

/// SHA-256 of [`BUILTIN_DATABASE`], pinned so silent coefficient edits fail CI.
pub const BUILTIN_DATABASE_SHA256: &str =
    "d83a5bbaf865983676207ab68499c9313131122e66941cfc02c4cf275d09e452";

const SUPPORTED_FORMAT: u32 = 1;

#[derive(Debug, Error)]
pub enum MaterialError {
    #[error("{material}: wavelength {wavelength_nm} nm is outside the valid range [{min_nm}, {max_nm}] nm")]
    OutOfRange {
        material: String,
        wavelength_nm: f64,
        min_nm: f64,
        max_nm: f64,
    },

    #[error("angle {angle_deg} deg is outside [0, 90] deg")]
    AngleDomain { angle_deg: f64 },

    #[error("material not found: {0}")]
    NotFound(String),

    #[error("material database: {0}")]
    Database(String),

    #[error("reading material database {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Polarization eigenmode of a uniaxial crystal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PolarizationClass {
    Ordinary,
    Extraordinary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UniaxialSign {
    /// n_e > n_o
    Positive,
    /// n_o > n_e
    Negative,
}

/// Which way the extraordinary Poynting vector leans relative to the
/// wavevector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WalkoffDirection {
    TowardAxis,
    AwayFromAxis,
}

/// A dispersion formula evaluated in micrometres, returning n².
#[derive(Debug, Clone, PartialEq)]
pub enum Sellmeier {
    /// n² = a + b / (λ² − c) − d·λ²
    Quadratic { a: f64, b: f64, c: f64, d: f64 },
    /// n² = a + Σ b_k λ² / (λ² − c_k), c_k in µm²
    Poles { a: f64, terms: Vec<(f64, f64)> },
}

impl Sellmeier {
    pub fn n_squared(&self, wavelength_um: f64) -> f64 {
        let l2 = wavelength_um * wavelength_um;
        match self {
            Sellmeier::Quadratic { a, b, c, d } => a + b / (l2 - c) - d * l2,
            Sellmeier::Poles { a, terms } => {
                a + terms.iter().map(|(b, c)| b * l2 / (l2 - c)).sum::<f64>()
            }
        }
    }
}

/// A named uniaxial medium with its principal dispersion.
#[derive(Debug, Clone, PartialEq)]
pub struct Material {
    pub id: String,
    pub name: String,
    pub source: String,
    pub sign: UniaxialSign,
    /// Validity window in nm, inclusive.
    pub valid_nm: (f64, f64),
    pub ordinary: Sellmeier,
    pub extraordinary: Sellmeier,
}

impl Material {
    fn check_wavelength(&self, wavelength_nm: f64) -> Result<(), MaterialError> {
        let (lo, hi) = self.valid_nm;
        if !(wavelength_nm >= lo && wavelength_nm <= hi) {
            return Err(MaterialError::OutOfRange {
                material: self.id.clone(),
                wavelength_nm,
                min_nm: lo,
                max_nm: hi,
            });
        }
        Ok(())
    }

    /// Principal refractive index for the given eigenmode.
    pub fn refractive_index(
        &self,
        pol: PolarizationClass,
        wavelength_nm: f64,
    ) -> Result<f64, MaterialError> {
        self.check_wavelength(wavelength_nm)?;
        let formula = match pol {
            PolarizationClass::Ordinary => &self.ordinary,
            PolarizationClass::Extraordinary => &self.extraordinary,
        };
        Ok(formula.n_squared(wavelength_nm * 1e-3).sqrt())
    }

    pub fn n_o(&self, wavelength_nm: f64) -> Result<f64, MaterialError> {
        self.refractive_index(PolarizationClass::Ordinary, wavelength_nm)
    }

    pub fn n_e(&self, wavelength_nm: f64) -> Result<f64, MaterialError> {
        self.refractive_index(PolarizationClass::Extraordinary, wavelength_nm)
    }

    /// Index seen by an extraordinary wave whose wavevector makes
    /// `angle_deg` with the optic axis: 1/n² = cos²θ/n_o² + sin²θ/n_e².
    pub fn effective_extraordinary_index(
        &self,
        angle_deg: f64,
        wavelength_nm: f64,
    ) -> Result<f64, MaterialError> {
        check_angle(angle_deg)?;
        let (no, ne) = (self.n_o(wavelength_nm)?, self.n_e(wavelength_nm)?);
        Ok(index_ellipsoid(no, ne, angle_deg.to_radians()))
    }

    /// Magnitude of the angle between the extraordinary Poynting vector and
    /// its wavevector, in degrees. See [`Material::walkoff_direction`] for
    /// the sense.
    pub fn walkoff_angle(&self, angle_deg: f64, wavelength_nm: f64) -> Result<f64, MaterialError> {
        check_angle(angle_deg)?;
        let (no, ne) = (self.n_o(wavelength_nm)?, self.n_e(wavelength_nm)?);
        let theta = angle_deg.to_radians();
        let n = index_ellipsoid(no, ne, theta);
        let tan_rho = 0.5 * n * n * (2.0 * theta).sin() * (1.0 / (ne * ne) - 1.0 / (no * no)).abs();
        Ok(tan_rho.atan().to_degrees())
    }

    /// Negative crystals push extraordinary energy away from the optic axis,
    /// positive crystals toward it.
    pub fn walkoff_direction(&self) -> WalkoffDirection {
        match self.sign {
            UniaxialSign::Negative => WalkoffDirection::AwayFromAxis,
            UniaxialSign::Positive => WalkoffDirection::TowardAxis,
        }
    }

    /// n_e − n_o.
    pub fn birefringence(&self, wavelength_nm: f64) -> Result<f64, MaterialError> {
        Ok(self.n_e(wavelength_nm)? - self.n_o(wavelength_nm)?)
    }
}

fn check_angle(angle_deg: f64) -> Result<(), MaterialError> {
    if !(0.0..=90.0).contains(&angle_deg) {
        return Err(MaterialError::AngleDomain { angle_deg });
    }
    Ok(())
}

fn index_ellipsoid(no: f64, ne: f64, theta: f64) -> f64 {
    let (s, c) = theta.sin_cos();
    1.0 / (c * c / (no * no) + s * s / (ne * ne)).sqrt()
}

// On-disk layout. Converted to the public types after validation.

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDatabase {
    format_version: u32,
    material: Vec<RawMaterial>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMaterial {
    id: String,
    name: String,
    sign: UniaxialSign,
    valid_nm: [f64; 2],
    source: String,
    ordinary: RawSellmeier,
    extraordinary: RawSellmeier,
}

#[derive(Deserialize)]
#[serde(tag = "form", rename_all = "lowercase", deny_unknown_fields)]
enum RawSellmeier {
    Quadratic { a: f64, b: f64, c: f64, d: f64 },
    Poles { a: f64, terms: Vec<RawPole> },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPole {
    b: f64,
    c: Option<f64>,
    resonance_um: Option<f64>,
}

impl RawSellmeier {
    fn into_sellmeier(self, ctx: &str) -> Result<Sellmeier, MaterialError> {
        Ok(match self {
            RawSellmeier::Quadratic { a, b, c, d } => Sellmeier::Quadratic { a, b, c, d },
            RawSellmeier::Poles { a, terms } => {
                let terms = terms
                    .into_iter()
                    .map(|t| match (t.c, t.resonance_um) {
                        (Some(c), None) => Ok((t.b, c)),
                        (None, Some(r)) => Ok((t.b, r * r)),
                        _ => Err(MaterialError::Database(format!(
                            "{ctx}: each pole needs exactly one of `c` or `resonance_um`"
                        ))),
                    })
                    .collect::<Result<_, _>>()?;
                Sellmeier::Poles { a, terms }
            }
        })
    }
}

/// An immutable set of materials plus the checksum of the text it came from.
#[derive(Debug, Clone)]
pub struct MaterialDb {
    materials: Vec<Material>,
    sha256: String,
}

impl MaterialDb {
    /// The shipped database.
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_DATABASE).expect("shipped material database is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, MaterialError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| MaterialError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, MaterialError> {
        let raw: RawDatabase =
            toml::from_str(text).map_err(|e| MaterialError::Database(e.to_string()))?;
        if raw.format_version != SUPPORTED_FORMAT {
            return Err(MaterialError::Database(format!(
                "unsupported format_version {} (expected {SUPPORTED_FORMAT})",
                raw.format_version
            )));
        }
        let mut materials = Vec::with_capacity(raw.material.len());
        for m in raw.material {
            if materials.iter().any(|x: &Material| x.id == m.id) {
                return Err(MaterialError::Database(format!("duplicate material id {}", m.id)));
            }
            let [lo, hi] = m.valid_nm;
            if !(lo > 0.0 && hi > lo) {
                return Err(MaterialError::Database(format!(
                    "{}: invalid validity window [{lo}, {hi}] nm",
                    m.id
                )));
            }
            let material = Material {
                ordinary: m.ordinary.into_sellmeier(&m.id)?,
                extraordinary: m.extraordinary.into_sellmeier(&m.id)?,
                id: m.id,
                name: m.name,
                source: m.source,
                sign: m.sign,
                valid_nm: (lo, hi),
            };
            validate(&material)?;
            materials.push(material);
        }
        Ok(Self {
            materials,
            sha256: sha256_hex(text.as_bytes()),
        })
    }

    pub fn get(&self, id: &str) -> Result<&Material, MaterialError> {
        self.materials
            .iter()
            .find(|m| m.id == id)
            .ok_or_else(|| MaterialError::NotFound(id.to_string()))
    }

    pub fn materials(&self) -> &[Material] {
        &self.materials
    }

    /// Hex SHA-256 of the database text.
    pub fn checksum(&self) -> &str {
        &self.sha256
    }

    pub fn is_builtin(&self) -> bool {
        self.sha256 == BUILTIN_DATABASE_SHA256
    }
}

/// Indices must be real, above 1 and ordered per the declared sign across
/// the whole validity window.
fn validate(m: &Material) -> Result<(), MaterialError> {
    const SAMPLES: usize = 200;
    let (lo, hi) = m.valid_nm;
    for i in 0..=SAMPLES {
        let wl = lo + (hi - lo) * i as f64 / SAMPLES as f64;
        let no = m.n_o(wl)?;
        let ne = m.n_e(wl)?;
        if !(no.is_finite() && ne.is_finite() && no > 1.0 && ne > 1.0) {
            return Err(MaterialError::Database(format!(
                "{}: non-physical index at {wl} nm (n_o = {no}, n_e = {ne})",
                m.id
            )));
        }
        let ordered = match m.sign {
            UniaxialSign::Negative => no > ne,
            UniaxialSign::Positive => ne > no,
        };
        if !ordered {
            return Err(MaterialError::Database(format!(
                "{}: index ordering contradicts declared sign at {wl} nm",
                m.id
            )));
        }
    }
    Ok(())
}

/// Lower-case hex SHA-256 digest.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            use fmt::Write;
            let _ = write!(s, "{b:02x}");
            s
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn bbo() -> Material {
        MaterialDb::builtin().get("BBO").unwrap().clone()
    }

    // Independent evaluation of the tabulated BBO polynomial.
    fn bbo_oracle(wl_nm: f64) -> (f64, f64) {
        let u = (wl_nm / 1000.0).powi(2);
        (
            (2.7405 + 0.0184 / (u - 0.0179) - 0.0155 * u).sqrt(),
            (2.3730 + 0.0128 / (u - 0.0156) - 0.0044 * u).sqrt(),
        )
    }

    #[test]
    fn builtin_checksum_is_pinned() {
        assert_eq!(sha256_hex(BUILTIN_DATABASE.as_bytes()), BUILTIN_DATABASE_SHA256);
        assert!(MaterialDb::builtin().is_builtin());
    }

    #[test]
    fn bbo_principal_indices() {
        let m = bbo();
        let (no, ne) = bbo_oracle(810.0);
        assert_relative_eq!(m.n_o(810.0).unwrap(), no, epsilon = 1e-14);
        assert_relative_eq!(m.n_e(810.0).unwrap(), ne, epsilon = 1e-14);
        // Published tables: n_o ≈ 1.6606, n_e ≈ 1.5441 near 800 nm.
        assert!((m.n_o(810.0).unwrap() - 1.660).abs() < 2e-3);
        assert!((m.n_e(810.0).unwrap() - 1.544).abs() < 3e-3);
    }

    #[test]
    fn out_of_range_names_material_and_bounds() {
        let err = bbo().n_o(2000.0).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("BBO") && msg.contains("220") && msg.contains("1060"), "{msg}");
    }

    #[test]
    fn effective_index_endpoints() {
        let m = bbo();
        for wl in [405.0, 810.0] {
            assert_relative_eq!(m.effective_extraordinary_index(0.0, wl).unwrap(), m.n_o(wl).unwrap(), epsilon = 1e-15);
            assert_relative_eq!(
                m.effective_extraordinary_index(90.0, wl).unwrap(),
                m.n_e(wl).unwrap(),
                epsilon = 1e-15
            );
        }
        let n = m.effective_extraordinary_index(28.8, 405.0).unwrap();
        let (no, ne) = bbo_oracle(405.0);
        let t = 28.8f64.to_radians();
        let oracle = (t.cos().powi(2) / (no * no) + t.sin().powi(2) / (ne * ne)).powf(-0.5);
        assert_relative_eq!(n, oracle, epsilon = 1e-14);
        assert!((n - 1.661).abs() < 1e-3);
    }

    #[test]
    fn angle_domain_errors() {
        let m = bbo();
        assert!(matches!(
            m.effective_extraordinary_index(-1.0, 810.0),
            Err(MaterialError::AngleDomain { .. })
        ));
        assert!(matches!(m.walkoff_angle(90.5, 810.0), Err(MaterialError::AngleDomain { .. })));
    }

    #[test]
    fn walkoff_values() {
        let m = bbo();
        assert_eq!(m.walkoff_angle(0.0, 405.0).unwrap(), 0.0);
        assert!(m.walkoff_angle(90.0, 405.0).unwrap().abs() < 1e-12);
        let rho = m.walkoff_angle(28.8, 405.0).unwrap();
        assert!((rho - 3.8).abs() < 0.1, "{rho}");
        assert_eq!(m.walkoff_direction(), WalkoffDirection::AwayFromAxis);
    }

    #[test]
    fn walkoff_matches_numerical_poynting_direction() {
        // The walk-off equals the angle between k and the normal to the index
        // surface; here via finite differences of 1/n(θ) in polar form.
        let m = bbo();
        let wl = 405.0;
        for angle in [10.0, 28.8, 45.0, 70.0] {
            let h = 1e-5;
            let inv = |a: f64| 1.0 / m.effective_extraordinary_index(a, wl).unwrap();
            let r = inv(angle);
            let dr = (inv(angle + h) - inv(angle - h)) / (2.0 * h.to_radians());
            let fd = (dr / r).atan().to_degrees().abs();
            assert_relative_eq!(m.walkoff_angle(angle, wl).unwrap(), fd, epsilon = 1e-6);
        }
    }

    #[test]
    fn sign_ordering_and_normal_dispersion() {
        let db = MaterialDb::builtin();
        for m in db.materials() {
            // Visible/NIR part of each window.
            let lo = m.valid_nm.0.max(400.0);
            let hi = m.valid_nm.1.min(1000.0);
            let grid: Vec<f64> = (0..=60).map(|i| lo + (hi - lo) * i as f64 / 60.0).collect();
            for pol in [PolarizationClass::Ordinary, PolarizationClass::Extraordinary] {
                let n: Vec<f64> = grid.iter().map(|&w| m.refractive_index(pol, w).unwrap()).collect();
                assert!(n.windows(2).all(|w| w[1] < w[0]), "{} {pol:?} not normal", m.id);
            }
            for &w in &grid {
                let (no, ne) = (m.n_o(w).unwrap(), m.n_e(w).unwrap());
                match m.sign {
                    UniaxialSign::Negative => assert!(no > ne),
                    UniaxialSign::Positive => assert!(ne > no),
                }
            }
        }
    }

    #[test]
    fn compensator_and_waveplate_media_present() {
        let db = MaterialDb::builtin();
        let yvo = db.get("YVO4").unwrap();
        assert!((1.96..2.00).contains(&yvo.n_o(810.0).unwrap()));
        assert!(db.get("MgF2").is_ok() && db.get("quartz").is_ok());
        assert!(matches!(db.get("LiNbO3"), Err(MaterialError::NotFound(_))));
    }

    #[test]
    fn rejects_malformed_databases() {
        let bad_sign = BUILTIN_DATABASE.replacen("sign = \"negative\"", "sign = \"positive\"", 1);
        assert!(matches!(MaterialDb::parse(&bad_sign), Err(MaterialError::Database(_))));

        let bad_version = BUILTIN_DATABASE.replacen("format_version = 1", "format_version = 7", 1);
        assert!(MaterialDb::parse(&bad_version).is_err());

        let both = BUILTIN_DATABASE.replacen(
            "{ b = 1.07044083, c = 1.00585997e-2 }",
            "{ b = 1.07044083, c = 1.00585997e-2, resonance_um = 0.1 }",
            1,
        );
        assert!(MaterialDb::parse(&both).is_err());

        let edited = BUILTIN_DATABASE.replacen("a = 2.7405", "a = 2.7406", 1);
        let db = MaterialDb::parse(&edited).unwrap();
        assert!(!db.is_builtin());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn effective_index_is_bounded(angle in 0.0f64..=90.0, wl in 400.0f64..1000.0) {
                let m = bbo();
                let n = m.effective_extraordinary_index(angle, wl).unwrap();
                let (no, ne) = (m.n_o(wl).unwrap(), m.n_e(wl).unwrap());
                prop_assert!(n >= no.min(ne) - 1e-15 && n <= no.max(ne) + 1e-15);
            }

            #[test]
            fn walkoff_is_continuous(angle in 0.0f64..89.99, wl in 400.0f64..1000.0) {
                let m = bbo();
                let a = m.walkoff_angle(angle, wl).unwrap();
                let b = m.walkoff_angle(angle + 0.01, wl).unwrap();
                // Slope of ρ(θ) stays below ~0.15 for BBO.
                prop_assert!((a - b).abs() < 2e-3);
            }
        }
    }
}
