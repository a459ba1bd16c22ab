//! Output files and the measurement file format.
//!
//! Delimited files are comma-separated with one header row. Leading lines
//! starting with `#` carry provenance as `# key: value` and are ignored on
//! read. A measurement file has the columns
//!
//! ```text
//! angle_deg,coincidences[,singles1,singles2],integration_s
//! ```
//!
//! in any order; `singles1` (signal) and `singles2` (idler) must appear
//! together or not at all.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use pairsource::materials::sha256_hex;
use pairsource::tomofit::{MeasurementRecord, Singles};
use serde::Serialize;

use crate::error::CliError;

pub const TOOL: &str = "pairsource";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
    pub material_db_sha256: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input_sha256: Option<String>,
}

impl Provenance {
    fn comment_lines(&self) -> Vec<String> {
        let mut lines = vec![
            format!("# tool: {} {}", self.tool, self.version),
            format!("# command: {}", self.command),
            format!("# config_sha256: {}", self.config_sha256),
            format!("# seed: {}", self.seed),
            format!("# material_db_sha256: {}", self.material_db_sha256),
        ];
        if let Some(i) = &self.input_sha256 {
            lines.push(format!("# input_sha256: {i}"));
        }
        lines
    }
}

#[derive(Serialize)]
struct WithProvenance<'a, T: Serialize> {
    provenance: &'a Provenance,
    #[serde(flatten)]
    body: &'a T,
}

pub fn write_json<T: Serialize>(path: &Path, provenance: &Provenance, body: &T) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, &WithProvenance { provenance, body })?;
    writeln!(w)?;
    Ok(())
}

/// Writes provenance comments, a header and numeric rows.
pub fn write_table(path: &Path, provenance: &Provenance, header: &[&str], rows: &[Vec<f64>]) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut out = BufWriter::new(file);
    for line in provenance.comment_lines() {
        writeln!(out, "{line}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_measurement(path: &Path, provenance: &Provenance, rec: &MeasurementRecord) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut out = BufWriter::new(file);
    for line in provenance.comment_lines() {
        writeln!(out, "{line}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    match &rec.singles {
        Some(s) => {
            w.write_record(["angle_deg", "coincidences", "singles1", "singles2", "integration_s"])?;
            for i in 0..rec.len() {
                w.write_record([
                    rec.angles_deg[i].to_string(),
                    rec.coincidences[i].to_string(),
                    s.signal[i].to_string(),
                    s.idler[i].to_string(),
                    rec.integration_s[i].to_string(),
                ])?;
            }
        }
        None => {
            w.write_record(["angle_deg", "coincidences", "integration_s"])?;
            for i in 0..rec.len() {
                w.write_record([
                    rec.angles_deg[i].to_string(),
                    rec.coincidences[i].to_string(),
                    rec.integration_s[i].to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a measurement file; returns the record and the file's SHA-256.
pub fn read_measurement(path: &Path) -> Result<(MeasurementRecord, String), CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let rec = parse_measurement(&bytes).map_err(|e| match e {
        CliError::Input(m) => CliError::Input(format!("{}: {m}", path.display())),
        other => other,
    })?;
    Ok((rec, sha256_hex(&bytes)))
}

pub fn parse_measurement(bytes: &[u8]) -> Result<MeasurementRecord, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let header = reader.headers().map_err(|e| CliError::Input(e.to_string()))?.clone();
    let col = |name: &str| header.iter().position(|h| h == name);
    for h in header.iter() {
        if !["angle_deg", "coincidences", "singles1", "singles2", "integration_s"].contains(&h) {
            return Err(CliError::Input(format!("unknown column {h:?}")));
        }
    }
    let (angle, coinc, integ) = match (col("angle_deg"), col("coincidences"), col("integration_s")) {
        (Some(a), Some(c), Some(t)) => (a, c, t),
        _ => {
            return Err(CliError::Input(
                "header must name angle_deg, coincidences and integration_s".into(),
            ))
        }
    };
    let singles = match (col("singles1"), col("singles2")) {
        (Some(a), Some(b)) => Some((a, b)),
        (None, None) => None,
        _ => return Err(CliError::Input("singles1 and singles2 must both be present".into())),
    };

    let mut rec = MeasurementRecord {
        angles_deg: vec![],
        coincidences: vec![],
        integration_s: vec![],
        singles: singles.map(|_| Singles {
            signal: vec![],
            idler: vec![],
        }),
    };
    for (line, row) in reader.records().enumerate() {
        let row = row.map_err(|e| CliError::Input(e.to_string()))?;
        let field = |i: usize| row.get(i).unwrap_or("");
        let float = |i: usize| -> Result<f64, CliError> {
            field(i)
                .parse::<f64>()
                .map_err(|_| CliError::Input(format!("row {}: {:?} is not a number", line + 1, field(i))))
        };
        let count = |i: usize| -> Result<u64, CliError> {
            field(i)
                .parse::<u64>()
                .map_err(|_| CliError::Input(format!("row {}: {:?} is not a non-negative count", line + 1, field(i))))
        };
        rec.angles_deg.push(float(angle)?);
        rec.coincidences.push(count(coinc)?);
        rec.integration_s.push(float(integ)?);
        if let (Some((a, b)), Some(s)) = (singles, rec.singles.as_mut()) {
            s.signal.push(count(a)?);
            s.idler.push(count(b)?);
        }
    }
    Ok(rec)
}
