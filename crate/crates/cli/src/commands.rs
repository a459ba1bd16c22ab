//! One function per subcommand. Each writes its files into the output
//! directory and returns a short summary for the terminal.

use std::path::{Path, PathBuf};

use pairsource::expsim::{
    detected_rates, generate_sweep, generate_two_polarizer_sweep, heralding_efficiency, power_scan, true_rates,
    Analyzer, ExperimentConfig,
};
use pairsource::layout::{overlap_table, walkoff_budget, BeamGeometry, SourceLayout};
use pairsource::phasecomp::{
    design_hwp, hwp_retardance, optimize_compensator, relative_phase_curve, wavelength_grid, wrap_phase, StackMedia,
};
use pairsource::phasematch::{emission_wavelengths, solve_cut_angle, PhaseMatchSpec};
use pairsource::qstate::{
    fidelity_from_visibilities, fidelity_trace, single_polarizer_rate, two_polarizer_rate, CorrelationBasis,
    DensityMatrix4, TwoPhotonState,
};
use pairsource::tomofit::{bootstrap_with, fidelity_from_two_polarizer, BasisSweep};
use pairsource::MaterialDb;
use serde::Serialize;

use crate::config::LoadedConfig;
use crate::error::CliError;
use crate::io::{read_measurement, write_json, write_measurement, write_table, Provenance, TOOL, VERSION};

/// Everything a subcommand needs: the parsed configuration, the material
/// database it names, the output directory and the effective seed.
pub struct Context {
    pub loaded: LoadedConfig,
    pub db: MaterialDb,
    pub out_dir: PathBuf,
    pub seed: u64,
}

impl Context {
    /// `out` and `seed` override the configuration when given.
    pub fn new(loaded: LoadedConfig, out: Option<PathBuf>, seed: Option<u64>) -> Result<Self, CliError> {
        let cfg = &loaded.config;
        let db = cfg.material_db()?;
        StackMedia::from_db(&db).map_err(|e| CliError::Config(format!("material database: {e}")))?;
        let out_dir = out.unwrap_or_else(|| cfg.base_dir.join(&cfg.output.dir));
        let seed = seed.unwrap_or(cfg.experiment.seed);
        Ok(Self {
            loaded,
            db,
            out_dir,
            seed,
        })
    }

    pub fn provenance(&self, command: &str) -> Provenance {
        Provenance {
            tool: TOOL,
            version: VERSION,
            command: command.into(),
            config_sha256: self.loaded.sha256.clone(),
            seed: self.seed,
            material_db_sha256: self.db.checksum().into(),
            input_sha256: None,
        }
    }

    pub fn path(&self, name: &str) -> Result<PathBuf, CliError> {
        std::fs::create_dir_all(&self.out_dir)
            .map_err(|e| CliError::Io(format!("cannot create {}: {e}", self.out_dir.display())))?;
        Ok(self.out_dir.join(name))
    }

    pub fn media(&self) -> StackMedia {
        StackMedia::from_db(&self.db).expect("checked in Context::new")
    }

    /// Configured cut angle if set, otherwise the angle solved from the
    /// source wavelengths. Fails with exit code 3 when the crystal emits no
    /// collinear pair at that angle.
    pub fn cut_angle(&self) -> Result<CutAngle, CliError> {
        let s = &self.loaded.config.source;
        let bbo = &self.media().crystal;
        match s.cut_angle_deg {
            Some(angle) => {
                let (signal_nm, idler_nm) = emission_wavelengths(bbo, s.pump_nm, angle)?;
                Ok(CutAngle {
                    cut_angle_deg: angle,
                    source: "config",
                    signal_nm,
                    idler_nm,
                })
            }
            None => {
                let spec = PhaseMatchSpec::solve(bbo, s.pump_nm, s.signal_nm)?;
                Ok(CutAngle {
                    cut_angle_deg: spec.cut_angle_deg,
                    source: "solved",
                    signal_nm: spec.signal_nm,
                    idler_nm: spec.idler_nm,
                })
            }
        }
    }

    pub fn layout(&self, cut_angle_deg: f64) -> Result<SourceLayout, CliError> {
        let s = &self.loaded.config.source;
        let mut layout = SourceLayout::new(
            s.crystal_length_mm,
            cut_angle_deg,
            s.pump_nm,
            s.hwp(),
            s.compensator_length_mm,
        )
        .map_err(|e| CliError::Config(format!("[source]: {e}")))?;
        layout.hwp_model = s.phase_model()?;
        Ok(layout)
    }

    pub fn experiment(&self) -> Result<ExperimentConfig, CliError> {
        let cfg = &self.loaded.config;
        cfg.experiment.config(cfg.state.state()?, self.seed)
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct CutAngle {
    pub cut_angle_deg: f64,
    /// "solved" or "config".
    pub source: &'static str,
    /// Collinear pair emitted at this angle.
    pub signal_nm: f64,
    pub idler_nm: f64,
}

/// File-name suffix for a correlation basis.
pub fn file_tag(basis: CorrelationBasis) -> &'static str {
    match basis {
        CorrelationBasis::HV => "hv",
        CorrelationBasis::DA => "da",
        CorrelationBasis::LR => "lr",
    }
}

fn stage<E: std::fmt::Display>(name: &'static str) -> impl Fn(E) -> CliError {
    move |e| CliError::stage(name, e)
}

#[derive(Serialize)]
struct OverlapRow {
    pair: &'static str,
    displacement_um: f64,
    overlap: f64,
}

#[derive(Serialize)]
struct DesignReport {
    pump_nm: f64,
    signal_nm: f64,
    idler_nm: f64,
    cut: CutAngle,
    degenerate_cut_angle_deg: f64,
    crystal_length_mm: f64,
    pump_walkoff_deg: f64,
    pair_walkoff_deg: f64,
    pump_step_um: f64,
    first_crystal_offset_um: f64,
    second_crystal_offset_um: f64,
    emission_mismatch: f64,
    overlaps: Vec<OverlapRow>,
}

pub fn design(ctx: &Context) -> Result<String, CliError> {
    let cfg = &ctx.loaded.config;
    let s = &cfg.source;
    let media = ctx.media();
    let cut = ctx.cut_angle()?;
    let degenerate = 2.0 * s.pump_nm;
    let degenerate_cut = solve_cut_angle(&media.crystal, s.pump_nm, degenerate, degenerate)?;
    let layout = ctx.layout(cut.cut_angle_deg)?;
    let budget = walkoff_budget(&media.crystal, &layout).map_err(stage("walk-off"))?;
    let beams = BeamGeometry::new(
        cfg.beams.pump_fwhm_major_um,
        cfg.beams.pump_fwhm_minor_um,
        cfg.beams.collection_fwhm_um,
    )
    .map_err(|e| CliError::Config(format!("[beams]: {e}")))?;
    let overlaps = overlap_table(&budget, &beams)
        .map_err(stage("overlap"))?
        .into_iter()
        .map(|(pair, displacement_um, overlap)| OverlapRow {
            pair,
            displacement_um,
            overlap,
        })
        .collect();
    let report = DesignReport {
        pump_nm: s.pump_nm,
        signal_nm: s.signal_nm,
        idler_nm: cfg.idler_nm()?,
        cut,
        degenerate_cut_angle_deg: degenerate_cut,
        crystal_length_mm: s.crystal_length_mm,
        pump_walkoff_deg: budget.pump_walkoff_deg,
        pair_walkoff_deg: budget.pair_walkoff_deg,
        pump_step_um: budget.pump_step_um,
        first_crystal_offset_um: budget.first_crystal_offset_um,
        second_crystal_offset_um: budget.second_crystal_offset_um,
        emission_mismatch: budget.mismatch,
        overlaps,
    };
    let prov = ctx.provenance("design");
    write_json(&ctx.path("design.json")?, &prov, &report)?;

    // Extraordinary walk-off at the cut angle across the pump-to-idler range.
    let rows = wavelength_grid((s.pump_nm, 900.0_f64.max(report.idler_nm)), 5.0)
        .into_iter()
        .map(|wl| {
            let rho = media.crystal.walkoff_angle(cut.cut_angle_deg, wl)?;
            Ok(vec![wl, rho, 1e3 * s.crystal_length_mm * rho.to_radians().tan()])
        })
        .collect::<Result<Vec<_>, pairsource::MaterialError>>()
        .map_err(stage("walk-off"))?;
    write_table(
        &ctx.path("walkoff.csv")?,
        &prov,
        &["wavelength_nm", "walkoff_deg", "displacement_um"],
        &rows,
    )?;
    Ok(format!(
        "cut angle {:.3} deg ({}), pair walk-off mismatch {:.2}%",
        cut.cut_angle_deg,
        cut.source,
        100.0 * budget.mismatch
    ))
}

#[derive(Serialize)]
struct CompensationReport {
    cut_angle_deg: f64,
    band_nm: (f64, f64),
    optimum_length_mm: f64,
    optimum_band_max_rad: f64,
    uncompensated_band_max_rad: f64,
    multiple_minima: bool,
    configured_length_mm: f64,
    configured_band_max_rad: f64,
}

pub fn compensate(ctx: &Context) -> Result<String, CliError> {
    let cfg = &ctx.loaded.config;
    let media = ctx.media();
    let cut = ctx.cut_angle()?;
    let layout = ctx.layout(cut.cut_angle_deg)?;
    let band = cfg.band()?;
    let opt = optimize_compensator(&media, &layout.with_compensator(0.0), band, &cfg.compensation.options())
        .map_err(stage("compensation"))?;
    let grid = wavelength_grid(band, cfg.compensation.curve_step_nm);
    let curve = |lc: f64| relative_phase_curve(&media, &layout.with_compensator(lc), &grid).map_err(stage("phase curve"));
    let optimal = curve(opt.length_mm)?;
    let configured = curve(layout.compensator_length_mm)?;
    let bare = curve(0.0)?;

    let report = CompensationReport {
        cut_angle_deg: cut.cut_angle_deg,
        band_nm: band,
        optimum_length_mm: opt.length_mm,
        optimum_band_max_rad: opt.band_max_rad,
        uncompensated_band_max_rad: opt.uncompensated_band_max_rad,
        multiple_minima: opt.multiple_minima,
        configured_length_mm: layout.compensator_length_mm,
        configured_band_max_rad: configured.max_abs(),
    };
    let prov = ctx.provenance("compensate");
    write_json(&ctx.path("compensation.json")?, &prov, &report)?;
    for (name, c) in [
        ("phase_curve.csv", &optimal),
        ("phase_curve_configured.csv", &configured),
        ("phase_curve_uncompensated.csv", &bare),
    ] {
        let rows: Vec<Vec<f64>> = c.wavelengths_nm.iter().zip(&c.phase_rad).map(|(&w, &p)| vec![w, p]).collect();
        write_table(&ctx.path(name)?, &prov, &["wavelength_nm", "delta_phi_rad"], &rows)?;
    }
    Ok(format!(
        "optimal YVO4 {:.3} mm: band max {:.2e} rad (uncompensated {:.3} rad); configured {:.3} mm: {:.2e} rad",
        opt.length_mm,
        opt.band_max_rad,
        opt.uncompensated_band_max_rad,
        layout.compensator_length_mm,
        report.configured_band_max_rad
    ))
}

#[derive(Serialize)]
struct PlateReport {
    mgf2_mm: f64,
    quartz_mm: f64,
    band_error_rad: f64,
    pump_error_rad: f64,
}

#[derive(Serialize)]
struct HwpReport {
    band_nm: [f64; 2],
    pump_nm: f64,
    designed: PlateReport,
    configured: PlateReport,
}

pub fn hwp_design(ctx: &Context) -> Result<String, CliError> {
    let cfg = &ctx.loaded.config;
    let media = ctx.media();
    let band = cfg.hwp_design.band_nm;
    let pump = cfg.source.pump_nm;
    let d = design_hwp(&media, (band[0], band[1]), pump, &cfg.hwp_design.options()).map_err(stage("waveplate design"))?;
    let configured = cfg.source.hwp();

    let (lo, hi) = (band[0].min(band[1]), band[0].max(band[1]));
    let errors = |plate| -> Result<(f64, f64), CliError> {
        let gamma = |wl: f64| hwp_retardance(&media, plate, wl).map_err(stage("retardance"));
        let mut band_err: f64 = 0.0;
        for wl in wavelength_grid((lo, hi), 1.0) {
            band_err = band_err.max(wrap_phase(gamma(wl)? - std::f64::consts::PI).abs());
        }
        Ok((band_err, wrap_phase(gamma(pump)?).abs()))
    };
    let (cb, cp) = errors(&configured)?;
    let report = HwpReport {
        band_nm: [lo, hi],
        pump_nm: pump,
        designed: PlateReport {
            mgf2_mm: d.plate.mgf2_mm,
            quartz_mm: d.plate.quartz_mm,
            band_error_rad: d.band_error_rad,
            pump_error_rad: d.pump_error_rad,
        },
        configured: PlateReport {
            mgf2_mm: configured.mgf2_mm,
            quartz_mm: configured.quartz_mm,
            band_error_rad: cb,
            pump_error_rad: cp,
        },
    };
    let prov = ctx.provenance("hwp-design");
    write_json(&ctx.path("hwp.json")?, &prov, &report)?;
    let rows = wavelength_grid((pump, hi.max(900.0)), 1.0)
        .into_iter()
        .map(|wl| {
            Ok(vec![
                wl,
                hwp_retardance(&media, &d.plate, wl).map_err(stage("retardance"))?,
                hwp_retardance(&media, &configured, wl).map_err(stage("retardance"))?,
            ])
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    write_table(
        &ctx.path("hwp_retardance.csv")?,
        &prov,
        &["wavelength_nm", "designed_rad", "configured_rad"],
        &rows,
    )?;
    Ok(format!(
        "MgF2 {:.4} mm + quartz {:.4} mm: band error {:.3} rad, pump error {:.2e} rad",
        d.plate.mgf2_mm, d.plate.quartz_mm, d.band_error_rad, d.pump_error_rad
    ))
}

#[derive(Serialize)]
struct BasisPrediction {
    basis: &'static str,
    visibility: f64,
}

#[derive(Serialize)]
struct CurvesReport {
    p: f64,
    x: f64,
    theta_rad: f64,
    fidelity: f64,
    visibilities: Vec<BasisPrediction>,
    fidelity_from_visibilities: f64,
}

fn degree_grid() -> Vec<f64> {
    (-180..=180).map(f64::from).collect()
}

pub fn curves(ctx: &Context) -> Result<String, CliError> {
    let state = ctx.loaded.config.state.state()?;
    let (minus, plus) = (TwoPhotonState::phi_minus(), TwoPhotonState::phi_plus());
    let prov = ctx.provenance("curves");
    let angles = degree_grid();

    let rows: Vec<Vec<f64>> = angles
        .iter()
        .map(|&a| {
            vec![
                a,
                single_polarizer_rate(&state, a),
                single_polarizer_rate(&minus, a),
                single_polarizer_rate(&plus, a),
            ]
        })
        .collect();
    write_table(
        &ctx.path("single_polarizer.csv")?,
        &prov,
        &["angle_deg", "configured", "phi_minus", "phi_plus"],
        &rows,
    )?;

    let mut visibilities = Vec::new();
    for basis in CorrelationBasis::ALL {
        let (beta, family) = basis.fixed_analyzer();
        let rows: Vec<Vec<f64>> = angles
            .iter()
            .map(|&g| {
                vec![
                    g,
                    two_polarizer_rate(&state, beta, g, family),
                    two_polarizer_rate(&minus, beta, g, family),
                ]
            })
            .collect();
        let (mx, mn) = rows.iter().fold((f64::MIN, f64::MAX), |(mx, mn), r| (mx.max(r[1]), mn.min(r[1])));
        visibilities.push(BasisPrediction {
            basis: basis.label(),
            visibility: (mx - mn) / (mx + mn),
        });
        let name = format!("two_polarizer_{}.csv", file_tag(basis));
        write_table(&ctx.path(&name)?, &prov, &["angle_deg", "configured", "phi_minus"], &rows)?;
    }

    let fidelity = fidelity_trace(&state.to_density_matrix(), &DensityMatrix4::phi_minus());
    let from_v = fidelity_from_visibilities(
        visibilities[0].visibility,
        visibilities[1].visibility,
        visibilities[2].visibility,
    )
    .map_err(stage("visibilities"))?;
    let report = CurvesReport {
        p: state.p(),
        x: state.x(),
        theta_rad: state.theta(),
        fidelity,
        visibilities,
        fidelity_from_visibilities: from_v,
    };
    write_json(&ctx.path("curves.json")?, &prov, &report)?;
    Ok(format!("fidelity {fidelity:.5}; from visibilities {from_v:.5}"))
}

#[derive(Serialize)]
struct SimulateReport {
    pump_power_mw: f64,
    pair_rate_per_s: f64,
    unanalyzed_coincidences_per_s: f64,
    unanalyzed_accidentals_per_s: f64,
    unanalyzed_singles_per_s: [f64; 2],
    heralding_estimate: [f64; 2],
    true_fidelity: f64,
    files: Vec<String>,
}

pub fn simulate(ctx: &Context) -> Result<String, CliError> {
    let cfg = &ctx.loaded.config;
    let exp = ctx.experiment()?;
    let angles = &cfg.experiment.angles_deg;
    let prov = ctx.provenance("simulate");
    let sim = stage("simulation");

    let mut files = vec!["sweep.csv".to_string()];
    write_measurement(&ctx.path("sweep.csv")?, &prov, &generate_sweep(&exp, angles).map_err(&sim)?)?;
    for basis in CorrelationBasis::ALL {
        let name = format!("sweep_{}.csv", file_tag(basis));
        let rec = generate_two_polarizer_sweep(&exp, basis, angles).map_err(&sim)?;
        write_measurement(&ctx.path(&name)?, &prov, &rec)?;
        files.push(name);
    }
    let scan = power_scan(&exp, &cfg.experiment.power_scan_mw, Analyzer::Single { angle_deg: 0.0 }).map_err(&sim)?;
    let rows: Vec<Vec<f64>> = scan.iter().map(|p| vec![p.pump_power_mw, p.detected, p.linear, p.deficit()]).collect();
    write_table(
        &ctx.path("power_scan.csv")?,
        &prov,
        &["pump_power_mw", "detected_per_s", "linear_per_s", "deficit"],
        &rows,
    )?;
    files.push("power_scan.csv".into());

    let r = true_rates(&exp).map_err(&sim)?;
    let open = detected_rates(&exp, Analyzer::None).map_err(&sim)?;
    let [ds, di] = exp.detectors;
    let report = SimulateReport {
        pump_power_mw: exp.pump_power_mw,
        pair_rate_per_s: r.pair,
        unanalyzed_coincidences_per_s: open.coincidences(),
        unanalyzed_accidentals_per_s: open.accidentals,
        unanalyzed_singles_per_s: [open.singles_s, open.singles_i],
        heralding_estimate: [
            heralding_efficiency(open.pairs, open.singles_i, di.dark_rate).map_err(&sim)?,
            heralding_efficiency(open.pairs, open.singles_s, ds.dark_rate).map_err(&sim)?,
        ],
        true_fidelity: fidelity_trace(&exp.state.to_density_matrix(), &DensityMatrix4::phi_minus()),
        files,
    };
    write_json(&ctx.path("simulate.json")?, &prov, &report)?;
    Ok(format!(
        "{} angles, {:.0} pairs/s, {:.1} accidentals/s unanalyzed",
        angles.len(),
        r.pair,
        open.accidentals
    ))
}

/// Paths of optional two-analyzer sweeps, one per basis.
#[derive(Debug, Clone, Default)]
pub struct TwoPolarizerInputs {
    pub hv: Option<PathBuf>,
    pub da: Option<PathBuf>,
    pub lr: Option<PathBuf>,
}

#[derive(Serialize)]
struct InputFile {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct StateReport {
    constraint: &'static str,
    p: f64,
    x: f64,
    theta_rad: f64,
}

#[derive(Serialize)]
struct VisibilityReport {
    basis: &'static str,
    visibility: f64,
    se: f64,
    unphysical: bool,
}

#[derive(Serialize)]
struct TwoPolarizerReport {
    inputs: Vec<InputFile>,
    visibilities: Vec<VisibilityReport>,
    fidelity: f64,
    fidelity_se: f64,
    unphysical: bool,
}

#[derive(Serialize)]
struct FitReport {
    a: f64,
    b: f64,
    amplitude: f64,
    fidelity: f64,
    ci_fidelity_68: Option<(f64, f64)>,
    fidelity_se: Option<f64>,
    n_bootstrap: usize,
    projected: bool,
    chi_squared: f64,
    state: Option<StateReport>,
    two_polarizer: Option<TwoPolarizerReport>,
}

pub fn fit(ctx: &Context, input: &Path, two: &TwoPolarizerInputs) -> Result<String, CliError> {
    let cfg = &ctx.loaded.config;
    let opts = cfg.fit.options();
    let (rec, sha) = read_measurement(input)?;
    let res = bootstrap_with(&rec, cfg.fit.n_bootstrap, ctx.seed, &opts).map_err(stage("fit"))?;
    let state = match cfg.fit.constraint()? {
        None => None,
        Some(c) => {
            let s = res.constrained_state(c).map_err(stage("fit"))?;
            Some(StateReport {
                constraint: c.label(),
                p: s.state.p(),
                x: s.state.x(),
                theta_rad: s.state.theta(),
            })
        }
    };

    let given = [
        (CorrelationBasis::HV, &two.hv),
        (CorrelationBasis::DA, &two.da),
        (CorrelationBasis::LR, &two.lr),
    ];
    let count = given.iter().filter(|(_, p)| p.is_some()).count();
    let two_polarizer = match count {
        0 => None,
        3 => {
            let mut inputs = Vec::new();
            let mut sweeps = Vec::new();
            for (basis, path) in given {
                let path = path.as_ref().expect("all three present");
                let (record, sha) = read_measurement(path)?;
                inputs.push(InputFile {
                    path: path.display().to_string(),
                    sha256: sha,
                });
                sweeps.push(BasisSweep { basis, record });
            }
            let t = fidelity_from_two_polarizer(&sweeps, &opts).map_err(stage("two-analyzer fit"))?;
            Some(TwoPolarizerReport {
                inputs,
                visibilities: t
                    .visibilities
                    .iter()
                    .map(|v| VisibilityReport {
                        basis: v.basis.label(),
                        visibility: v.visibility,
                        se: v.se,
                        unphysical: v.unphysical,
                    })
                    .collect(),
                fidelity: t.fidelity,
                fidelity_se: t.fidelity_se,
                unphysical: t.unphysical,
            })
        }
        _ => return Err(CliError::Input("--hv, --da and --lr must be given together".into())),
    };

    let report = FitReport {
        a: res.a,
        b: res.b,
        amplitude: res.amplitude,
        fidelity: res.fidelity,
        ci_fidelity_68: res.ci_fidelity,
        fidelity_se: res.fidelity_se,
        n_bootstrap: res.n_bootstrap,
        projected: res.projected,
        chi_squared: res.chi_squared,
        state,
        two_polarizer,
    };
    let mut prov = ctx.provenance("fit");
    prov.input_sha256 = Some(sha);
    write_json(&ctx.path("fit.json")?, &prov, &report)?;

    let mut line = format!("fidelity {:.4}", res.fidelity);
    if let Some((lo, hi)) = res.ci_fidelity {
        line += &format!(" (68% CI {lo:.4}-{hi:.4})");
    }
    if let Some(t) = &report.two_polarizer {
        line += &format!("; two-analyzer {:.4} +/- {:.4}", t.fidelity, t.fidelity_se);
        if t.unphysical {
            line += " [unphysical visibility clamped]";
        }
    }
    Ok(line)
}
