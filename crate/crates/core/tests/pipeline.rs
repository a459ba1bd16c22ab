use pairsource::layout::{lateral_displacement, walkoff_budget, SourceLayout};
use pairsource::phasecomp::{
    design_hwp, optimize_compensator, relative_phase_curve, wavelength_grid, CompensatorOptions, HwpDesignOptions,
    StackMedia,
};
use pairsource::phasematch::{emission_wavelengths, PhaseMatchSpec};
use pairsource::{MaterialDb, MaterialError};

#[test]
fn design_chain_from_wavelengths_to_flat_phase() {
    let db = MaterialDb::builtin();
    let bbo = db.get("BBO").unwrap();
    let spec = PhaseMatchSpec::solve(bbo, 405.0, 847.1).unwrap();
    assert!(spec.signal_nm < spec.idler_nm);
    let (s, i) = emission_wavelengths(bbo, 405.0, spec.cut_angle_deg).unwrap();
    assert!((s - spec.signal_nm).abs() < 0.5 && (i - spec.idler_nm).abs() < 0.5);

    let media = StackMedia::from_db(&db).unwrap();
    let hwp = design_hwp(&media, (760.0, 860.0), 405.0, &HwpDesignOptions::default()).unwrap();
    let layout = SourceLayout::new(5.0, spec.cut_angle_deg, 405.0, hwp.plate, 0.0).unwrap();
    let band = (spec.signal_nm, spec.idler_nm);
    let opt = optimize_compensator(&media, &layout, band, &CompensatorOptions::default()).unwrap();
    let curve = relative_phase_curve(&media, &layout.with_compensator(opt.length_mm), &wavelength_grid(band, 0.25)).unwrap();
    assert!(curve.max_abs() <= opt.band_max_rad + 1e-9);
    assert!(curve.max_abs() < 0.01);

    let budget = walkoff_budget(bbo, &layout).unwrap();
    let step = lateral_displacement(bbo, spec.cut_angle_deg, 405.0, 5.0).unwrap();
    assert!((budget.pump_step_um - step).abs() < 1e-9);
}

#[test]
fn database_file_round_trip() {
    let path = std::env::temp_dir().join(format!("pairsource-db-{}.toml", std::process::id()));
    std::fs::write(&path, pairsource::materials::BUILTIN_DATABASE).unwrap();
    let db = MaterialDb::load(&path).unwrap();
    assert!(db.is_builtin());
    assert_eq!(db.checksum(), MaterialDb::builtin().checksum());
    std::fs::remove_file(&path).unwrap();
    assert!(matches!(MaterialDb::load(&path), Err(MaterialError::Io { .. })));
}
