use std::path::Path;

use fever_sem::model::{ParameterVector, Variant};
use fever_sem::pipeline::{
    run_pipeline, stages, InputSource, RunConfig, VariantSelection, ESTIMATES_FILE, FITS_FILE, FIT_FILE,
    IMPUTATION_DIR, MANIFEST_FILE, RESIDUALS_FILE,
};
use fever_sem::simulation::{Missingness, SimulationConfig};

fn config(n: usize, m: usize, out: &Path) -> RunConfig {
    let mut sim = SimulationConfig::new(ParameterVector::reference(), n, 2024);
    sim.missingness = Some(Missingness::mar(0.25));
    let mut cfg = RunConfig {
        input: Some(InputSource::Simulate(sim)),
        output_dir: out.to_path_buf(),
        ..RunConfig::default()
    };
    cfg.imputation.m = m;
    cfg
}

#[test]
fn end_to_end_recovers_truth() {
    let dir = tempfile::tempdir().unwrap();
    let outcome = run_pipeline(&config(500, 5, dir.path())).unwrap();
    let full = outcome
        .estimates
        .models
        .iter()
        .find(|m| m.variant == Variant::TimeDependent)
        .unwrap();
    let truth = ParameterVector::reference().to_vec();
    let hits = full
        .parameters
        .iter()
        .enumerate()
        .filter(|(i, p)| p.se.is_some_and(|se| (p.estimate - truth[*i]).abs() <= 3.0 * se))
        .count();
    assert!(hits >= 17, "{hits}/20 within 3 pooled SEs");

    let report = outcome.fit.report.as_ref().unwrap();
    assert_eq!(report.full.df, 2394);
    assert_eq!(report.baseline.df, 2408);
    assert!(report.delta_aic < 0.0);
    assert_eq!(outcome.residuals.values.nrows(), 68);
    for name in [ESTIMATES_FILE, FIT_FILE, RESIDUALS_FILE, MANIFEST_FILE, FITS_FILE] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
    assert_eq!(outcome.manifest.m, 5);
    assert!(outcome.manifest.config_sha256.len() == 64);
}

#[test]
fn single_imputation_passes_through_with_warning() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(150, 1, dir.path());
    cfg.variant = VariantSelection::Full;
    let outcome = run_pipeline(&cfg).unwrap();
    assert!(outcome.manifest.warnings.iter().any(|w| w.contains("m = 1")));
    let fits = fever_sem::pipeline::FitSet::load(&dir.path().join(FITS_FILE)).unwrap();
    let single = &fits.get(Variant::TimeDependent).unwrap().fits[0];
    let pooled = &outcome.estimates.models[0];
    for (p, (est, se)) in pooled.parameters.iter().zip(single.params.values().iter().zip(&single.se)) {
        assert_eq!(p.estimate, *est);
        assert_eq!(p.se, *se);
    }
}

#[test]
fn identical_configs_give_identical_outputs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_pipeline(&config(120, 3, a.path())).unwrap();
    run_pipeline(&config(120, 3, b.path())).unwrap();
    for name in [ESTIMATES_FILE, FIT_FILE, RESIDUALS_FILE, MANIFEST_FILE] {
        assert_eq!(
            std::fs::read(a.path().join(name)).unwrap(),
            std::fs::read(b.path().join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn stages_resume_from_persisted_files() {
    let run = tempfile::tempdir().unwrap();
    let cfg = config(120, 3, run.path());
    run_pipeline(&cfg).unwrap();

    let staged = tempfile::tempdir().unwrap();
    let imputations = run.path().join(IMPUTATION_DIR);
    stages::fit_to(&imputations, &cfg, staged.path()).unwrap();
    let fits = staged.path().join(FITS_FILE);
    stages::pool_to(&fits, cfg.alpha, staged.path()).unwrap();
    stages::assess_to(&fits, &imputations, cfg.pooling, staged.path()).unwrap();
    for name in [FITS_FILE, ESTIMATES_FILE, FIT_FILE, RESIDUALS_FILE] {
        assert_eq!(
            std::fs::read(run.path().join(name)).unwrap(),
            std::fs::read(staged.path().join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(50, 0, dir.path());
    assert!(run_pipeline(&cfg).is_err());
    cfg.imputation.m = 2;
    cfg.alpha = 1.5;
    assert!(run_pipeline(&cfg).is_err());
    cfg.alpha = 0.05;
    cfg.input = None;
    assert!(run_pipeline(&cfg).is_err());
}
