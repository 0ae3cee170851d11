//! End-to-end analysis: ingest, impute, fit, pool and assess.
//!
//! Every stage has an in-memory function and a persisted artifact, so a run
//! can be resumed from any intermediate file:
//!
//! | stage    | reads                         | writes                              |
//! |----------|-------------------------------|-------------------------------------|
//! | ingest   | raw CSV                       | `panel.csv`, `ingest.json`          |
//! | simulate | simulation config             | `raw.csv`, `panel.csv`              |
//! | impute   | `panel.csv`                   | `imputations/`                      |
//! | fit      | `imputations/`                | `fits.json`                         |
//! | pool     | `fits.json`                   | `estimates.json`                    |
//! | assess   | `fits.json`, `imputations/`   | `fit.json`, `residuals.csv`         |
//!
//! `manifest.json` records the configuration hash, seeds and a digest of
//! each report file.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{empirical_moments, PanelDataset};
use crate::error::{Error, Result};
use crate::estimation::{fit_from_moments, fit_model, FitOptions, FitResult, SampleMoments};
use crate::fit::{fit_residuals, FitReport, ModelStatistics, ResidualMatrix};
use crate::imputation::{filter_fans, mice_impute, ImputationOptions, ImputationSet};
use crate::ingest::{ingest, IngestSummary, MatchClock, RawRecordFile};
use crate::model::{ModelDefinition, TimeGrid, Variant};
use crate::pooling::{pool_estimates, pool_fit_statistics, PooledFitStatistics, PooledResult, PoolingMethod};
use crate::simulation::{simulate_panel, SimulationConfig};

pub const PANEL_FILE: &str = "panel.csv";
pub const RAW_FILE: &str = "raw.csv";
pub const INGEST_FILE: &str = "ingest.json";
pub const IMPUTATION_DIR: &str = "imputations";
pub const FITS_FILE: &str = "fits.json";
pub const ESTIMATES_FILE: &str = "estimates.json";
pub const FIT_FILE: &str = "fit.json";
pub const RESIDUALS_FILE: &str = "residuals.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Kickoff used when writing simulated panels as raw records without a
/// configured clock.
pub const SYNTHETIC_KICKOFF: &str = "2000-01-01 15:30:00";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum InputSource {
    /// Raw wearable records.
    Raw { path: PathBuf },
    /// A wide panel as written by [`PanelDataset::save`].
    Panel { path: PathBuf },
    Simulate(SimulationConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum VariantSelection {
    Full,
    Baseline,
    #[default]
    Both,
}

impl VariantSelection {
    pub fn variants(self) -> Vec<Variant> {
        match self {
            Self::Full => vec![Variant::TimeDependent],
            Self::Baseline => vec![Variant::TimeInvariantBaseline],
            Self::Both => vec![Variant::TimeDependent, Variant::TimeInvariantBaseline],
        }
    }
}

impl std::str::FromStr for VariantSelection {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(Self::Full),
            "baseline" => Ok(Self::Baseline),
            "both" => Ok(Self::Both),
            other => Err(Error::Config(format!("unknown variant selection `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub input: Option<InputSource>,
    pub clock: MatchClock,
    pub grid: TimeGrid,
    pub imputation: ImputationOptions,
    pub fit: FitOptions,
    pub pooling: PoolingMethod,
    pub alpha: f64,
    pub variant: VariantSelection,
    pub output_dir: PathBuf,
    /// Directory relative input paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            input: None,
            clock: MatchClock::default(),
            grid: TimeGrid::default(),
            imputation: ImputationOptions::default(),
            fit: FitOptions::default(),
            pooling: PoolingMethod::default(),
            alpha: 0.05,
            variant: VariantSelection::default(),
            output_dir: PathBuf::from("out"),
            base_dir: PathBuf::new(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_json(&std::fs::read_to_string(path)?)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.imputation.m == 0 {
            return Err(Error::Config("m must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if let Some(InputSource::Simulate(sim)) = &self.input {
            sim.validate()?;
            if sim.grid != self.grid {
                return Err(Error::Config("simulation grid differs from the analysis grid".into()));
            }
        }
        Ok(())
    }

    /// SHA-256 of the configuration without its output location.
    pub fn hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        Ok(sha256_hex(serde_json::to_string(&c)?.as_bytes()))
    }

    fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if self.imputation.m < 2 {
            w.push("m = 1: pooling degenerates to a pass-through of the single fit".into());
        }
        w
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

/// Reads or generates the analysis panel.
pub fn load_input(cfg: &RunConfig) -> Result<(PanelDataset, Option<IngestSummary>)> {
    let input = cfg
        .input
        .as_ref()
        .ok_or_else(|| Error::Config("no input configured".into()))?;
    match input {
        InputSource::Raw { path } => {
            let raw = RawRecordFile::load(&cfg.resolve(path))?;
            let (panel, summary) = ingest(&raw, &cfg.clock, &cfg.grid)?;
            Ok((panel, Some(summary)))
        }
        InputSource::Panel { path } => {
            let panel = PanelDataset::load(&cfg.resolve(path))?;
            Ok((filter_fans(&panel)?, None))
        }
        InputSource::Simulate(sim) => {
            let raw = simulated_records(sim, &cfg.clock)?;
            let (panel, summary) = ingest(&raw, &simulation_clock(&cfg.clock), &cfg.grid)?;
            Ok((panel, Some(summary)))
        }
    }
}

fn simulation_clock(clock: &MatchClock) -> MatchClock {
    if clock.kickoff.is_some() {
        clock.clone()
    } else {
        MatchClock {
            kickoff: Some(SYNTHETIC_KICKOFF.into()),
            ..clock.clone()
        }
    }
}

/// Simulated panel written as raw records.
pub fn simulated_records(sim: &SimulationConfig, clock: &MatchClock) -> Result<RawRecordFile> {
    let panel = simulate_panel(sim)?;
    RawRecordFile::from_panel(&panel, &simulation_clock(clock), &sim.grid)
}

/// Fits of one model variant to every imputation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantFits {
    pub variant: Variant,
    pub fits: Vec<FitResult>,
    /// Fit to the stacked moments of all imputations.
    pub stacked: Option<FitResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSet {
    pub n: usize,
    pub m: usize,
    pub grid: TimeGrid,
    pub models: Vec<VariantFits>,
}

impl FitSet {
    pub fn get(&self, variant: Variant) -> Option<&VariantFits> {
        self.models.iter().find(|v| v.variant == variant)
    }

    /// Descriptions of every fit that did not converge.
    pub fn nonconverged(&self) -> Vec<String> {
        let mut out = Vec::new();
        for v in &self.models {
            for (k, f) in v.fits.iter().enumerate() {
                if !f.converged {
                    out.push(format!("{:?} imputation {}", v.variant, k + 1));
                }
            }
            if v.stacked.as_ref().is_some_and(|f| !f.converged) {
                out.push(format!("{:?} stacked moments", v.variant));
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

/// Complete-data moments of each imputed dataset.
pub fn imputation_moments(set: &ImputationSet) -> Result<Vec<SampleMoments>> {
    set.datasets.iter().map(empirical_moments).collect()
}

/// Fits each selected variant to every imputation, in parallel across
/// imputations, plus the stacked-moment fit used by D4 pooling.
pub fn fit_imputations(set: &ImputationSet, cfg: &RunConfig) -> Result<FitSet> {
    let samples = imputation_moments(set)?;
    let first = samples
        .first()
        .ok_or_else(|| Error::Data("imputation set is empty".into()))?;
    let n = first.n;
    let mut models = Vec::new();
    for variant in cfg.variant.variants() {
        let def = ModelDefinition::new(cfg.grid, variant);
        let fits = samples
            .par_iter()
            .map(|s| fit_from_moments(&def, s, &cfg.fit))
            .collect::<Result<Vec<_>>>()?;
        let stacked = if samples.len() > 1 && cfg.pooling == PoolingMethod::D4 {
            let pooled_sample = SampleMoments::stacked(&samples)?;
            let opts = FitOptions {
                standard_errors: false,
                ..cfg.fit.clone()
            };
            Some(fit_model(&def, &pooled_sample, &fits[0].params, &opts)?)
        } else {
            None
        };
        models.push(VariantFits { variant, fits, stacked });
    }
    Ok(FitSet {
        n,
        m: samples.len(),
        grid: cfg.grid,
        models,
    })
}

/// Pooled parameter tables, one per fitted variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatesReport {
    pub n: usize,
    pub m: usize,
    pub models: Vec<PooledResult>,
}

pub fn pool_fits(fits: &FitSet, alpha: f64) -> Result<EstimatesReport> {
    let models = fits
        .models
        .iter()
        .map(|v| pool_estimates(&v.fits, alpha))
        .collect::<Result<Vec<_>>>()?;
    Ok(EstimatesReport {
        n: fits.n,
        m: fits.m,
        models,
    })
}

/// Pooled fit statistics and, when both variants were fitted, the fit
/// indices with the baseline as null model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub n: usize,
    pub m: usize,
    pub pooling: PoolingMethod,
    pub statistics: Vec<PooledFitStatistics>,
    /// Mean SRMR across imputations, in the order of `statistics`.
    pub srmr: Vec<f64>,
    pub report: Option<FitReport>,
    /// Variant whose residuals are written to `residuals.csv`.
    pub residual_variant: Variant,
}

/// Pools fit statistics and averages standardized residuals across
/// imputations.
pub fn assess_fits(fits: &FitSet, set: &ImputationSet, method: PoolingMethod) -> Result<(FitSummary, ResidualMatrix)> {
    let samples = imputation_moments(set)?;
    if samples.len() != fits.m {
        return Err(Error::Data(format!(
            "{} imputations on disk, {} fits",
            samples.len(),
            fits.m
        )));
    }
    let p = fits.grid.n_observed();
    let mut statistics = Vec::new();
    let mut srmr = Vec::new();
    let mut residuals = Vec::new();
    let mut model_stats = Vec::new();
    for v in &fits.models {
        let def = ModelDefinition::new(fits.grid, v.variant);
        let df = def.degrees_of_freedom();
        let stats = pool_fit_statistics(&v.fits, v.stacked.as_ref(), df, method)?;
        let res = v
            .fits
            .iter()
            .zip(&samples)
            .map(|(f, s)| fit_residuals(f, &def, s))
            .collect::<Result<Vec<_>>>()?;
        let mut s: Vec<f64> = res.iter().map(ResidualMatrix::srmr).collect();
        s.sort_by(f64::total_cmp);
        let mean_srmr = s.iter().sum::<f64>() / s.len() as f64;
        model_stats.push(ModelStatistics {
            variant: v.variant,
            q: stats.n_free,
            df,
            chi2: stats.chi_square.chi2,
            aic: stats.aic,
            srmr: mean_srmr,
        });
        statistics.push(stats);
        srmr.push(mean_srmr);
        residuals.push((v.variant, res));
    }
    let report = match (
        model_stats.iter().find(|s| s.variant == Variant::TimeDependent),
        model_stats.iter().find(|s| s.variant == Variant::TimeInvariantBaseline),
    ) {
        (Some(full), Some(base)) => {
            let mut r = FitReport::from_statistics(*full, *base, fits.n, p);
            for d in fits.nonconverged() {
                r.flags.push(format!("not converged: {d}"));
            }
            Some(r)
        }
        _ => None,
    };
    let (residual_variant, res) = residuals
        .into_iter()
        .next()
        .ok_or_else(|| Error::Data("no fitted models to assess".into()))?;
    let averaged = ResidualMatrix::average(&res)?;
    Ok((
        FitSummary {
            n: fits.n,
            m: fits.m,
            pooling: method,
            statistics,
            srmr,
            report,
            residual_variant,
        },
        averaged,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub imputation: u64,
    pub optimizer: u64,
    pub simulation: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub package: String,
    pub version: String,
    pub config_sha256: String,
    pub seeds: Seeds,
    pub n_fans: usize,
    pub m: usize,
    pub ingest: Option<IngestSummary>,
    pub warnings: Vec<String>,
    pub files: Vec<FileDigest>,
}

pub struct PipelineOutcome {
    pub estimates: EstimatesReport,
    pub fit: FitSummary,
    pub residuals: ResidualMatrix,
    pub manifest: RunManifest,
}

/// Runs every stage, writing intermediates and reports into
/// `cfg.output_dir`.
pub fn run_pipeline(cfg: &RunConfig) -> Result<PipelineOutcome> {
    cfg.validate()?;
    let out = cfg.output_dir.clone();
    std::fs::create_dir_all(&out)?;
    let mut warnings = cfg.warnings();

    let (panel, summary) = load_input(cfg).map_err(|e| e.at_stage("ingest"))?;
    panel.save(&out.join(PANEL_FILE)).map_err(|e| e.at_stage("ingest"))?;
    if let Some(s) = &summary {
        write_json(&out.join(INGEST_FILE), s).map_err(|e| e.at_stage("ingest"))?;
    }

    let set = mice_impute(&panel, &cfg.imputation).map_err(|e| e.at_stage("impute"))?;
    set.save(&out.join(IMPUTATION_DIR)).map_err(|e| e.at_stage("impute"))?;
    warnings.extend(set.warnings.iter().cloned());

    let fits = fit_imputations(&set, cfg).map_err(|e| e.at_stage("fit"))?;
    fits.save(&out.join(FITS_FILE)).map_err(|e| e.at_stage("fit"))?;
    let nonconverged = fits.nonconverged();
    if !nonconverged.is_empty() {
        return Err(Error::Config(format!("fits did not converge: {}", nonconverged.join(", "))).at_stage("fit"));
    }

    let estimates = pool_fits(&fits, cfg.alpha).map_err(|e| e.at_stage("pool"))?;
    write_json(&out.join(ESTIMATES_FILE), &estimates).map_err(|e| e.at_stage("pool"))?;

    let (fit, residuals) = assess_fits(&fits, &set, cfg.pooling).map_err(|e| e.at_stage("assess"))?;
    write_json(&out.join(FIT_FILE), &fit).map_err(|e| e.at_stage("assess"))?;
    residuals.save(&out.join(RESIDUALS_FILE)).map_err(|e| e.at_stage("assess"))?;

    for m in &estimates.models {
        warnings.extend(m.warnings.iter().cloned());
    }
    for s in &fit.statistics {
        warnings.extend(s.chi_square.warnings.iter().cloned());
    }
    let manifest = write_manifest(cfg, &out, panel.n_fans(), set.m(), summary, warnings)?;
    Ok(PipelineOutcome {
        estimates,
        fit,
        residuals,
        manifest,
    })
}

fn write_manifest(
    cfg: &RunConfig,
    out: &Path,
    n_fans: usize,
    m: usize,
    ingest: Option<IngestSummary>,
    warnings: Vec<String>,
) -> Result<RunManifest> {
    let mut files = Vec::new();
    for name in [PANEL_FILE, FITS_FILE, ESTIMATES_FILE, FIT_FILE, RESIDUALS_FILE] {
        let bytes = std::fs::read(out.join(name))?;
        files.push(FileDigest {
            name: name.into(),
            sha256: sha256_hex(&bytes),
        });
    }
    let simulation = match &cfg.input {
        Some(InputSource::Simulate(s)) => Some(s.seed),
        _ => None,
    };
    let manifest = RunManifest {
        package: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_sha256: cfg.hash()?,
        seeds: Seeds {
            imputation: cfg.imputation.seed,
            optimizer: cfg.fit.seed,
            simulation,
        },
        n_fans,
        m,
        ingest,
        warnings,
        files,
    };
    write_json(&out.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// File-based stage entry points used by the command-line tool.
pub mod stages {
    use super::*;

    /// Raw records (or the configured input) to `panel.csv`.
    pub fn ingest_to(cfg: &RunConfig, out: &Path) -> Result<(PanelDataset, Option<IngestSummary>)> {
        std::fs::create_dir_all(out)?;
        let (panel, summary) = load_input(cfg).map_err(|e| e.at_stage("ingest"))?;
        panel.save(&out.join(PANEL_FILE))?;
        if let Some(s) = &summary {
            write_json(&out.join(INGEST_FILE), s)?;
        }
        Ok((panel, summary))
    }

    /// Simulated raw records and the binned panel.
    pub fn simulate_to(sim: &SimulationConfig, clock: &MatchClock, out: &Path) -> Result<PanelDataset> {
        std::fs::create_dir_all(out)?;
        let panel = simulate_panel(sim).map_err(|e| e.at_stage("simulate"))?;
        RawRecordFile::from_panel(&panel, &simulation_clock(clock), &sim.grid)?.save(&out.join(RAW_FILE))?;
        panel.save(&out.join(PANEL_FILE))?;
        Ok(panel)
    }

    pub fn impute_to(panel: &Path, opts: &ImputationOptions, out: &Path) -> Result<ImputationSet> {
        let panel = PanelDataset::load(panel).map_err(|e| e.at_stage("impute"))?;
        let set = mice_impute(&filter_fans(&panel)?, opts).map_err(|e| e.at_stage("impute"))?;
        set.save(&out.join(IMPUTATION_DIR))?;
        Ok(set)
    }

    pub fn fit_to(imputations: &Path, cfg: &RunConfig, out: &Path) -> Result<FitSet> {
        let set = ImputationSet::load(imputations).map_err(|e| e.at_stage("fit"))?;
        let fits = fit_imputations(&set, cfg).map_err(|e| e.at_stage("fit"))?;
        std::fs::create_dir_all(out)?;
        fits.save(&out.join(FITS_FILE))?;
        Ok(fits)
    }

    pub fn pool_to(fits: &Path, alpha: f64, out: &Path) -> Result<EstimatesReport> {
        let fits = FitSet::load(fits).map_err(|e| e.at_stage("pool"))?;
        let est = pool_fits(&fits, alpha).map_err(|e| e.at_stage("pool"))?;
        std::fs::create_dir_all(out)?;
        write_json(&out.join(ESTIMATES_FILE), &est)?;
        Ok(est)
    }

    pub fn assess_to(fits: &Path, imputations: &Path, method: PoolingMethod, out: &Path) -> Result<(FitSummary, ResidualMatrix)> {
        let fits = FitSet::load(fits).map_err(|e| e.at_stage("assess"))?;
        let set = ImputationSet::load(imputations).map_err(|e| e.at_stage("assess"))?;
        let (summary, res) = assess_fits(&fits, &set, method).map_err(|e| e.at_stage("assess"))?;
        std::fs::create_dir_all(out)?;
        write_json(&out.join(FIT_FILE), &summary)?;
        res.save(&out.join(RESIDUALS_FILE))?;
        Ok((summary, res))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_overrides() {
        let cfg = RunConfig::from_json(r#"{"imputation": {"m": 3}, "variant": "full"}"#).unwrap();
        assert_eq!(cfg.imputation.m, 3);
        assert_eq!(cfg.imputation.iters, ImputationOptions::default().iters);
        assert_eq!(cfg.variant, VariantSelection::Full);
        assert_eq!(cfg.alpha, 0.05);
        assert!(cfg.validate().is_ok());
        assert!(RunConfig::from_json(r#"{"alpha": 2.0}"#).unwrap().validate().is_err());
        assert!(RunConfig::from_json(r#"{"imputation": {"m": 0}}"#).unwrap().validate().is_err());
    }

    #[test]
    fn input_sources_parse() {
        let cfg = RunConfig::from_json(r#"{"input": {"kind": "raw", "path": "records.csv"}, "clock": {"kickoff": "2023-05-20 15:30:00"}}"#).unwrap();
        assert_eq!(cfg.input, Some(InputSource::Raw { path: "records.csv".into() }));
        let sim = SimulationConfig::new(crate::model::ParameterVector::reference(), 10, 3);
        let text = serde_json::to_string(&RunConfig {
            input: Some(InputSource::Simulate(sim.clone())),
            ..RunConfig::default()
        })
        .unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap().input, Some(InputSource::Simulate(sim)));
    }

    #[test]
    fn hash_ignores_output_dir() {
        let a = RunConfig::default();
        let b = RunConfig {
            output_dir: "elsewhere".into(),
            ..RunConfig::default()
        };
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        let c = RunConfig {
            alpha: 0.01,
            ..RunConfig::default()
        };
        assert_ne!(a.hash().unwrap(), c.hash().unwrap());
        assert_eq!(a.hash().unwrap().len(), 64);
    }

    #[test]
    fn missing_input_is_a_stage_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            output_dir: dir.path().to_path_buf(),
            ..RunConfig::default()
        };
        match run_pipeline(&cfg) {
            Err(Error::Stage { stage, .. }) => assert_eq!(stage, "ingest"),
            other => panic!("{:?}", other.err()),
        }
    }

    #[test]
    fn sha256_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
