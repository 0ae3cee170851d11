//! Chained-equation imputation of missing stress levels.
//!
//! Each incomplete column `SL_t` is regressed on the other stress columns,
//! the same-time heart rate and the same-time activity covariates. Missing
//! entries start as random draws from the observed values of their column
//! and are refreshed in `iters` sweeps over the columns.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::PanelDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImputationMethod {
    /// Bayesian linear regression draw plus noise, winsorized to `[0, 100]`.
    Normal,
    /// Predictive mean matching with `donors` candidates.
    Pmm,
}

impl std::str::FromStr for ImputationMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "normal" | "norm" => Ok(Self::Normal),
            "pmm" => Ok(Self::Pmm),
            other => Err(Error::Config(format!("unknown imputation method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImputationOptions {
    pub m: usize,
    pub method: ImputationMethod,
    pub iters: usize,
    pub seed: u64,
    pub donors: usize,
    pub ridge: f64,
    pub include_heart_rate: bool,
}

impl Default for ImputationOptions {
    fn default() -> Self {
        Self {
            m: 10,
            method: ImputationMethod::Pmm,
            iters: 5,
            seed: 1,
            donors: 5,
            ridge: 1e-5,
            include_heart_rate: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImputationSet {
    pub datasets: Vec<PanelDataset>,
    pub options: ImputationOptions,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterSummary {
    pub input: usize,
    pub no_stress: usize,
    pub too_sparse: usize,
    pub retained: usize,
}

/// Drops fans without any stress reading, then fans with more than half of
/// their stress readings missing.
pub fn filter_fans(raw: &PanelDataset) -> Result<PanelDataset> {
    filter_fans_with_summary(raw).map(|(d, _)| d)
}

pub fn filter_fans_with_summary(raw: &PanelDataset) -> Result<(PanelDataset, FilterSummary)> {
    raw.n_points_check()?;
    let t = raw.n_points;
    let mut keep = Vec::new();
    let (mut no_stress, mut too_sparse) = (0, 0);
    for (i, row) in raw.sl.iter().enumerate() {
        let missing = row.iter().filter(|v| v.is_none()).count();
        if missing == t {
            no_stress += 1;
        } else if 2 * missing > t {
            too_sparse += 1;
        } else {
            keep.push(i);
        }
    }
    if keep.is_empty() {
        return Err(Error::Data("no fans left after filtering".into()));
    }
    let summary = FilterSummary {
        input: raw.n_fans(),
        no_stress,
        too_sparse,
        retained: keep.len(),
    };
    Ok((raw.select(&keep), summary))
}

impl PanelDataset {
    fn n_points_check(&self) -> Result<()> {
        if self.n_points == 0 {
            return Err(Error::Data("panel has no time points".into()));
        }
        self.validate()
    }
}

/// Produces `m` completed copies of `data`; each chain runs on its own
/// ChaCha8 stream of `seed`.
pub fn mice_impute(data: &PanelDataset, opts: &ImputationOptions) -> Result<ImputationSet> {
    data.validate()?;
    if opts.m < 1 {
        return Err(Error::Config("m must be at least 1".into()));
    }
    if opts.donors < 1 {
        return Err(Error::Config("PMM needs at least one donor".into()));
    }
    let t = data.n_points;
    for col in 0..t {
        if data.sl.iter().all(|r| r[col].is_none()) {
            return Err(Error::Imputation(format!("column SL_{} has no observed values", col + 1)));
        }
    }
    let mut warnings = Vec::new();
    if opts.m < 2 {
        warnings.push("m < 2: pooling will degenerate to a single analysis".into());
    }
    let chains: Vec<(PanelDataset, Vec<String>)> = (0..opts.m as u64)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(c);
            run_chain(data, opts, &mut rng)
        })
        .collect::<Result<_>>()?;
    let mut datasets = Vec::with_capacity(opts.m);
    for (d, w) in chains {
        for msg in w {
            if !warnings.contains(&msg) {
                warnings.push(msg);
            }
        }
        datasets.push(d);
    }
    Ok(ImputationSet {
        datasets,
        options: opts.clone(),
        warnings,
    })
}

fn run_chain(data: &PanelDataset, opts: &ImputationOptions, rng: &mut ChaCha8Rng) -> Result<(PanelDataset, Vec<String>)> {
    let n = data.n_fans();
    let t = data.n_points;
    let mut warnings = Vec::new();
    let observed: Vec<Vec<usize>> = (0..t)
        .map(|c| (0..n).filter(|&i| data.sl[i][c].is_some()).collect())
        .collect();
    let missing: Vec<Vec<usize>> = (0..t)
        .map(|c| (0..n).filter(|&i| data.sl[i][c].is_none()).collect())
        .collect();

    let mut values = DMatrix::<f64>::zeros(n, t);
    for c in 0..t {
        for &i in &observed[c] {
            values[(i, c)] = data.sl[i][c].unwrap_or_default();
        }
        for &i in &missing[c] {
            let donor = observed[c][rng.random_range(0..observed[c].len())];
            values[(i, c)] = values[(donor, c)];
        }
    }

    let incomplete: Vec<usize> = (0..t).filter(|&c| !missing[c].is_empty()).collect();
    for _ in 0..opts.iters {
        for &c in &incomplete {
            let x = design(data, &values, c, opts.include_heart_rate);
            let y_obs = DVector::from_iterator(observed[c].len(), observed[c].iter().map(|&i| values[(i, c)]));
            let x_obs = select_rows(&x, &observed[c]);
            let x_mis = select_rows(&x, &missing[c]);
            let draw = bayes_draw(&x_obs, &y_obs, opts.ridge, rng, c, &mut warnings)?;
            match opts.method {
                ImputationMethod::Normal => {
                    let pred = &x_mis * &draw.beta_star;
                    for (k, &i) in missing[c].iter().enumerate() {
                        let z: f64 = rng.sample(StandardNormal);
                        values[(i, c)] = (pred[k] + draw.sigma_star * z).clamp(0.0, 100.0);
                    }
                }
                ImputationMethod::Pmm => {
                    let yhat_obs = &x_obs * &draw.beta_hat;
                    let yhat_mis = &x_mis * &draw.beta_star;
                    let k = opts.donors.min(observed[c].len());
                    let mut order: Vec<usize> = (0..observed[c].len()).collect();
                    for (r, &i) in missing[c].iter().enumerate() {
                        let target = yhat_mis[r];
                        order.sort_by(|&a, &b| {
                            let da = (yhat_obs[a] - target).abs();
                            let db = (yhat_obs[b] - target).abs();
                            da.total_cmp(&db).then(a.cmp(&b))
                        });
                        let pick = order[rng.random_range(0..k)];
                        values[(i, c)] = y_obs[pick];
                    }
                }
            }
        }
    }

    let mut out = data.clone();
    for c in 0..t {
        for &i in &missing[c] {
            out.sl[i][c] = Some(values[(i, c)]);
        }
    }
    Ok((out, warnings))
}

/// Intercept plus standardized predictors for column `c`.
fn design(data: &PanelDataset, values: &DMatrix<f64>, c: usize, with_hr: bool) -> DMatrix<f64> {
    let n = data.n_fans();
    let t = data.n_points;
    let mut cols: Vec<Vec<f64>> = Vec::new();
    for other in (0..t).filter(|&o| o != c) {
        cols.push(values.column(other).iter().copied().collect());
    }
    if with_hr {
        cols.push((0..n).map(|i| data.hr[i][c]).collect());
    }
    cols.push((0..n).map(|i| data.steps[i][c]).collect());
    cols.push((0..n).map(|i| data.calories[i][c]).collect());
    cols.push((0..n).map(|i| data.motion[i][c]).collect());
    // constant predictors carry no information beyond the intercept
    cols.retain(|col| {
        let m = col.iter().sum::<f64>() / n as f64;
        col.iter().any(|v| (v - m).abs() > 1e-12 * (1.0 + m.abs()))
    });
    let mut x = DMatrix::<f64>::zeros(n, cols.len() + 1);
    x.column_mut(0).fill(1.0);
    for (j, col) in cols.iter().enumerate() {
        let m = col.iter().sum::<f64>() / n as f64;
        let sd = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64).sqrt();
        for i in 0..n {
            x[(i, j + 1)] = (col[i] - m) / sd;
        }
    }
    x
}

fn select_rows(x: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), x.ncols(), |r, c| x[(rows[r], c)])
}

struct Draw {
    beta_hat: DVector<f64>,
    beta_star: DVector<f64>,
    sigma_star: f64,
}

/// Posterior draw of the regression coefficients and residual scale under
/// a flat prior, with a ridge penalty proportional to the diagonal.
fn bayes_draw(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    ridge: f64,
    rng: &mut ChaCha8Rng,
    col: usize,
    warnings: &mut Vec<String>,
) -> Result<Draw> {
    let k = x.ncols();
    let xtx = x.transpose() * x;
    let penalized = |kappa: f64| {
        let mut pen = xtx.clone();
        for j in 0..k {
            pen[(j, j)] += kappa * xtx[(j, j)].max(1e-12);
        }
        pen
    };
    let mut kappa = ridge;
    if crate::linalg::condition_number(&xtx) > 1e10 {
        kappa = ridge.max(1e-3);
        let msg = format!("SL_{}: collinear predictors, ridge raised to {kappa:e}", col + 1);
        if !warnings.contains(&msg) {
            warnings.push(msg);
        }
    }
    let chol = penalized(kappa)
        .cholesky()
        .ok_or_else(|| Error::Imputation(format!("SL_{}: predictor matrix is singular even with ridge", col + 1)))?;
    let v = chol.inverse();
    let beta_hat = &v * (x.transpose() * y);
    let resid = y - x * &beta_hat;
    let rss = resid.dot(&resid);
    let df = (x.nrows() as f64 - k as f64).max(1.0);
    let chi = ChiSquared::new(df).map_err(|e| Error::Imputation(e.to_string()))?;
    let sigma_star = (rss.max(1e-12) / chi.sample(rng)).sqrt();
    let lower = nalgebra::Cholesky::new(v.clone())
        .map(|c| c.l())
        .unwrap_or_else(|| DMatrix::from_diagonal(&v.diagonal().map(|d| d.max(0.0).sqrt())));
    let z = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
    let beta_star = &beta_hat + lower * z * sigma_star;
    Ok(Draw {
        beta_hat,
        beta_star,
        sigma_star,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    m: usize,
    seed: u64,
    method: ImputationMethod,
    iters: usize,
    donors: usize,
    ridge: f64,
    include_heart_rate: bool,
    columns: Vec<String>,
    files: Vec<String>,
    warnings: Vec<String>,
}

pub const MANIFEST_FILE: &str = "imputations.json";

impl ImputationSet {
    pub fn m(&self) -> usize {
        self.datasets.len()
    }

    /// Writes `imputation_<k>.csv` for each copy and a manifest into `dir`.
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let mut files = Vec::new();
        for (k, d) in self.datasets.iter().enumerate() {
            let name = format!("imputation_{}.csv", k + 1);
            d.save(&dir.join(&name))?;
            files.push(name);
        }
        let n_points = self.datasets.first().map(|d| d.n_points).unwrap_or(0);
        let o = &self.options;
        let manifest = Manifest {
            m: self.m(),
            seed: o.seed,
            method: o.method,
            iters: o.iters,
            donors: o.donors,
            ridge: o.ridge,
            include_heart_rate: o.include_heart_rate,
            columns: PanelDataset::header(n_points),
            files,
            warnings: self.warnings.clone(),
        };
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(path)
    }

    /// Loads from a manifest file or a directory containing one.
    pub fn load(path: &Path) -> Result<Self> {
        let manifest_path = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let dir = manifest_path.parent().unwrap_or(Path::new("."));
        let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(&manifest_path)?)?;
        let datasets = manifest
            .files
            .iter()
            .map(|f| PanelDataset::load(&dir.join(f)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            datasets,
            options: ImputationOptions {
                m: manifest.m,
                method: manifest.method,
                iters: manifest.iters,
                seed: manifest.seed,
                donors: manifest.donors,
                ridge: manifest.ridge,
                include_heart_rate: manifest.include_heart_rate,
            },
            warnings: manifest.warnings,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ParameterVector;
    use crate::simulation::{simulate_panel, Missingness, SimulationConfig};

    fn masked(n: usize, seed: u64) -> PanelDataset {
        simulate_panel(&SimulationConfig {
            missingness: Some(Missingness::mar(0.25)),
            ..SimulationConfig::new(ParameterVector::reference(), n, seed)
        })
        .unwrap()
    }

    fn opts(method: ImputationMethod) -> ImputationOptions {
        ImputationOptions {
            m: 3,
            method,
            iters: 3,
            seed: 42,
            ..ImputationOptions::default()
        }
    }

    #[test]
    fn filter_counts() {
        let mut p = masked(60, 1);
        for row in p.sl.iter_mut() {
            for v in row.iter_mut() {
                *v = Some(50.0);
            }
        }
        for i in 0..4 {
            p.sl[i] = vec![None; 34];
        }
        for i in 4..10 {
            for t in 0..18 {
                p.sl[i][t] = None;
            }
        }
        // exactly half missing is kept
        for t in 0..17 {
            p.sl[10][t] = None;
        }
        let (f, s) = filter_fans_with_summary(&p).unwrap();
        assert_eq!(s.no_stress, 4);
        assert_eq!(s.too_sparse, 6);
        assert_eq!(s.retained, 50);
        assert_eq!(f.fan_ids[0], p.fan_ids[10]);
        assert_eq!(f.sl[1], p.sl[11]);

        for row in p.sl.iter_mut() {
            *row = vec![None; 34];
        }
        assert!(filter_fans(&p).is_err());
    }

    #[test]
    fn complete_data_is_copied() {
        let p = simulate_panel(&SimulationConfig::new(ParameterVector::reference(), 80, 2)).unwrap();
        let set = mice_impute(&p, &opts(ImputationMethod::Normal)).unwrap();
        assert_eq!(set.m(), 3);
        assert!(set.datasets.iter().all(|d| d == &p));
    }

    #[test]
    fn observed_entries_preserved_and_pmm_copies_donors() {
        let p = masked(150, 3);
        let set = mice_impute(&p, &opts(ImputationMethod::Pmm)).unwrap();
        for d in &set.datasets {
            assert!(d.is_complete());
            for i in 0..p.n_fans() {
                for t in 0..34 {
                    match p.sl[i][t] {
                        Some(v) => assert_eq!(d.sl[i][t], Some(v)),
                        None => {
                            let v = d.sl[i][t].unwrap();
                            assert!(p.sl.iter().any(|r| r[t] == Some(v)), "not a donor value");
                        }
                    }
                }
                assert_eq!(d.hr[i], p.hr[i]);
            }
        }
        assert_ne!(set.datasets[0], set.datasets[1]);
    }

    #[test]
    fn normal_draws_are_bounded_and_deterministic() {
        let p = masked(150, 4);
        let a = mice_impute(&p, &opts(ImputationMethod::Normal)).unwrap();
        let b = mice_impute(&p, &opts(ImputationMethod::Normal)).unwrap();
        assert_eq!(a, b);
        for d in &a.datasets {
            for i in 0..p.n_fans() {
                for t in 0..34 {
                    if p.sl[i][t].is_none() {
                        let v = d.sl[i][t].unwrap();
                        assert!((0.0..=100.0).contains(&v));
                    }
                }
            }
        }
    }

    #[test]
    fn imputations_track_the_conditional_mean() {
        let truth = simulate_panel(&SimulationConfig::new(ParameterVector::reference(), 400, 5)).unwrap();
        let p = masked(400, 5);
        let set = mice_impute(&p, &opts(ImputationMethod::Pmm)).unwrap();
        let (mut err_imp, mut err_naive, mut k) = (0.0, 0.0, 0);
        for t in 0..34 {
            let col_mean = p.sl.iter().filter_map(|r| r[t]).sum::<f64>() / p.sl.iter().filter(|r| r[t].is_some()).count() as f64;
            for i in 0..400 {
                if p.sl[i][t].is_none() {
                    let v = truth.sl[i][t].unwrap();
                    let imp = set.datasets.iter().map(|d| d.sl[i][t].unwrap()).sum::<f64>() / 3.0;
                    err_imp += (imp - v).powi(2);
                    err_naive += (col_mean - v).powi(2);
                    k += 1;
                }
            }
        }
        assert!(k > 0);
        assert!(err_imp < 0.6 * err_naive, "{} vs {}", err_imp / k as f64, err_naive / k as f64);
    }

    #[test]
    fn all_missing_column_is_an_error() {
        let mut p = masked(50, 6);
        for r in p.sl.iter_mut() {
            r[5] = None;
        }
        assert!(matches!(
            mice_impute(&p, &opts(ImputationMethod::Pmm)),
            Err(Error::Imputation(_))
        ));
    }

    #[test]
    fn collinear_predictors_trigger_ridge() {
        let mut p = masked(120, 7);
        for i in 0..p.n_fans() {
            for t in 0..34 {
                p.calories[i][t] = 2.0 * p.steps[i][t] + 1.0;
            }
        }
        let set = mice_impute(&p, &opts(ImputationMethod::Normal)).unwrap();
        assert!(set.warnings.iter().any(|w| w.contains("collinear")), "{:?}", set.warnings);
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let p = masked(90, 8);
        let set = mice_impute(&p, &opts(ImputationMethod::Pmm)).unwrap();
        let manifest = set.save(dir.path()).unwrap();
        let back = ImputationSet::load(&manifest).unwrap();
        assert_eq!(back, set);
        let again = ImputationSet::load(dir.path()).unwrap();
        assert_eq!(again.datasets, set.datasets);
    }
}
