//! Global fit statistics and the residual covariance diagnostic.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::estimation::{fitted_moments, FitResult, SampleMoments};
use crate::model::{ModelDefinition, Variant};
use crate::moments::ImpliedMoments;

/// Coefficients `(c0, c_p, c_q)` of the empirical sample-size correction
/// `N - (c0 + c_p p + c_q q)` that replaces `N - 1` in the test statistic.
pub const YUAN_COEFFICIENTS: [f64; 3] = [2.381, 0.361, 0.006];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YuanCorrection {
    pub factor: f64,
    pub chi2: f64,
    /// `false` when the factor was not positive and the raw value was kept.
    pub applied: bool,
}

/// Rescales `chi2_raw = (n - 1) F` to `(n - (c0 + c_p p + c_q q)) F`.
pub fn yuan_correction(chi2_raw: f64, n: usize, p: usize, q: usize) -> YuanCorrection {
    let [c0, cp, cq] = YUAN_COEFFICIENTS;
    let effective = n as f64 - (c0 + cp * p as f64 + cq * q as f64);
    let factor = effective / (n as f64 - 1.0);
    if factor > 0.0 && factor.is_finite() {
        YuanCorrection {
            factor,
            chi2: chi2_raw * factor,
            applied: true,
        }
    } else {
        YuanCorrection {
            factor: 1.0,
            chi2: chi2_raw,
            applied: false,
        }
    }
}

pub fn rmsea(chi2: f64, df: usize, n: usize) -> f64 {
    if df == 0 || n < 2 {
        return 0.0;
    }
    ((chi2 - df as f64).max(0.0) / (df as f64 * (n as f64 - 1.0))).sqrt()
}

/// Comparative fit against the null model `(chi2_null, df_null)`.
pub fn cfi(chi2: f64, df: usize, chi2_null: f64, df_null: usize) -> f64 {
    let excess = (chi2 - df as f64).max(0.0);
    let denom = (chi2_null - df_null as f64).max(excess);
    if denom <= 0.0 {
        1.0
    } else {
        1.0 - excess / denom
    }
}

fn chi2_p(chi2: f64, df: usize) -> f64 {
    if df == 0 {
        return 1.0;
    }
    ChiSquared::new(df as f64).map(|d| d.sf(chi2.max(0.0))).unwrap_or(f64::NAN)
}

/// Residuals `(s_ij - sigma_ij) / sqrt(s_ii s_jj)` with observed labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualMatrix {
    pub labels: Vec<String>,
    pub values: DMatrix<f64>,
    /// Mean residuals `(xbar_i - mu_i) / sqrt(s_ii)`.
    pub mean_values: DVector<f64>,
}

pub fn standardized_residuals(implied: &ImpliedMoments, sample: &SampleMoments, labels: Vec<String>) -> Result<ResidualMatrix> {
    let p = sample.dim();
    if implied.dim() != p || labels.len() != p {
        return Err(Error::Dimension("residuals need matching sample, model and labels".into()));
    }
    let sd: Vec<f64> = (0..p).map(|i| sample.cov[(i, i)]).map(f64::sqrt).collect();
    if let Some(i) = sd.iter().position(|&s| !(s > 0.0)) {
        return Err(Error::Data(format!("zero sample variance of {}", labels[i])));
    }
    let values = DMatrix::from_fn(p, p, |i, j| (sample.cov[(i, j)] - implied.cov[(i, j)]) / (sd[i] * sd[j]));
    let mean_values = DVector::from_fn(p, |i, _| (sample.mean[i] - implied.mean[i]) / sd[i]);
    Ok(ResidualMatrix {
        labels,
        values,
        mean_values,
    })
}

/// Residuals of a fitted model on its sample.
pub fn fit_residuals(fit: &FitResult, def: &ModelDefinition, sample: &SampleMoments) -> Result<ResidualMatrix> {
    standardized_residuals(&fitted_moments(fit, def), sample, def.observed_labels())
}

impl ResidualMatrix {
    pub fn dim(&self) -> usize {
        self.labels.len()
    }

    /// Root mean square over the unique covariance residuals and the mean
    /// residuals.
    pub fn srmr(&self) -> f64 {
        let p = self.dim();
        let mut ss = 0.0;
        for j in 0..p {
            for i in j..p {
                ss += self.values[(i, j)].powi(2);
            }
        }
        ss += self.mean_values.iter().map(|v| v * v).sum::<f64>();
        (ss / (p * (p + 1) / 2 + p) as f64).sqrt()
    }

    /// Elementwise average of residual matrices with identical labels.
    pub fn average(mats: &[ResidualMatrix]) -> Result<Self> {
        let first = mats.first().ok_or_else(|| Error::Data("no residual matrices to average".into()))?;
        let mut values = DMatrix::zeros(first.dim(), first.dim());
        let mut mean_values = DVector::zeros(first.dim());
        for m in mats {
            if m.labels != first.labels {
                return Err(Error::Dimension("residual matrices have different labels".into()));
            }
            values += &m.values;
            mean_values += &m.mean_values;
        }
        let k = mats.len() as f64;
        Ok(Self {
            labels: first.labels.clone(),
            values: values / k,
            mean_values: mean_values / k,
        })
    }

    /// Mean residual over the block `rows x cols` (0-based, half-open).
    pub fn block_mean(&self, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> f64 {
        let mut s = 0.0;
        let mut k = 0;
        for i in rows {
            for j in cols.clone() {
                s += self.values[(i, j)];
                k += 1;
            }
        }
        if k == 0 {
            0.0
        } else {
            s / k as f64
        }
    }

    /// Share of the unique cells with `|value| < bound`.
    pub fn share_within(&self, bound: f64) -> f64 {
        let p = self.dim();
        let mut inside = 0;
        let mut total = 0;
        for j in 0..p {
            for i in j..p {
                total += 1;
                inside += (self.values[(i, j)].abs() < bound) as usize;
            }
        }
        inside as f64 / total as f64
    }

    /// Labelled grid: header `label,HR_1,...`, one row per variable.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["label".to_string()];
        header.extend(self.labels.iter().cloned());
        wr.write_record(&header)?;
        for (i, label) in self.labels.iter().enumerate() {
            let mut rec = vec![label.clone()];
            rec.extend((0..self.dim()).map(|j| self.values[(i, j)].to_string()));
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFit {
    pub variant: Variant,
    pub q: usize,
    pub df: usize,
    pub chi2_raw: f64,
    pub chi2_corrected: f64,
    pub p_raw: f64,
    pub p_corrected: f64,
    pub aic: f64,
    pub srmr: f64,
    pub rmsea: f64,
    pub rmsea_corrected: f64,
    pub cfi: f64,
    pub cfi_corrected: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub n: usize,
    pub p: usize,
    pub correction_factor: f64,
    pub full: ModelFit,
    pub baseline: ModelFit,
    /// `aic(full) - aic(baseline)`.
    pub delta_aic: f64,
    pub flags: Vec<String>,
}

/// Per-model summary statistics feeding [`FitReport::from_statistics`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelStatistics {
    pub variant: Variant,
    pub q: usize,
    pub df: usize,
    pub chi2: f64,
    pub aic: f64,
    pub srmr: f64,
}

impl FitReport {
    /// `full` and `baseline` carry raw chi-square values on the same `n`.
    pub fn from_statistics(full: ModelStatistics, baseline: ModelStatistics, n: usize, p: usize) -> Self {
        let mut flags = Vec::new();
        let cf = yuan_correction(full.chi2, n, p, full.q);
        let cb = yuan_correction(baseline.chi2, n, p, baseline.q);
        if !cf.applied || !cb.applied {
            flags.push("correction factor not positive; raw chi-square used".into());
        }
        if baseline.chi2 < full.chi2 {
            flags.push("baseline model has a smaller chi-square than the full model".into());
        }
        let model = |s: ModelStatistics, c: YuanCorrection, null: (f64, f64)| ModelFit {
            variant: s.variant,
            q: s.q,
            df: s.df,
            chi2_raw: s.chi2,
            chi2_corrected: c.chi2,
            p_raw: chi2_p(s.chi2, s.df),
            p_corrected: chi2_p(c.chi2, s.df),
            aic: s.aic,
            srmr: s.srmr,
            rmsea: rmsea(s.chi2, s.df, n),
            rmsea_corrected: rmsea(c.chi2, s.df, n),
            cfi: cfi(s.chi2, s.df, null.0, baseline.df),
            cfi_corrected: cfi(c.chi2, s.df, null.1, baseline.df),
        };
        let null = (baseline.chi2, cb.chi2);
        FitReport {
            n,
            p,
            correction_factor: cf.factor,
            full: model(full, cf, null),
            baseline: model(baseline, cb, null),
            delta_aic: full.aic - baseline.aic,
            flags,
        }
    }
}

/// Fit report for complete-data fits of both variants on `sample`.
pub fn fit_indices(full: &FitResult, baseline: &FitResult, sample: &SampleMoments, grid: crate::model::TimeGrid) -> Result<FitReport> {
    if full.variant() != Variant::TimeDependent || baseline.variant() != Variant::TimeInvariantBaseline {
        return Err(Error::Config("fit_indices expects the full model and the baseline, in that order".into()));
    }
    if full.n != sample.n || baseline.n != sample.n {
        return Err(Error::Data("fits and sample differ in sample size".into()));
    }
    grid.validate()?;
    let full_def = ModelDefinition::new(grid, Variant::TimeDependent);
    let base_def = ModelDefinition::new(grid, Variant::TimeInvariantBaseline);
    let stats = |fit: &FitResult, def: &ModelDefinition| -> Result<ModelStatistics> {
        Ok(ModelStatistics {
            variant: fit.variant(),
            q: fit.n_free(),
            df: def.moment_count() - fit.n_free(),
            chi2: fit.chi2,
            aic: fit.aic(),
            srmr: fit_residuals(fit, def, sample)?.srmr(),
        })
    };
    let mut report = FitReport::from_statistics(stats(full, &full_def)?, stats(baseline, &base_def)?, sample.n, sample.dim());
    for (label, f) in [("full", full), ("baseline", baseline)] {
        if !f.converged {
            report.flags.push(format!("{label} model did not converge"));
        }
    }
    Ok(report)
}
