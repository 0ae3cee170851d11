//! Combining fits across imputed datasets.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, FisherSnedecor, StudentsT};

use crate::error::{Error, Result};
use crate::estimation::{FitResult, WaldTest};
use crate::model::Variant;

/// Between-imputation SD above this multiple of the within SE is flagged.
pub const ANOMALY_RATIO: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledParameter {
    pub name: String,
    pub free: bool,
    pub estimate: f64,
    pub within: Option<f64>,
    pub between: f64,
    pub total: Option<f64>,
    pub se: Option<f64>,
    /// Degrees of freedom of the reference t distribution; `None` when the
    /// reference is normal (no between-imputation variance).
    pub df: Option<f64>,
    pub t: Option<f64>,
    pub p: Option<f64>,
    pub significance: String,
    pub significant_bonferroni: Option<bool>,
    pub anomaly: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledResult {
    pub variant: Variant,
    pub m: usize,
    pub n: usize,
    pub n_free: usize,
    pub alpha: f64,
    pub parameters: Vec<PooledParameter>,
    pub warnings: Vec<String>,
}

impl PooledResult {
    pub fn get(&self, name: &str) -> Option<&PooledParameter> {
        self.parameters.iter().find(|p| p.name == name)
    }
}

pub fn significance_code(p: Option<f64>) -> String {
    match p {
        Some(p) if p < 0.001 => "***",
        Some(p) if p < 0.01 => "**",
        Some(p) if p < 0.05 => "*",
        Some(p) if p < 0.1 => ".",
        _ => "",
    }
    .to_string()
}

/// Sum in ascending order, so the result does not depend on input order.
fn ordered_sum(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum()
}

/// Barnard-Rubin degrees of freedom for complete-data df `nu_com`.
pub fn barnard_rubin_df(m: usize, within: f64, between: f64, nu_com: f64) -> Option<f64> {
    if between <= 0.0 || m < 2 {
        return None;
    }
    let total = within + (1.0 + 1.0 / m as f64) * between;
    let lambda = (1.0 + 1.0 / m as f64) * between / total;
    let nu_old = (m as f64 - 1.0) / (lambda * lambda);
    let nu_obs = (nu_com + 1.0) / (nu_com + 3.0) * nu_com * (1.0 - lambda);
    if nu_obs <= 0.0 {
        return Some(0.0);
    }
    Some(nu_old * nu_obs / (nu_old + nu_obs))
}

/// Rubin's rules over fits of the same model on `m` imputed datasets,
/// aligned by parameter name.
pub fn pool_estimates(fits: &[FitResult], alpha: f64) -> Result<PooledResult> {
    let first = fits.first().ok_or_else(|| Error::Pooling("no fits to pool".into()))?;
    let failed: Vec<String> = fits
        .iter()
        .enumerate()
        .filter(|(_, f)| !f.converged)
        .map(|(i, _)| (i + 1).to_string())
        .collect();
    if !failed.is_empty() {
        return Err(Error::Pooling(format!("fits did not converge for imputation(s) {}", failed.join(", "))));
    }
    for (i, f) in fits.iter().enumerate() {
        if f.variant() != first.variant() || f.free != first.free || f.n != first.n {
            return Err(Error::Pooling(format!("imputation {} was fitted with a different model or sample size", i + 1)));
        }
    }
    let m = fits.len();
    let mf = m as f64;
    let mut warnings = Vec::new();
    if m < 2 {
        warnings.push("single imputation: pooling passes the fit through".into());
    }
    let n_free = first.n_free();
    let nu_com = (first.n as f64 - n_free as f64).max(1.0);
    let bonf = alpha / n_free.max(1) as f64;

    let mut parameters = Vec::new();
    for (j, name) in first.names().iter().enumerate() {
        let mut est: Vec<f64> = fits
            .iter()
            .map(|f| f.params.get(name).expect("same variant"))
            .collect();
        let q_bar = if est.iter().all(|&q| q == est[0]) {
            est[0]
        } else {
            ordered_sum(&mut est.clone()) / mf
        };
        let free = first.free[j];
        let between = if m > 1 {
            let mut dev: Vec<f64> = est.iter().map(|q| (q - q_bar).powi(2)).collect();
            ordered_sum(&mut dev) / (mf - 1.0)
        } else {
            0.0
        };
        est.clear();
        let ses: Option<Vec<f64>> = fits.iter().map(|f| f.se[j]).collect();
        let within = match (&ses, free) {
            (Some(s), true) => {
                let mut sq: Vec<f64> = s.iter().map(|v| v * v).collect();
                Some(ordered_sum(&mut sq) / mf)
            }
            _ => None,
        };
        if free && within.is_none() {
            warnings.push(format!("{name}: standard error missing in at least one imputation"));
        }
        let total = within.map(|w| w + (1.0 + 1.0 / mf) * between);
        let se = total.map(f64::sqrt);
        let df = within.and_then(|w| barnard_rubin_df(m, w, between, nu_com));
        let t = match se {
            Some(s) if s > 0.0 => Some(q_bar / s),
            _ => None,
        };
        let p = match (t, df) {
            (Some(t), None) => Some(crate::estimation::two_sided_normal_p(t)),
            (Some(t), Some(nu)) if nu > 0.0 => StudentsT::new(0.0, 1.0, nu)
                .ok()
                .map(|d| (2.0 * d.sf(t.abs())).min(1.0)),
            _ => None,
        };
        let anomaly = match within {
            Some(w) if w > 0.0 => between.sqrt() > ANOMALY_RATIO * w.sqrt(),
            _ => false,
        };
        if anomaly {
            warnings.push(format!("{name}: between-imputation spread exceeds {ANOMALY_RATIO}x the within SE"));
        }
        if !between.is_finite() {
            return Err(Error::Pooling(format!("{name}: between-imputation variance is not finite")));
        }
        parameters.push(PooledParameter {
            name: name.to_string(),
            free,
            estimate: q_bar,
            within,
            between,
            total,
            se,
            df,
            t,
            p,
            significance: significance_code(p),
            significant_bonferroni: p.map(|p| p < bonf),
            anomaly,
        });
    }
    Ok(PooledResult {
        variant: first.variant(),
        m,
        n: first.n,
        n_free,
        alpha,
        parameters,
        warnings,
    })
}

/// Single-fit counterpart of [`PooledResult`], built from Wald tests.
pub fn single_fit_table(fit: &FitResult, tests: &[WaldTest], alpha: f64) -> PooledResult {
    let mut parameters = Vec::new();
    for (j, name) in fit.names().iter().enumerate() {
        let test = tests.iter().find(|w| w.name == *name);
        let se = fit.se[j];
        parameters.push(PooledParameter {
            name: name.to_string(),
            free: fit.free[j],
            estimate: fit.params.values()[j],
            within: se.map(|s| s * s),
            between: 0.0,
            total: se.map(|s| s * s),
            se,
            df: None,
            t: test.and_then(|w| w.z),
            p: test.and_then(|w| w.p),
            significance: significance_code(test.and_then(|w| w.p)),
            significant_bonferroni: test.and_then(|w| w.significant_bonferroni),
            anomaly: false,
        });
    }
    PooledResult {
        variant: fit.variant(),
        m: 1,
        n: fit.n,
        n_free: fit.n_free(),
        alpha,
        parameters,
        warnings: Vec::new(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PoolingMethod {
    /// Stacked-data likelihood-ratio pooling: needs the statistic of a fit
    /// to the stacked imputations.
    #[default]
    D4,
    /// Pooling of the per-imputation chi-square values alone.
    D2,
}

impl std::str::FromStr for PoolingMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "d4" => Ok(Self::D4),
            "d2" => Ok(Self::D2),
            other => Err(Error::Config(format!("unknown pooling method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledChiSquare {
    pub method: PoolingMethod,
    pub m: usize,
    pub df: usize,
    pub per_imputation: Vec<f64>,
    pub mean: f64,
    /// Chi-square scale value `k * D`, the input to the fit indices.
    pub chi2: f64,
    /// The `D` statistic referred to `F(df, df_denominator)`.
    pub statistic: f64,
    /// Relative increase in variance due to missingness.
    pub r: f64,
    /// `None` when the reference is chi-square.
    pub df_denominator: Option<f64>,
    pub p: f64,
    pub warnings: Vec<String>,
}

fn chi2_sf(x: f64, k: usize) -> f64 {
    if k == 0 {
        return 1.0;
    }
    ChiSquared::new(k as f64).map(|d| d.sf(x.max(0.0))).unwrap_or(f64::NAN)
}

fn f_sf(x: f64, k: usize, v: f64) -> f64 {
    FisherSnedecor::new(k as f64, v).map(|d| d.sf(x.max(0.0))).unwrap_or(f64::NAN)
}

/// Pools per-imputation model chi-square statistics with `df` degrees of
/// freedom. `stacked` is the statistic of the same model fitted to the
/// stacked imputations and is required by [`PoolingMethod::D4`].
pub fn pool_chi_square(per_imputation: &[f64], stacked: Option<f64>, df: usize, method: PoolingMethod) -> Result<PooledChiSquare> {
    let m = per_imputation.len();
    if m == 0 {
        return Err(Error::Pooling("no statistics to pool".into()));
    }
    if df == 0 {
        return Err(Error::Pooling("pooling needs positive degrees of freedom".into()));
    }
    let mut sorted = per_imputation.to_vec();
    let mean = ordered_sum(&mut sorted) / m as f64;
    let k = df as f64;
    let mut warnings = Vec::new();
    if m < 2 {
        warnings.push("single imputation: chi-square passed through".into());
        let chi2 = per_imputation[0];
        return Ok(PooledChiSquare {
            method,
            m,
            df,
            per_imputation: per_imputation.to_vec(),
            mean,
            chi2,
            statistic: chi2 / k,
            r: 0.0,
            df_denominator: None,
            p: chi2_sf(chi2, df),
            warnings,
        });
    }
    let mf = m as f64;
    let (statistic, r, v) = match method {
        PoolingMethod::D4 => {
            let d_hat = stacked.ok_or_else(|| Error::Pooling("D4 pooling needs the stacked-data statistic".into()))?;
            let excess = mean - d_hat;
            let r = if excess <= 1e-12 * mean.abs() {
                0.0
            } else {
                (mf + 1.0) / (k * (mf - 1.0)) * excess
            };
            let stat = d_hat / (k * (1.0 + r));
            let t = k * (mf - 1.0);
            let v = if r <= 0.0 {
                None
            } else if t > 4.0 {
                Some(4.0 + (t - 4.0) * (1.0 + (1.0 - 2.0 / t) / r).powi(2))
            } else {
                Some(t * (1.0 + 1.0 / k) * (1.0 + 1.0 / r).powi(2) / 2.0)
            };
            (stat, r, v)
        }
        PoolingMethod::D2 => {
            let mut roots: Vec<f64> = per_imputation.iter().map(|d| d.max(0.0).sqrt()).collect();
            let root_mean = ordered_sum(&mut roots.clone()) / mf;
            let mut dev: Vec<f64> = roots.iter().map(|s| (s - root_mean).powi(2)).collect();
            roots.clear();
            let spread = sorted[m - 1] - sorted[0];
            let r = if spread == 0.0 {
                0.0
            } else {
                (1.0 + 1.0 / mf) * ordered_sum(&mut dev) / (mf - 1.0)
            };
            let stat = ((mean / k - (mf + 1.0) / (mf - 1.0) * r) / (1.0 + r)).max(0.0);
            let v = if r <= 0.0 {
                None
            } else {
                Some(k.powf(-3.0 / mf) * (mf - 1.0) * (1.0 + 1.0 / r).powi(2))
            };
            (stat, r, v)
        }
    };
    let chi2 = k * statistic;
    let p = match v {
        None => chi2_sf(chi2, df),
        Some(v) => f_sf(statistic, df, v),
    };
    Ok(PooledChiSquare {
        method,
        m,
        df,
        per_imputation: per_imputation.to_vec(),
        mean,
        chi2,
        statistic,
        r,
        df_denominator: v,
        p,
        warnings,
    })
}

/// Pooled fit statistics of one model variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledFitStatistics {
    pub variant: Variant,
    pub chi_square: PooledChiSquare,
    /// Arithmetic means across imputations.
    pub aic: f64,
    pub loglik: f64,
    pub n_free: usize,
}

/// `stacked` is the fit of the same model to the stacked moments (required
/// for D4).
pub fn pool_fit_statistics(
    fits: &[FitResult],
    stacked: Option<&FitResult>,
    df: usize,
    method: PoolingMethod,
) -> Result<PooledFitStatistics> {
    let first = fits.first().ok_or_else(|| Error::Pooling("no fits to pool".into()))?;
    let chi: Vec<f64> = fits.iter().map(|f| f.chi2).collect();
    let chi_square = pool_chi_square(&chi, stacked.map(|s| s.chi2), df, method)?;
    let m = fits.len() as f64;
    let mut aic: Vec<f64> = fits.iter().map(|f| f.aic()).collect();
    let mut ll: Vec<f64> = fits.iter().map(|f| f.loglik).collect();
    Ok(PooledFitStatistics {
        variant: first.variant(),
        chi_square,
        aic: ordered_sum(&mut aic) / m,
        loglik: ordered_sum(&mut ll) / m,
        n_free: first.n_free(),
    })
}
