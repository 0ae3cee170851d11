use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use super::{discrepancy_and_gradient, FitResult, PreparedSample, SampleMoments};
use crate::error::{Error, Result};
use crate::linalg::symmetrize;
use crate::model::ModelDefinition;

/// The trend (co)variances whose joint contribution is tested by default.
pub const DEFAULT_JOINT_TEST: [&str; 4] = ["phi_s2", "phi_iff_s1", "phi_iff_s2", "phi_s1_s2"];

#[derive(Debug, Clone)]
pub struct StandardErrors {
    pub se: Vec<Option<f64>>,
    /// Inverse observed information over the free parameters.
    pub vcov: Option<DMatrix<f64>>,
    pub warnings: Vec<String>,
}

/// Standard errors from the inverse observed information.
///
/// The Hessian of the negative log-likelihood is built by central
/// differences of the analytic gradient with step `1e-4 (1 + |theta_i|)`.
/// Entries whose variance comes out non-positive are reported as `None`.
pub fn standard_errors(result: &FitResult, def: &ModelDefinition, sample: &SampleMoments) -> Result<StandardErrors> {
    let prep = PreparedSample::new(sample)?;
    let theta = result.params.values();
    let names = result.names();
    let free: Vec<usize> = (0..theta.len()).filter(|&i| result.free[i]).collect();
    let k = free.len();
    let mut warnings = Vec::new();
    let half_n = 0.5 * sample.n as f64;

    let mut info = DMatrix::<f64>::zeros(k, k);
    let mut bad_rows = vec![false; k];
    for (a, &i) in free.iter().enumerate() {
        let h = 1e-4 * (1.0 + theta[i].abs());
        let grad_at = |delta: f64| -> Result<Vec<f64>> {
            let mut v = theta.clone();
            v[i] += delta;
            let p = result.params.with_values(&v)?;
            Ok(discrepancy_and_gradient(&p, &def.grid, &prep)?.1)
        };
        match (grad_at(h), grad_at(-h)) {
            (Ok(gp), Ok(gm)) => {
                for (b, &j) in free.iter().enumerate() {
                    info[(a, b)] = half_n * (gp[j] - gm[j]) / (2.0 * h);
                }
            }
            _ => {
                bad_rows[a] = true;
                warnings.push(format!("{}: Hessian step left the admissible region", names[i]));
            }
        }
    }
    symmetrize(&mut info);

    let mut se = vec![None; theta.len()];
    if bad_rows.iter().all(|b| !b) {
        if let Some(chol) = info.clone().cholesky() {
            let vcov = chol.inverse();
            for (a, &i) in free.iter().enumerate() {
                se[i] = Some(vcov[(a, a)].sqrt());
            }
            return Ok(StandardErrors {
                se,
                vcov: Some(vcov),
                warnings,
            });
        }
    }

    warnings.push("observed information is not positive definite".into());
    let good: Vec<usize> = (0..k).filter(|&a| !bad_rows[a]).collect();
    let sub = DMatrix::from_fn(good.len(), good.len(), |r, c| info[(good[r], good[c])]);
    if let Some(inv) = sub.try_inverse() {
        for (r, &a) in good.iter().enumerate() {
            let v = inv[(r, r)];
            let i = free[a];
            if v.is_finite() && v > 0.0 {
                se[i] = Some(v.sqrt());
            } else {
                warnings.push(format!("{}: standard error undetermined", names[i]));
            }
        }
    } else {
        warnings.push("observed information is singular".into());
    }
    Ok(StandardErrors {
        se,
        vcov: None,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaldTest {
    pub name: String,
    pub estimate: f64,
    pub se: Option<f64>,
    pub z: Option<f64>,
    pub p: Option<f64>,
    pub significant: Option<bool>,
    pub significant_bonferroni: Option<bool>,
}

pub fn bonferroni_threshold(alpha: f64, k: usize) -> f64 {
    alpha / k as f64
}

pub fn two_sided_normal_p(z: f64) -> f64 {
    let normal = Normal::standard();
    (2.0 * normal.sf(z.abs())).min(1.0)
}

/// Per-parameter two-sided tests of `theta = 0`, with the Bonferroni
/// threshold `alpha / k` over the `k` free parameters.
pub fn wald_tests(result: &FitResult, alpha: f64) -> Vec<WaldTest> {
    let k = result.n_free();
    let bonf = bonferroni_threshold(alpha, k);
    let values = result.params.values();
    result
        .names()
        .iter()
        .enumerate()
        .filter(|(i, _)| result.free[*i])
        .map(|(i, name)| {
            let se = result.se[i].filter(|s| s.is_finite() && *s > 0.0);
            let z = se.map(|s| values[i] / s);
            let p = z.map(two_sided_normal_p);
            WaldTest {
                name: name.to_string(),
                estimate: values[i],
                se,
                z,
                p,
                significant: p.map(|p| p < alpha),
                significant_bonferroni: p.map(|p| p < bonf),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrtResult {
    pub stat: f64,
    pub df: usize,
    pub p: f64,
    /// Raw statistic was negative beyond tolerance: the restricted fit found
    /// a better optimum than the full one.
    pub optimizer_issue: bool,
}

/// `2 (loglik_full - loglik_restricted)` referred to chi-square with the
/// difference in free-parameter counts.
pub fn likelihood_ratio_test(full: &FitResult, restricted: &FitResult) -> Result<LrtResult> {
    if full.n != restricted.n {
        return Err(Error::Data("likelihood ratio test needs fits on the same sample".into()));
    }
    let (kf, kr) = (full.n_free(), restricted.n_free());
    if kr > kf {
        return Err(Error::Data(format!(
            "restricted model has more free parameters ({kr}) than the full model ({kf})"
        )));
    }
    let df = kf - kr;
    let raw = 2.0 * (full.loglik - restricted.loglik);
    let tol = 1e-6 * (1.0 + full.loglik.abs());
    let optimizer_issue = raw < -tol;
    let stat = raw.max(0.0);
    let p = if df == 0 || stat == 0.0 {
        1.0
    } else {
        ChiSquared::new(df as f64)
            .map_err(|e| Error::Data(e.to_string()))?
            .sf(stat)
    };
    Ok(LrtResult {
        stat,
        df,
        p,
        optimizer_issue,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ParameterVector, Parameters};

    fn dummy(se: Vec<Option<f64>>, values: Vec<f64>) -> FitResult {
        FitResult {
            params: Parameters::TimeDependent(ParameterVector::from_slice(&values).unwrap()),
            free: vec![true; 20],
            n: 137,
            loglik: -100.0,
            f_ml: 1.0,
            chi2: 136.0,
            se,
            converged: true,
            admissible: true,
            n_iter: 1,
            grad_norm: 0.0,
            warnings: vec![],
        }
    }

    #[test]
    fn bonferroni_threshold_example() {
        assert!((bonferroni_threshold(0.05, 20) - 0.0025).abs() < 1e-15);
    }

    #[test]
    fn wald_basics() {
        let mut v = ParameterVector::reference().to_vec();
        v[0] = 0.0;
        let mut se = vec![Some(1.0); 20];
        se[1] = None;
        // p = 0.002 and 0.003 around the 0.0025 threshold
        let z_002 = 3.090_232_306_167_813_5;
        let z_003 = 2.967_737_925_152_21;
        v[2] = z_002;
        v[3] = z_003;
        let tests = wald_tests(&dummy(se, v), 0.05);
        assert_eq!(tests.len(), 20);
        assert_eq!(tests[0].p, Some(1.0));
        assert_eq!(tests[1].p, None);
        assert_eq!(tests[1].significant_bonferroni, None);
        assert!((tests[2].p.unwrap() - 0.002).abs() < 1e-9);
        assert_eq!(tests[2].significant_bonferroni, Some(true));
        assert!((tests[3].p.unwrap() - 0.003).abs() < 1e-9);
        assert_eq!(tests[3].significant_bonferroni, Some(false));
        assert_eq!(tests[3].significant, Some(true));
    }

    #[test]
    fn lrt_identical_models() {
        let a = dummy(vec![Some(1.0); 20], ParameterVector::reference().to_vec());
        let r = likelihood_ratio_test(&a, &a).unwrap();
        assert_eq!(r.stat, 0.0);
        assert_eq!(r.df, 0);
        assert_eq!(r.p, 1.0);
        assert!(!r.optimizer_issue);
    }

    #[test]
    fn lrt_flags_negative_statistic() {
        let full = dummy(vec![Some(1.0); 20], ParameterVector::reference().to_vec());
        let mut restricted = full.clone();
        restricted.free[13] = false;
        restricted.loglik = full.loglik + 5.0;
        let r = likelihood_ratio_test(&full, &restricted).unwrap();
        assert!(r.optimizer_issue);
        assert_eq!(r.df, 1);
    }
}
