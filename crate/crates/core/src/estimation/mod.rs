//! Maximum likelihood estimation on complete-data sample moments.
//!
//! The discrepancy is the usual normal-theory fit function with a mean
//! structure,
//!
//! ```text
//! F = ln|Sigma| + tr(S Sigma^-1) - ln|S| - p + (xbar - mu)' Sigma^-1 (xbar - mu)
//! ```
//!
//! with `S` using divisor `n`. The test statistic is `(n - 1) F`.

mod inference;
mod optimizer;
mod standardized;
mod start;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, log_det};
use crate::model::{names_for, transforms_for, ModelDefinition, Parameters, TimeGrid, Variant};
use crate::moments::{moment_jacobian, moments_unchecked, ImpliedMoments};

pub use inference::{
    bonferroni_threshold, likelihood_ratio_test, standard_errors, two_sided_normal_p, wald_tests, LrtResult, StandardErrors, WaldTest,
    DEFAULT_JOINT_TEST,
};
pub use optimizer::{minimize, BfgsOptions, BfgsOutcome};
pub use standardized::{
    standardized_solution, variance_decomposition, StandardizedPoint, StandardizedSolution,
    VarianceDecomposition,
};
pub use start::start_values;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Mean vector and ML covariance (divisor `n`) of a complete sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMoments {
    pub n: usize,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl SampleMoments {
    pub fn new(n: usize, mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let p = mean.len();
        if cov.nrows() != p || cov.ncols() != p {
            return Err(Error::Dimension(format!(
                "covariance is {}x{}, mean has length {p}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        if n <= p {
            return Err(Error::Data(format!("sample size {n} must exceed dimension {p}")));
        }
        let asym = (&cov - cov.transpose()).abs().max();
        if asym > 1e-9 * (1.0 + cov.abs().max()) {
            return Err(Error::Data("sample covariance is not symmetric".into()));
        }
        Ok(Self { n, mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Moments of the stacked data of several equally sized samples: the
    /// average mean and the average covariance plus the scatter of the means.
    pub fn stacked(samples: &[SampleMoments]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Data("no samples to stack".into()))?;
        let m = samples.len() as f64;
        let p = first.dim();
        let mut mean = DVector::zeros(p);
        let mut cov = DMatrix::zeros(p, p);
        for s in samples {
            if s.dim() != p || s.n != first.n {
                return Err(Error::Dimension("stacked samples differ in size".into()));
            }
            mean += &s.mean;
            cov += &s.cov;
        }
        mean /= m;
        cov /= m;
        for s in samples {
            let d = &s.mean - &mean;
            cov += (&d * d.transpose()) / m;
        }
        Ok(Self {
            n: first.n,
            mean,
            cov,
        })
    }
}

/// Sample quantities reused across discrepancy evaluations.
#[derive(Debug, Clone)]
pub(crate) struct PreparedSample<'a> {
    pub sample: &'a SampleMoments,
    pub log_det_s: f64,
}

impl<'a> PreparedSample<'a> {
    pub fn new(sample: &'a SampleMoments) -> Result<Self> {
        let chol = cholesky(&sample.cov, "sample covariance")?;
        Ok(Self {
            sample,
            log_det_s: log_det(&chol),
        })
    }
}

struct Evaluation {
    f: f64,
    sigma_inv: DMatrix<f64>,
    resid: DVector<f64>,
    log_det_sigma: f64,
}

fn evaluate(implied: &ImpliedMoments, prep: &PreparedSample) -> Result<Evaluation> {
    let s = prep.sample;
    let p = s.dim();
    if implied.dim() != p {
        return Err(Error::Dimension(format!(
            "model has {} observed variables, sample has {p}",
            implied.dim()
        )));
    }
    let chol = cholesky(&implied.cov, "implied covariance")?;
    let log_det_sigma = log_det(&chol);
    let sigma_inv = chol.inverse();
    let resid = &s.mean - &implied.mean;
    let quad = resid.dot(&(&sigma_inv * &resid));
    let trace = s.cov.dot(&sigma_inv);
    let f = log_det_sigma + trace - prep.log_det_s - p as f64 + quad;
    Ok(Evaluation {
        f,
        sigma_inv,
        resid,
        log_det_sigma,
    })
}

/// ML discrepancy `F(theta)` between sample and implied moments.
pub fn ml_discrepancy(params: &Parameters, def: &ModelDefinition, sample: &SampleMoments) -> Result<f64> {
    check_variant(def, params)?;
    let prep = PreparedSample::new(sample)?;
    let implied = moments_unchecked(params, &def.grid);
    Ok(evaluate(&implied, &prep)?.f)
}

/// Normal log-likelihood of the sample at `params` (ML convention).
pub fn log_likelihood(params: &Parameters, def: &ModelDefinition, sample: &SampleMoments) -> Result<f64> {
    check_variant(def, params)?;
    let prep = PreparedSample::new(sample)?;
    let implied = moments_unchecked(params, &def.grid);
    let eval = evaluate(&implied, &prep)?;
    Ok(loglik_from_f(eval.f, &prep))
}

fn loglik_from_f(f: f64, prep: &PreparedSample) -> f64 {
    let n = prep.sample.n as f64;
    let p = prep.sample.dim() as f64;
    -0.5 * n * (f + prep.log_det_s + p + p * LN_2PI)
}

/// Discrepancy and its gradient in the natural parameter space.
pub(crate) fn discrepancy_and_gradient(
    params: &Parameters,
    grid: &TimeGrid,
    prep: &PreparedSample,
) -> Result<(f64, Vec<f64>)> {
    let implied = moments_unchecked(params, grid);
    let eval = evaluate(&implied, prep)?;
    let jac = moment_jacobian(params, grid);
    let si = &eval.sigma_inv;
    let si_r = si * &eval.resid;
    let outer = &prep.sample.cov + &eval.resid * eval.resid.transpose();
    let w = si - si * outer * si;
    let grad = jac
        .cov
        .iter()
        .zip(&jac.mean)
        .map(|(dc, dm)| w.dot(dc) - 2.0 * si_r.dot(dm))
        .collect();
    let _ = eval.log_det_sigma;
    Ok((eval.f, grad))
}

fn check_variant(def: &ModelDefinition, params: &Parameters) -> Result<()> {
    if def.variant != params.variant() {
        return Err(Error::VariantMismatch {
            expected: def.variant,
            found: params.variant(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Convergence tolerance on the max-abs gradient in the transformed space.
    pub grad_tol: f64,
    /// Jittered restarts tried when a run fails to converge or ends with an
    /// inadmissible trend covariance.
    pub restarts: usize,
    pub seed: u64,
    /// Parameters held fixed, by name.
    #[serde(default)]
    pub fixed: Vec<(String, f64)>,
    pub standard_errors: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iter: 2000,
            grad_tol: 1e-6,
            restarts: 5,
            seed: 0x5eed,
            fixed: Vec::new(),
            standard_errors: true,
        }
    }
}

impl FitOptions {
    pub fn with_fixed_zero(mut self, names: &[&str]) -> Self {
        self.fixed
            .extend(names.iter().map(|n| (n.to_string(), 0.0)));
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: Parameters,
    /// `true` for estimated entries, `false` for entries held fixed.
    pub free: Vec<bool>,
    pub n: usize,
    pub loglik: f64,
    pub f_ml: f64,
    /// `(n - 1) F`.
    pub chi2: f64,
    /// One entry per parameter; `None` for fixed or undetermined entries.
    pub se: Vec<Option<f64>>,
    pub converged: bool,
    /// Trend covariance positive semidefinite and variances non-negative.
    pub admissible: bool,
    pub n_iter: usize,
    pub grad_norm: f64,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl FitResult {
    pub fn variant(&self) -> Variant {
        self.params.variant()
    }

    pub fn n_free(&self) -> usize {
        self.free.iter().filter(|&&f| f).count()
    }

    pub fn names(&self) -> &'static [&'static str] {
        self.params.names()
    }

    pub fn aic(&self) -> f64 {
        -2.0 * self.loglik + 2.0 * self.n_free() as f64
    }

    pub fn estimate(&self, name: &str) -> Option<f64> {
        self.params.get(name)
    }

    pub fn se_of(&self, name: &str) -> Option<f64> {
        let idx = self.names().iter().position(|n| *n == name)?;
        self.se[idx]
    }
}

struct FreeLayout {
    variant: Variant,
    base: Vec<f64>,
    free_idx: Vec<usize>,
}

impl FreeLayout {
    fn new(init: &Parameters, fixed: &[(String, f64)]) -> Result<Self> {
        let names = init.names();
        let mut base = init.values();
        let mut is_free = vec![true; names.len()];
        for (name, value) in fixed {
            let idx = names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::Config(format!("unknown parameter `{name}` to fix")))?;
            base[idx] = *value;
            is_free[idx] = false;
        }
        Ok(Self {
            variant: init.variant(),
            base,
            free_idx: (0..names.len()).filter(|&i| is_free[i]).collect(),
        })
    }

    fn transforms(&self) -> Vec<crate::model::Transform> {
        let all = transforms_for(self.variant);
        self.free_idx.iter().map(|&i| all[i]).collect()
    }

    fn to_free(&self, theta: &[f64]) -> Vec<f64> {
        self.transforms()
            .iter()
            .zip(&self.free_idx)
            .map(|(tr, &i)| tr.to_free(theta[i]))
            .collect()
    }

    fn to_params(&self, u: &[f64]) -> Vec<f64> {
        let mut theta = self.base.clone();
        for ((tr, &i), &ui) in self.transforms().iter().zip(&self.free_idx).zip(u) {
            theta[i] = tr.to_param(ui);
        }
        theta
    }

    fn free_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.base.len()];
        for &i in &self.free_idx {
            mask[i] = true;
        }
        mask
    }
}

/// Fits `def` to `sample` by maximum likelihood, starting at `init`.
///
/// Variances are optimised on the log scale and `rho` through `tanh`; all
/// other entries, including the trend covariances, are unconstrained. A
/// result with an indefinite trend covariance triggers jittered restarts and
/// is reported with `admissible = false` if none resolves it.
pub fn fit_model(
    def: &ModelDefinition,
    sample: &SampleMoments,
    init: &Parameters,
    opts: &FitOptions,
) -> Result<FitResult> {
    check_variant(def, init)?;
    if sample.dim() != def.n_observed() {
        return Err(Error::Dimension(format!(
            "sample has {} variables, model expects {}",
            sample.dim(),
            def.n_observed()
        )));
    }
    let prep = PreparedSample::new(sample)?;
    let layout = FreeLayout::new(init, &opts.fixed)?;
    let transforms = layout.transforms();
    let grid = def.grid;
    let variant = def.variant;

    let objective = |u: &[f64]| -> Option<(f64, Vec<f64>)> {
        let theta = layout.to_params(u);
        let params = Parameters::from_values(variant, &theta).ok()?;
        let (f, g) = discrepancy_and_gradient(&params, &grid, &prep).ok()?;
        if !f.is_finite() {
            return None;
        }
        let gu = layout
            .free_idx
            .iter()
            .zip(&transforms)
            .zip(u)
            .map(|((&i, tr), &ui)| g[i] * tr.derivative(ui))
            .collect();
        Some((f, gu))
    };

    let bfgs = BfgsOptions {
        max_iter: opts.max_iter,
        grad_tol: opts.grad_tol,
    };
    let u0 = layout.to_free(&layout.to_params(&layout.to_free(&layout.base)));
    let f_init = objective(&u0).map(|(f, _)| f);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut warnings = Vec::new();
    let mut best: Option<(BfgsOutcome, bool)> = None;
    let mut start = u0.clone();
    for attempt in 0..=opts.restarts {
        if attempt > 0 {
            // jitter around the best point so far (or the start)
            let centre = best.as_ref().map(|(o, _)| o.x.clone()).unwrap_or_else(|| u0.clone());
            start = centre
                .iter()
                .map(|&c| c + 0.1 * (1.0 + c.abs()) * (rng.random::<f64>() - 0.5) * 2.0)
                .collect();
        }
        let Some(outcome) = minimize(objective, &start, &bfgs) else {
            warnings.push(format!("start {attempt} is infeasible"));
            continue;
        };
        let theta = layout.to_params(&outcome.x);
        let admissible = Parameters::from_values(variant, &theta)
            .map(|p| p.validate().is_ok())
            .unwrap_or(false);
        let better = match &best {
            None => true,
            Some((b, b_adm)) => {
                let rank = |conv: bool, adm: bool| (conv as u8) * 2 + adm as u8;
                let (rn, rb) = (rank(outcome.converged, admissible), rank(b.converged, *b_adm));
                rn > rb || (rn == rb && outcome.f < b.f)
            }
        };
        let done = outcome.converged && admissible;
        if better {
            best = Some((outcome, admissible));
        }
        if done {
            break;
        }
    }

    let (outcome, admissible) = best.ok_or_else(|| {
        Error::Inadmissible("no feasible starting point: implied covariance not positive definite".into())
    })?;
    if !outcome.converged {
        warnings.push(format!(
            "optimizer did not converge (max |grad| = {:.3e})",
            outcome.grad_norm()
        ));
    }
    if !admissible {
        warnings.push("estimates are inadmissible (trend covariance not PSD or negative variance)".into());
    }
    if let Some(f0) = f_init {
        if outcome.f > f0 {
            warnings.push("final discrepancy exceeds the starting value".into());
        }
    }

    let theta = layout.to_params(&outcome.x);
    let params = Parameters::from_values(variant, &theta)?;
    let loglik = loglik_from_f(outcome.f, &prep);
    let mut result = FitResult {
        params,
        free: layout.free_mask(),
        n: sample.n,
        loglik,
        f_ml: outcome.f,
        chi2: (sample.n as f64 - 1.0) * outcome.f,
        se: vec![None; theta.len()],
        converged: outcome.converged,
        admissible,
        n_iter: outcome.iterations,
        grad_norm: outcome.grad_norm(),
        warnings,
    };
    if opts.standard_errors {
        let ses = standard_errors(&result, def, sample)?;
        result.se = ses.se;
        result.warnings.extend(ses.warnings);
    }
    Ok(result)
}

/// Starts from moment-based values and fits.
pub fn fit_from_moments(def: &ModelDefinition, sample: &SampleMoments, opts: &FitOptions) -> Result<FitResult> {
    let init = start_values(def, sample)?;
    fit_model(def, sample, &init, opts)
}

/// Names of the parameter layout for a definition.
pub fn parameter_names(def: &ModelDefinition) -> &'static [&'static str] {
    names_for(def.variant)
}

/// Model-implied moments at the fitted estimates (no admissibility check).
pub fn fitted_moments(result: &FitResult, def: &ModelDefinition) -> ImpliedMoments {
    moments_unchecked(&result.params, &def.grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BaselineParameterVector, ParameterVector};
    use crate::moments::implied_moments;
    use rand_distr::{Distribution, StandardNormal};

    fn saturated_sample() -> SampleMoments {
        let def = ModelDefinition::time_dependent();
        let m = implied_moments(&ParameterVector::reference(), &def).unwrap();
        SampleMoments::new(137, m.mean, m.cov).unwrap()
    }

    #[test]
    fn zero_at_saturated_point() {
        let def = ModelDefinition::time_dependent();
        let s = saturated_sample();
        let f = ml_discrepancy(&Parameters::TimeDependent(ParameterVector::reference()), &def, &s).unwrap();
        assert!(f.abs() < 1e-10, "{f}");
    }

    #[test]
    fn scalar_case() {
        // p = 1 with S = 2, Sigma = 1 -> F = 2 - ln 2 - 1
        let prep_sample = SampleMoments::new(10, DVector::from_element(1, 0.0), DMatrix::from_element(1, 1, 2.0))
            .unwrap();
        let prep = PreparedSample::new(&prep_sample).unwrap();
        let implied = ImpliedMoments {
            mean: DVector::from_element(1, 0.0),
            cov: DMatrix::from_element(1, 1, 1.0),
        };
        let f = evaluate(&implied, &prep).unwrap().f;
        assert!((f - (1.0 - 2f64.ln())).abs() < 1e-15);
    }

    /// Independent route: explicit LU determinants and an explicit inverse.
    fn brute_force_f(implied: &ImpliedMoments, s: &SampleMoments) -> f64 {
        let p = s.dim() as f64;
        let sigma_inv = implied.cov.clone().try_inverse().unwrap();
        let d = &s.mean - &implied.mean;
        implied.cov.determinant().ln() + (&s.cov * &sigma_inv).trace() - s.cov.determinant().ln() - p
            + (d.transpose() * &sigma_inv * &d)[(0, 0)]
    }

    fn random_psd(p: usize, seed: u64) -> (DVector<f64>, DMatrix<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::<f64>::from_fn(p, 2 * p, |_, _| StandardNormal.sample(&mut rng));
        let cov = (&a * a.transpose()) / (2 * p) as f64 * 10.0 + DMatrix::identity(p, p);
        let mean = DVector::from_fn(p, |_, _| 50.0 + 10.0 * Distribution::<f64>::sample(&StandardNormal, &mut rng));
        (mean, cov)
    }

    #[test]
    fn matches_brute_force_on_random_inputs() {
        let def = ModelDefinition::time_dependent();
        let mut p = ParameterVector::reference();
        p.rho = 0.4;
        p.lambda_sl = 0.9;
        p.theta_hr = 30.0;
        let (mean, cov) = random_psd(68, 7);
        let s = SampleMoments::new(500, mean, cov).unwrap();
        let params = Parameters::TimeDependent(p);
        let implied = moments_unchecked(&params, &def.grid);
        let f = ml_discrepancy(&params, &def, &s).unwrap();
        let oracle = brute_force_f(&implied, &s);
        assert!((f - oracle).abs() < 1e-8 * (1.0 + oracle.abs()), "{f} vs {oracle}");
        assert!(f >= 0.0);
    }

    #[test]
    fn singular_sample_reports_condition() {
        let def = ModelDefinition::time_dependent();
        let mut cov = DMatrix::identity(68, 68);
        cov[(0, 0)] = 0.0;
        let s = SampleMoments {
            n: 100,
            mean: DVector::zeros(68),
            cov,
        };
        let err = ml_discrepancy(&Parameters::TimeDependent(ParameterVector::reference()), &def, &s).unwrap_err();
        assert!(matches!(err, Error::Singular { what: "sample covariance", .. }));
    }

    #[test]
    fn sample_moments_validation() {
        assert!(SampleMoments::new(68, DVector::zeros(68), DMatrix::identity(68, 68)).is_err());
        assert!(SampleMoments::new(69, DVector::zeros(68), DMatrix::identity(68, 68)).is_ok());
        assert!(SampleMoments::new(100, DVector::zeros(3), DMatrix::identity(2, 2)).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let def = ModelDefinition::time_dependent();
        let (mean, cov) = random_psd(68, 11);
        let s = SampleMoments::new(300, mean, cov).unwrap();
        let prep = PreparedSample::new(&s).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let mut v = ParameterVector::reference().to_vec();
            for x in v.iter_mut() {
                *x *= 1.0 + 0.2 * (rng.random::<f64>() - 0.5);
            }
            let params = Parameters::TimeDependent(ParameterVector::from_slice(&v).unwrap());
            let (_, g) = discrepancy_and_gradient(&params, &def.grid, &prep).unwrap();
            for i in 0..20 {
                let h = 1e-5 * (1.0 + v[i].abs());
                let mut up = v.clone();
                let mut dn = v.clone();
                up[i] += h;
                dn[i] -= h;
                let fu = ml_discrepancy(&params.with_values(&up).unwrap(), &def, &s).unwrap();
                let fd = ml_discrepancy(&params.with_values(&dn).unwrap(), &def, &s).unwrap();
                let num = (fu - fd) / (2.0 * h);
                let rel = (num - g[i]).abs() / (g[i].abs().max(1e-3));
                assert!(rel < 1e-4, "param {i}: analytic {} numeric {num}", g[i]);
            }
        }
    }

    #[test]
    fn baseline_gradient_matches_finite_differences() {
        let def = ModelDefinition::baseline();
        let (mean, cov) = random_psd(68, 5);
        let s = SampleMoments::new(300, mean, cov).unwrap();
        let prep = PreparedSample::new(&s).unwrap();
        let b = BaselineParameterVector {
            lambda_sl: 0.8,
            mu_sl: 10.0,
            theta_hr: 8.0,
            theta_sl: 7.0,
            mu_ff: 48.0,
            phi_ff: 3.0,
        };
        let params = Parameters::TimeInvariantBaseline(b);
        let (_, g) = discrepancy_and_gradient(&params, &def.grid, &prep).unwrap();
        let v = params.values();
        for i in 0..6 {
            let h = 1e-5 * (1.0 + v[i].abs());
            let mut up = v.clone();
            let mut dn = v.clone();
            up[i] += h;
            dn[i] -= h;
            let fu = ml_discrepancy(&params.with_values(&up).unwrap(), &def, &s).unwrap();
            let fd = ml_discrepancy(&params.with_values(&dn).unwrap(), &def, &s).unwrap();
            let num = (fu - fd) / (2.0 * h);
            assert!((num - g[i]).abs() / g[i].abs().max(1e-3) < 1e-4, "param {i}");
        }
    }

    #[test]
    fn fit_on_population_moments_recovers_truth() {
        let def = ModelDefinition::time_dependent();
        let s = saturated_sample();
        let fit = fit_from_moments(&def, &s, &FitOptions::default()).unwrap();
        assert!(fit.converged, "{:?}", fit.warnings);
        assert!(fit.f_ml < 1e-8, "{}", fit.f_ml);
        let truth = ParameterVector::reference().to_vec();
        for (i, (e, t)) in fit.params.values().iter().zip(&truth).enumerate() {
            assert!((e - t).abs() < 1e-3 * (1.0 + t.abs()), "{}: {e} vs {t}", ParameterVector::NAMES[i]);
        }
    }

    #[test]
    fn fixed_parameters_stay_fixed() {
        let def = ModelDefinition::time_dependent();
        let s = saturated_sample();
        let opts = FitOptions {
            standard_errors: false,
            ..FitOptions::default()
        }
        .with_fixed_zero(&["phi_s2", "phi_iff_s2", "phi_s1_s2"]);
        let fit = fit_from_moments(&def, &s, &opts).unwrap();
        assert_eq!(fit.estimate("phi_s2"), Some(0.0));
        assert_eq!(fit.n_free(), 17);
        assert!(fit.f_ml > 0.0);
        let bad = FitOptions::default().with_fixed_zero(&["nope"]);
        assert!(fit_from_moments(&def, &s, &bad).is_err());
    }

    #[test]
    fn stacked_of_identical_is_identity() {
        let s = saturated_sample();
        let st = SampleMoments::stacked(&[s.clone(), s.clone(), s.clone()]).unwrap();
        assert!((&st.cov - &s.cov).abs().max() < 1e-9);
        assert!((&st.mean - &s.mean).abs().max() < 1e-12);
    }
}
