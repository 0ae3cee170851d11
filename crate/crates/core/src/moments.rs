//! Model-implied mean vector and covariance matrix.
//!
//! The latent level is `FF_t = trend_t + R_t`, where the trend is
//! `I_FF + a1(t) S1 + a2(t) S2` and `R_t` is an AR(1) process whose
//! disturbance variance restarts at each half start. Indicators load on
//! `FF_t` with loadings `(1, lambda_sl)`; stress-level errors carry a
//! random intercept per half, the second-half intercept being
//! `rho_sl * I_SL,1 + I_SL,2`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::symmetrize;
use crate::model::{
    check_trend_psd, trend_row, BaselineParameterVector, ModelDefinition, ParameterVector,
    Parameters, TimeGrid, Variant,
};

#[derive(Debug, Clone, PartialEq)]
pub struct ImpliedMoments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// JSON form: the mean and the row-major lower triangle of the covariance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImpliedMomentsJson {
    pub dim: usize,
    pub labels: Vec<String>,
    pub mean: Vec<f64>,
    pub cov_lower: Vec<f64>,
}

impl ImpliedMoments {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn to_json(&self, def: &ModelDefinition) -> ImpliedMomentsJson {
        let p = self.dim();
        let mut cov_lower = Vec::with_capacity(p * (p + 1) / 2);
        for i in 0..p {
            for j in 0..=i {
                cov_lower.push(self.cov[(i, j)]);
            }
        }
        ImpliedMomentsJson {
            dim: p,
            labels: def.observed_labels(),
            mean: self.mean.iter().copied().collect(),
            cov_lower,
        }
    }

    pub fn from_json(j: &ImpliedMomentsJson) -> Result<Self> {
        let p = j.dim;
        if j.mean.len() != p || j.cov_lower.len() != p * (p + 1) / 2 {
            return Err(Error::Dimension("implied moments JSON has inconsistent lengths".into()));
        }
        let mut cov = DMatrix::zeros(p, p);
        let mut k = 0;
        for i in 0..p {
            for j2 in 0..=i {
                cov[(i, j2)] = j.cov_lower[k];
                cov[(j2, i)] = j.cov_lower[k];
                k += 1;
            }
        }
        Ok(Self {
            mean: DVector::from_vec(j.mean.clone()),
            cov,
        })
    }
}

fn check_ar_inputs(rho: f64, phi_r_init: f64, phi_r: f64) -> Result<()> {
    if !(rho.is_finite() && phi_r_init.is_finite() && phi_r.is_finite()) {
        return Err(Error::Inadmissible("autoregressive inputs must be finite".into()));
    }
    if rho.abs() >= 1.0 {
        return Err(Error::Inadmissible(format!("|rho| = {} must be < 1", rho.abs())));
    }
    if phi_r_init < 0.0 || phi_r < 0.0 {
        return Err(Error::Inadmissible("autoregressive variances must be >= 0".into()));
    }
    Ok(())
}

/// Unconditional variances `V(R_t)`, `t = 1..=n_points`.
///
/// `V(R_1) = phi_r_init` and `V(R_t) = rho^2 V(R_{t-1}) + d_t`, where the
/// disturbance variance `d_t` is `phi_r_init` at the second-half start and
/// `phi_r` otherwise.
pub fn ar_variances(rho: f64, phi_r_init: f64, phi_r: f64, grid: &TimeGrid) -> Result<Vec<f64>> {
    check_ar_inputs(rho, phi_r_init, phi_r)?;
    Ok(ar_variances_raw(rho, phi_r_init, phi_r, grid))
}

fn ar_variances_raw(rho: f64, phi_r_init: f64, phi_r: f64, grid: &TimeGrid) -> Vec<f64> {
    let mut v = Vec::with_capacity(grid.n_points);
    v.push(phi_r_init);
    for t in 2..=grid.n_points {
        let d = if t == grid.halftime_start { phi_r_init } else { phi_r };
        let prev = v[t - 2];
        v.push(rho * rho * prev + d);
    }
    v
}

/// `Cov(R_t, R_s) = rho^{|t-s|} V(R_min(t,s))`.
pub fn ar_covariance(rho: f64, phi_r_init: f64, phi_r: f64, grid: &TimeGrid) -> Result<DMatrix<f64>> {
    check_ar_inputs(rho, phi_r_init, phi_r)?;
    Ok(ar_covariance_raw(rho, phi_r_init, phi_r, grid))
}

fn ar_covariance_raw(rho: f64, phi_r_init: f64, phi_r: f64, grid: &TimeGrid) -> DMatrix<f64> {
    let v = ar_variances_raw(rho, phi_r_init, phi_r, grid);
    lagged_from_variances(rho, &v)
}

fn lagged_from_variances(rho: f64, v: &[f64]) -> DMatrix<f64> {
    let n = v.len();
    DMatrix::from_fn(n, n, |i, j| {
        let (lo, hi) = if i < j { (i, j) } else { (j, i) };
        rho.powi((hi - lo) as i32) * v[lo]
    })
}

/// Trend design matrix `A` (n_points x 3), row `t` = `(1, a1(t), a2(t))`.
pub fn trend_design(grid: &TimeGrid) -> DMatrix<f64> {
    DMatrix::from_fn(grid.n_points, 3, |i, k| trend_row(grid, i + 1)[k])
}

/// `Cov(FF_t, FF_s) = A Phi A' + Cov(R)`; rejects a non-PSD trend covariance.
pub fn latent_covariance(params: &ParameterVector, grid: &TimeGrid) -> Result<DMatrix<f64>> {
    check_trend_psd(&params.trend_covariance())?;
    check_ar_inputs(params.rho, params.phi_r_init, params.phi_r)?;
    Ok(latent_covariance_raw(params, grid))
}

fn latent_covariance_raw(params: &ParameterVector, grid: &TimeGrid) -> DMatrix<f64> {
    let a = trend_design(grid);
    let phi = params.trend_covariance();
    let phi = DMatrix::from_fn(3, 3, |i, j| phi[(i, j)]);
    let mut c = &a * phi * a.transpose() + ar_covariance_raw(params.rho, params.phi_r_init, params.phi_r, grid);
    symmetrize(&mut c);
    c
}

/// Per-time-point latent variance `V(FF_t)` and error variances of the
/// two indicators.
pub(crate) struct VarianceComponents {
    pub latent: Vec<f64>,
    pub error_hr: Vec<f64>,
    pub error_sl: Vec<f64>,
}

pub(crate) fn variance_components(params: &Parameters, grid: &TimeGrid) -> VarianceComponents {
    let n = grid.n_points;
    match params {
        Parameters::TimeDependent(p) => {
            let l = latent_covariance_raw(p, grid);
            let th = error_covariance(p, grid);
            VarianceComponents {
                latent: (0..n).map(|i| l[(i, i)]).collect(),
                error_hr: (0..n).map(|i| th[(i, i)]).collect(),
                error_sl: (0..n).map(|i| th[(n + i, n + i)]).collect(),
            }
        }
        Parameters::TimeInvariantBaseline(p) => VarianceComponents {
            latent: vec![p.phi_ff; n],
            error_hr: vec![p.theta_hr; n],
            error_sl: vec![p.theta_sl; n],
        },
    }
}

/// `E(FF_t) = mu_I_FF + a1(t) mu_S1 + a2(t) mu_S2`.
pub fn expected_fever(params: &ParameterVector, grid: &TimeGrid) -> DVector<f64> {
    DVector::from_fn(grid.n_points, |i, _| {
        let [_, a1, a2] = trend_row(grid, i + 1);
        params.mu_i_ff + a1 * params.mu_s1 + a2 * params.mu_s2
    })
}

/// Measurement-error covariance `Theta` in observed order.
pub fn error_covariance(params: &ParameterVector, grid: &TimeGrid) -> DMatrix<f64> {
    let n = grid.n_points;
    let mut theta = DMatrix::zeros(2 * n, 2 * n);
    for t in 1..=n {
        theta[(t - 1, t - 1)] = if grid.is_half_start(t) {
            params.theta_hr_init
        } else {
            params.theta_hr
        };
    }
    let first = params.phi_i_sl_init;
    let second = params.rho_sl * params.rho_sl * params.phi_i_sl_init + params.phi_i_sl_2;
    let cross = params.rho_sl * params.phi_i_sl_init;
    for t in 1..=n {
        for s in 1..=n {
            let v = match (grid.is_second_half(t), grid.is_second_half(s)) {
                (false, false) => first,
                (true, true) => second,
                _ => cross,
            };
            theta[(n + t - 1, n + s - 1)] = v;
        }
        theta[(n + t - 1, n + t - 1)] += params.theta_sl;
    }
    theta
}

/// Places a latent (n x n) matrix into observed space through the loadings
/// `(1, lambda)`: blocks `[M, lambda M; lambda M, lambda^2 M]`.
fn lift(m: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    let n = m.nrows();
    let mut out = DMatrix::zeros(2 * n, 2 * n);
    out.view_mut((0, 0), (n, n)).copy_from(m);
    out.view_mut((0, n), (n, n)).copy_from(&(m * lambda));
    out.view_mut((n, 0), (n, n)).copy_from(&(m * lambda));
    out.view_mut((n, n), (n, n)).copy_from(&(m * (lambda * lambda)));
    out
}

/// Derivative of `lift` with respect to `lambda`.
fn lift_dlambda(m: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    let n = m.nrows();
    let mut out = DMatrix::zeros(2 * n, 2 * n);
    out.view_mut((0, n), (n, n)).copy_from(m);
    out.view_mut((n, 0), (n, n)).copy_from(m);
    out.view_mut((n, n), (n, n)).copy_from(&(m * (2.0 * lambda)));
    out
}

fn full_moments_raw(params: &ParameterVector, grid: &TimeGrid) -> ImpliedMoments {
    let n = grid.n_points;
    let ff_mean = expected_fever(params, grid);
    let mean = DVector::from_fn(2 * n, |i, _| {
        if i < n {
            ff_mean[i]
        } else {
            params.mu_sl + params.lambda_sl * ff_mean[i - n]
        }
    });
    let mut cov = lift(&latent_covariance_raw(params, grid), params.lambda_sl)
        + error_covariance(params, grid);
    symmetrize(&mut cov);
    ImpliedMoments { mean, cov }
}

fn baseline_moments_raw(params: &BaselineParameterVector, grid: &TimeGrid) -> ImpliedMoments {
    let n = grid.n_points;
    let mean = DVector::from_fn(2 * n, |i, _| {
        if i < n {
            params.mu_ff
        } else {
            params.mu_sl + params.lambda_sl * params.mu_ff
        }
    });
    let mut cov = lift(&(DMatrix::identity(n, n) * params.phi_ff), params.lambda_sl);
    for i in 0..n {
        cov[(i, i)] += params.theta_hr;
        cov[(n + i, n + i)] += params.theta_sl;
    }
    ImpliedMoments { mean, cov }
}

/// Implied moments of the time-dependent model. Validates admissibility.
pub fn implied_moments(params: &ParameterVector, def: &ModelDefinition) -> Result<ImpliedMoments> {
    if def.variant != Variant::TimeDependent {
        return Err(Error::VariantMismatch {
            expected: def.variant,
            found: Variant::TimeDependent,
        });
    }
    params.validate()?;
    Ok(full_moments_raw(params, &def.grid))
}

/// Implied moments of the time-invariant baseline: i.i.d. latent levels
/// `FF_t ~ (mu_ff, phi_ff)`, no cross-time structure.
pub fn baseline_implied_moments(
    params: &BaselineParameterVector,
    def: &ModelDefinition,
) -> Result<ImpliedMoments> {
    if def.variant != Variant::TimeInvariantBaseline {
        return Err(Error::VariantMismatch {
            expected: def.variant,
            found: Variant::TimeInvariantBaseline,
        });
    }
    params.validate()?;
    Ok(baseline_moments_raw(params, &def.grid))
}

/// Dispatches on the parameter variant.
pub fn moments_for(params: &Parameters, def: &ModelDefinition) -> Result<ImpliedMoments> {
    match params {
        Parameters::TimeDependent(p) => implied_moments(p, def),
        Parameters::TimeInvariantBaseline(p) => baseline_implied_moments(p, def),
    }
}

/// Moments without admissibility checks; used inside the optimiser, where
/// only positive definiteness of the result matters.
pub(crate) fn moments_unchecked(params: &Parameters, grid: &TimeGrid) -> ImpliedMoments {
    match params {
        Parameters::TimeDependent(p) => full_moments_raw(p, grid),
        Parameters::TimeInvariantBaseline(p) => baseline_moments_raw(p, grid),
    }
}

/// Partial derivatives of the implied mean and covariance, one entry per
/// free parameter.
pub(crate) struct MomentJacobian {
    pub mean: Vec<DVector<f64>>,
    pub cov: Vec<DMatrix<f64>>,
}

pub(crate) fn moment_jacobian(params: &Parameters, grid: &TimeGrid) -> MomentJacobian {
    match params {
        Parameters::TimeDependent(p) => full_jacobian(p, grid),
        Parameters::TimeInvariantBaseline(p) => baseline_jacobian(p, grid),
    }
}

fn full_jacobian(p: &ParameterVector, grid: &TimeGrid) -> MomentJacobian {
    let n = grid.n_points;
    let dim = 2 * n;
    let lambda = p.lambda_sl;
    let a = trend_design(grid);
    let ff_mean = expected_fever(p, grid);
    let ff_cov = latent_covariance_raw(p, grid);
    let zero_mean = || DVector::<f64>::zeros(dim);
    let zero_cov = || DMatrix::<f64>::zeros(dim, dim);

    let mut mean = Vec::with_capacity(20);
    let mut cov = Vec::with_capacity(20);

    // lambda_sl
    let mut dm = zero_mean();
    for i in 0..n {
        dm[n + i] = ff_mean[i];
    }
    mean.push(dm);
    cov.push(lift_dlambda(&ff_cov, lambda));

    // mu_sl
    let mut dm = zero_mean();
    for i in 0..n {
        dm[n + i] = 1.0;
    }
    mean.push(dm);
    cov.push(zero_cov());

    // theta_hr_init, theta_hr
    for init in [true, false] {
        let mut dc = zero_cov();
        for t in 1..=n {
            if grid.is_half_start(t) == init {
                dc[(t - 1, t - 1)] = 1.0;
            }
        }
        mean.push(zero_mean());
        cov.push(dc);
    }

    // theta_sl
    let mut dc = zero_cov();
    for i in 0..n {
        dc[(n + i, n + i)] = 1.0;
    }
    mean.push(zero_mean());
    cov.push(dc);

    // rho_sl, phi_i_sl_init, phi_i_sl_2: (first-first, second-second, cross)
    let sl_block = |ff: f64, ss: f64, cr: f64| {
        let mut dc = zero_cov();
        for t in 1..=n {
            for s in 1..=n {
                dc[(n + t - 1, n + s - 1)] = match (grid.is_second_half(t), grid.is_second_half(s)) {
                    (false, false) => ff,
                    (true, true) => ss,
                    _ => cr,
                };
            }
        }
        dc
    };
    mean.push(zero_mean());
    cov.push(sl_block(0.0, 2.0 * p.rho_sl * p.phi_i_sl_init, p.phi_i_sl_init));
    mean.push(zero_mean());
    cov.push(sl_block(1.0, p.rho_sl * p.rho_sl, p.rho_sl));
    mean.push(zero_mean());
    cov.push(sl_block(0.0, 1.0, 0.0));

    // mu_i_ff, mu_s1, mu_s2
    for k in 0..3 {
        let dm = DVector::from_fn(dim, |i, _| if i < n { a[(i, k)] } else { lambda * a[(i - n, k)] });
        mean.push(dm);
        cov.push(zero_cov());
    }

    // trend (co)variances
    let col = |k: usize| a.column(k).into_owned();
    let outer = |j: usize, k: usize| -> DMatrix<f64> {
        let (cj, ck) = (col(j), col(k));
        if j == k {
            &cj * cj.transpose()
        } else {
            &cj * ck.transpose() + &ck * cj.transpose()
        }
    };
    for (j, k) in [(0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)] {
        mean.push(zero_mean());
        cov.push(lift(&outer(j, k), lambda));
    }

    // rho, phi_r_init, phi_r
    let (d_rho, d_init, d_dist) = ar_covariance_derivatives(p.rho, p.phi_r_init, p.phi_r, grid);
    for d in [d_rho, d_init, d_dist] {
        mean.push(zero_mean());
        cov.push(lift(&d, lambda));
    }

    MomentJacobian { mean, cov }
}

/// Derivatives of the AR covariance with respect to `rho`, `phi_r_init`
/// and `phi_r`.
fn ar_covariance_derivatives(
    rho: f64,
    phi_r_init: f64,
    phi_r: f64,
    grid: &TimeGrid,
) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let n = grid.n_points;
    let v = ar_variances_raw(rho, phi_r_init, phi_r, grid);
    let mut dv_rho = vec![0.0; n];
    let mut dv_init = vec![0.0; n];
    let mut dv_dist = vec![0.0; n];
    dv_init[0] = 1.0;
    for t in 2..=n {
        let i = t - 1;
        dv_rho[i] = 2.0 * rho * v[i - 1] + rho * rho * dv_rho[i - 1];
        let restart = t == grid.halftime_start;
        dv_init[i] = rho * rho * dv_init[i - 1] + if restart { 1.0 } else { 0.0 };
        dv_dist[i] = rho * rho * dv_dist[i - 1] + if restart { 0.0 } else { 1.0 };
    }
    let d_rho = DMatrix::from_fn(n, n, |i, j| {
        let (lo, hi) = if i < j { (i, j) } else { (j, i) };
        let k = (hi - lo) as i32;
        let lag_term = if k == 0 {
            0.0
        } else {
            k as f64 * rho.powi(k - 1) * v[lo]
        };
        lag_term + rho.powi(k) * dv_rho[lo]
    });
    (
        d_rho,
        lagged_from_variances(rho, &dv_init),
        lagged_from_variances(rho, &dv_dist),
    )
}

fn baseline_jacobian(p: &BaselineParameterVector, grid: &TimeGrid) -> MomentJacobian {
    let n = grid.n_points;
    let dim = 2 * n;
    let eye = DMatrix::<f64>::identity(n, n);
    let zero_mean = || DVector::<f64>::zeros(dim);
    let zero_cov = || DMatrix::<f64>::zeros(dim, dim);
    let block_mean = |hr: f64, sl: f64| DVector::from_fn(dim, |i, _| if i < n { hr } else { sl });
    let diag = |hr: f64, sl: f64| {
        DMatrix::from_fn(dim, dim, |i, j| {
            if i != j {
                0.0
            } else if i < n {
                hr
            } else {
                sl
            }
        })
    };
    let mean = vec![
        block_mean(0.0, p.mu_ff),
        block_mean(0.0, 1.0),
        zero_mean(),
        zero_mean(),
        block_mean(1.0, p.lambda_sl),
        zero_mean(),
    ];
    let cov = vec![
        lift_dlambda(&(&eye * p.phi_ff), p.lambda_sl),
        zero_cov(),
        diag(1.0, 0.0),
        diag(0.0, 1.0),
        zero_cov(),
        lift(&eye, p.lambda_sl),
    ];
    MomentJacobian { mean, cov }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::min_eigenvalue;
    use proptest::prelude::*;

    fn grid() -> TimeGrid {
        TimeGrid::default()
    }

    #[test]
    fn ar_variance_recursion_matches_closed_form_in_first_half() {
        let p = ParameterVector::reference();
        let v = ar_variances(p.rho, p.phi_r_init, p.phi_r, &grid()).unwrap();
        assert_eq!(v[0], p.phi_r_init);
        let mut max_diff: f64 = 0.0;
        for t in 2..=16usize {
            let closed = p.phi_r_init * p.rho.powi(2 * (t as i32 - 1))
                + p.phi_r * (0..=t - 2).map(|j| p.rho.powi(2 * j as i32)).sum::<f64>();
            max_diff = max_diff.max((closed - v[t - 1]).abs());
        }
        assert!(max_diff < 1e-10, "max diff {max_diff}");
    }

    #[test]
    fn ar_variance_without_carry_over() {
        let v = ar_variances(0.0, 5.0, 2.0, &grid()).unwrap();
        for (i, x) in v.iter().enumerate() {
            let t = i + 1;
            let want = if t == 1 || t == 17 { 5.0 } else { 2.0 };
            assert_eq!(*x, want, "t={t}");
        }
        let c = ar_covariance(0.0, 5.0, 2.0, &grid()).unwrap();
        assert_eq!(c, DMatrix::from_diagonal(&DVector::from_vec(v)));
    }

    #[test]
    fn ar_covariance_diagonal_and_lags() {
        let p = ParameterVector::reference();
        let v = ar_variances(p.rho, p.phi_r_init, p.phi_r, &grid()).unwrap();
        let c = ar_covariance(p.rho, p.phi_r_init, p.phi_r, &grid()).unwrap();
        for i in 0..34 {
            assert_eq!(c[(i, i)], v[i]);
        }
        // dependence continues across halftime
        assert!((c[(15, 16)] - p.rho * v[15]).abs() < 1e-12);
        assert!((c[(20, 10)] - p.rho.powi(10) * v[10]).abs() < 1e-12);
    }

    #[test]
    fn ar_rejects_bad_inputs() {
        assert!(ar_variances(1.0, 1.0, 1.0, &grid()).is_err());
        assert!(ar_variances(0.5, f64::NAN, 1.0, &grid()).is_err());
        assert!(ar_covariance(0.5, -1.0, 1.0, &grid()).is_err());
    }

    #[test]
    fn latent_covariance_examples() {
        let p = ParameterVector::reference();
        let c = latent_covariance(&p, &grid()).unwrap();
        assert!((c[(0, 0)] - 247.164).abs() < 1e-9);

        let mut q = p;
        q.phi_i_ff = 0.0;
        q.phi_s1 = 0.0;
        q.phi_s2 = 0.0;
        q.phi_iff_s1 = 0.0;
        q.phi_iff_s2 = 0.0;
        q.phi_s1_s2 = 0.0;
        let c = latent_covariance(&q, &grid()).unwrap();
        let ar = ar_covariance(q.rho, q.phi_r_init, q.phi_r, &grid()).unwrap();
        assert_eq!(c, ar);

        let mut bad = p;
        bad.phi_iff_s1 = 100.0;
        assert!(matches!(
            latent_covariance(&bad, &grid()),
            Err(Error::TrendCovarianceNotPsd { .. })
        ));
    }

    #[test]
    fn expected_fever_examples() {
        let p = ParameterVector::reference();
        let e = expected_fever(&p, &grid());
        assert!((e[0] - 89.046).abs() < 1e-12);
        assert!((e[24] - 81.288).abs() < 1e-9);
        let mut flat = p;
        flat.mu_s1 = 0.0;
        flat.mu_s2 = 0.0;
        assert!(expected_fever(&flat, &grid()).iter().all(|&x| x == 89.046));
    }

    #[test]
    fn error_covariance_examples() {
        let p = ParameterVector::reference();
        let th = error_covariance(&p, &grid());
        assert!((th[(34, 34)] - 162.064).abs() < 1e-9);
        assert!((th[(34 + 15, 34 + 15)] - 162.064).abs() < 1e-9);
        let second = 86.329 + 0.895f64.powi(2) * 75.735 + 28.060;
        assert!((th[(34 + 16, 34 + 16)] - second).abs() < 1e-9);
        assert!((second - 175.05).abs() < 0.01);
        assert_eq!(th[(0, 0)], 24.9);
        assert_eq!(th[(16, 16)], 24.9);
        assert_eq!(th[(1, 1)], 6.075);
        // within-half constant, cross-half exact
        assert_eq!(th[(34, 40)], th[(35, 34)]);
        assert_eq!(th[(34 + 2, 34 + 20)], p.rho_sl * p.phi_i_sl_init);
        assert_eq!(th[(34 + 20, 34 + 30)], th[(34 + 17, 34 + 18)]);
        // no HR-SL error covariance
        assert!(th.view((0, 34), (34, 34)).iter().all(|&x| x == 0.0));

        let mut q = p;
        q.rho_sl = 0.0;
        q.phi_i_sl_init = 0.0;
        q.phi_i_sl_2 = 0.0;
        let th = error_covariance(&q, &grid());
        let sl = th.view((34, 34), (34, 34)).into_owned();
        assert_eq!(sl, DMatrix::identity(34, 34) * q.theta_sl);
    }

    #[test]
    fn kickoff_stress_mean() {
        let def = ModelDefinition::time_dependent();
        let m = implied_moments(&ParameterVector::reference(), &def).unwrap();
        assert!((m.mean[34] - 69.3).abs() < 0.1, "{}", m.mean[34]);
        assert!((m.mean[0] - 89.046).abs() < 1e-12);
    }

    #[test]
    fn only_error_variances_gives_diagonal() {
        let def = ModelDefinition::time_dependent();
        let mut p = ParameterVector::reference();
        for i in ParameterVector::VARIANCE_INDICES {
            let mut v = p.to_vec();
            if i != 3 && i != 4 && i != 2 {
                v[i] = 0.0;
            }
            p = ParameterVector::from_slice(&v).unwrap();
        }
        p.phi_iff_s1 = 0.0;
        p.phi_iff_s2 = 0.0;
        p.phi_s1_s2 = 0.0;
        p.lambda_sl = 3.7;
        let m = implied_moments(&p, &def).unwrap();
        for i in 0..68 {
            for j in 0..68 {
                if i != j {
                    assert_eq!(m.cov[(i, j)], 0.0);
                }
            }
            assert!(m.cov[(i, i)] > 0.0);
        }
    }

    #[test]
    fn baseline_examples() {
        let def = ModelDefinition::baseline();
        let p = BaselineParameterVector {
            lambda_sl: 1.2,
            mu_sl: -30.0,
            theta_hr: 10.0,
            theta_sl: 80.0,
            mu_ff: 88.0,
            phi_ff: 0.0,
        };
        let m = baseline_implied_moments(&p, &def).unwrap();
        assert!(m.mean.rows(0, 34).iter().all(|&x| x == 88.0));
        assert_eq!(m.cov, DMatrix::from_diagonal(&m.cov.diagonal()));
        assert!(implied_moments(&ParameterVector::reference(), &def).is_err());
    }

    #[test]
    fn full_reduces_to_baseline() {
        let grid = grid();
        let full_def = ModelDefinition::time_dependent();
        let base_def = ModelDefinition::baseline();
        let mut p = ParameterVector::reference();
        p.rho = 0.0;
        p.rho_sl = 0.0;
        p.phi_i_sl_init = 0.0;
        p.phi_i_sl_2 = 0.0;
        p.phi_i_ff = 0.0;
        p.phi_s1 = 0.0;
        p.phi_s2 = 0.0;
        p.phi_iff_s1 = 0.0;
        p.phi_iff_s2 = 0.0;
        p.phi_s1_s2 = 0.0;
        p.phi_r_init = 0.0;
        p.phi_r = 0.0;
        p.theta_hr_init = p.theta_hr;
        p.mu_s1 = 0.0;
        p.mu_s2 = 0.0;
        let b = BaselineParameterVector {
            lambda_sl: p.lambda_sl,
            mu_sl: p.mu_sl,
            theta_hr: p.theta_hr,
            theta_sl: p.theta_sl,
            mu_ff: p.mu_i_ff,
            phi_ff: 0.0,
        };
        let mf = implied_moments(&p, &full_def).unwrap();
        let mb = baseline_implied_moments(&b, &base_def).unwrap();
        assert_eq!(mf.cov, mb.cov);
        assert_eq!(mf.mean, mb.mean);
        let _ = grid;
    }

    #[test]
    fn json_export_roundtrip() {
        let def = ModelDefinition::time_dependent();
        let m = implied_moments(&ParameterVector::reference(), &def).unwrap();
        let j = m.to_json(&def);
        assert_eq!(j.cov_lower.len(), 68 * 69 / 2);
        let text = serde_json::to_string(&j).unwrap();
        let back: ImpliedMomentsJson = serde_json::from_str(&text).unwrap();
        assert_eq!(ImpliedMoments::from_json(&back).unwrap(), m);
    }

    fn fd_check(params: Parameters, grid: &TimeGrid) {
        let jac = moment_jacobian(&params, grid);
        let base = params.values();
        for i in 0..base.len() {
            let h = 1e-6 * (1.0 + base[i].abs());
            let mut up = base.clone();
            let mut dn = base.clone();
            up[i] += h;
            dn[i] -= h;
            let mu = moments_unchecked(&params.with_values(&up).unwrap(), grid);
            let md = moments_unchecked(&params.with_values(&dn).unwrap(), grid);
            let dcov = (mu.cov - md.cov) / (2.0 * h);
            let dmean = (mu.mean - md.mean) / (2.0 * h);
            let ec = (&dcov - &jac.cov[i]).abs().max();
            let em = (&dmean - &jac.mean[i]).abs().max();
            let scale = 1.0 + dcov.abs().max() + dmean.abs().max();
            assert!(ec / scale < 1e-6 && em / scale < 1e-6, "param {i}: cov err {ec}, mean err {em}");
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let g = grid();
        fd_check(Parameters::TimeDependent(ParameterVector::reference()), &g);
        fd_check(
            Parameters::TimeInvariantBaseline(BaselineParameterVector {
                lambda_sl: 1.1,
                mu_sl: -20.0,
                theta_hr: 50.0,
                theta_sl: 150.0,
                mu_ff: 85.0,
                phi_ff: 120.0,
            }),
            &g,
        );
    }

    fn admissible() -> impl Strategy<Value = ParameterVector> {
        (
            prop::array::uniform8(0.01f64..50.0),
            prop::array::uniform3(-0.9f64..0.9),
            (0.5f64..2.0, -50.0f64..50.0, 60.0f64..100.0, -1.0f64..1.0, -1.0f64..1.0),
            (-0.95f64..0.95, -1.5f64..1.5),
        )
            .prop_map(|(vars, corr, (lam, mu_sl, mu_i, s1, s2), (rho, rho_sl))| {
                // trend covariance from a random Cholesky-like correlation
                let sd = [vars[5].sqrt() * 3.0, (vars[6] / 100.0).sqrt(), (vars[7] / 100.0).sqrt()];
                let (c01, c02, c12) = (corr[0], corr[1] * (1.0 - corr[0].abs()), corr[2] * 0.3);
                ParameterVector {
                    lambda_sl: lam,
                    mu_sl,
                    theta_hr_init: vars[0],
                    theta_hr: vars[1],
                    theta_sl: vars[2],
                    rho_sl,
                    phi_i_sl_init: vars[3],
                    phi_i_sl_2: vars[4],
                    mu_i_ff: mu_i,
                    mu_s1: s1,
                    mu_s2: s2,
                    phi_i_ff: sd[0] * sd[0],
                    phi_s1: sd[1] * sd[1],
                    phi_s2: sd[2] * sd[2],
                    phi_iff_s1: c01 * sd[0] * sd[1],
                    phi_iff_s2: c02 * sd[0] * sd[2],
                    phi_s1_s2: c12 * sd[1] * sd[2],
                    rho,
                    phi_r_init: vars[3] + 1.0,
                    phi_r: vars[4] + 0.5,
                }
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn implied_cov_is_symmetric_psd(p in admissible()) {
            prop_assume!(p.validate().is_ok());
            let def = ModelDefinition::time_dependent();
            let m = implied_moments(&p, &def).unwrap();
            let asym = (&m.cov - m.cov.transpose()).abs().max();
            prop_assert!(asym == 0.0);
            let floor = -1e-8 * m.cov.trace();
            prop_assert!(min_eigenvalue(&m.cov) >= floor);
            prop_assert!(m.cov.diagonal().iter().all(|&d| d > 0.0));
        }
    }
}
