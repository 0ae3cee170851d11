//! Model structure: time grid, piecewise trend basis and the two parameter
//! layouts (time-dependent model and time-invariant baseline).
//!
//! Time indices in every public function are 1-based (`t = 1..=n_points`).
//! Observed variables are ordered as the heart-rate block `HR_1..HR_T`
//! followed by the stress-level block `SL_1..SL_T`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Equidistant measurement grid with a halftime restart and two trend knots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub n_points: usize,
    /// First time point of the second half.
    pub halftime_start: usize,
    /// Last time point of the initial plateau.
    pub knot1: usize,
    /// Last time point of the first slope segment.
    pub knot2: usize,
    pub interval_minutes: u32,
}

impl Default for TimeGrid {
    fn default() -> Self {
        Self {
            n_points: 34,
            halftime_start: 17,
            knot1: 7,
            knot2: 25,
            interval_minutes: 3,
        }
    }
}

impl TimeGrid {
    pub fn new(n_points: usize, halftime_start: usize, knot1: usize, knot2: usize) -> Result<Self> {
        let grid = Self {
            n_points,
            halftime_start,
            knot1,
            knot2,
            interval_minutes: 3,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = 1 <= self.knot1
            && self.knot1 < self.halftime_start
            && self.halftime_start <= self.knot2
            && self.knot2 < self.n_points;
        if !ok {
            return Err(Error::InvalidGrid(format!(
                "need 1 <= knot1 < halftime_start <= knot2 < n_points, got {}/{}/{}/{}",
                self.knot1, self.halftime_start, self.knot2, self.n_points
            )));
        }
        if self.interval_minutes == 0 {
            return Err(Error::InvalidGrid("interval_minutes must be positive".into()));
        }
        Ok(())
    }

    /// Observed dimension: two indicators per time point.
    pub fn n_observed(&self) -> usize {
        2 * self.n_points
    }

    pub fn is_second_half(&self, t: usize) -> bool {
        t >= self.halftime_start
    }

    /// Time points at which a half starts (`{1, halftime_start}`).
    pub fn is_half_start(&self, t: usize) -> bool {
        t == 1 || t == self.halftime_start
    }

    fn check(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.n_points {
            return Err(Error::IndexOutOfRange {
                index: t,
                n_points: self.n_points,
            });
        }
        Ok(())
    }
}

/// Loadings of `(I_FF, S1, S2)` on the latent level at time `t`.
pub fn trend_loadings(grid: &TimeGrid, t: usize) -> Result<[f64; 3]> {
    grid.check(t)?;
    Ok(trend_row(grid, t))
}

pub(crate) fn trend_row(grid: &TimeGrid, t: usize) -> [f64; 3] {
    let (k1, k2) = (grid.knot1, grid.knot2);
    let a1 = if t <= k1 {
        0.0
    } else if t <= k2 {
        (t - k1) as f64
    } else {
        (k2 - k1) as f64
    };
    let a2 = if t <= k2 { 0.0 } else { (t - k2) as f64 };
    [1.0, a1, a2]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    TimeDependent,
    TimeInvariantBaseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservedOrder {
    /// `HR_1..HR_T, SL_1..SL_T`
    HeartRateThenStress,
}

/// Everything needed to turn a parameter vector into implied moments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDefinition {
    #[serde(default)]
    pub grid: TimeGrid,
    pub variant: Variant,
    #[serde(default = "default_order")]
    pub observed_order: ObservedOrder,
}

fn default_order() -> ObservedOrder {
    ObservedOrder::HeartRateThenStress
}

impl ModelDefinition {
    pub fn time_dependent() -> Self {
        Self::new(TimeGrid::default(), Variant::TimeDependent)
    }

    pub fn baseline() -> Self {
        Self::new(TimeGrid::default(), Variant::TimeInvariantBaseline)
    }

    pub fn new(grid: TimeGrid, variant: Variant) -> Self {
        Self {
            grid,
            variant,
            observed_order: ObservedOrder::HeartRateThenStress,
        }
    }

    pub fn with_variant(&self, variant: Variant) -> Self {
        Self { variant, ..*self }
    }

    pub fn n_observed(&self) -> usize {
        self.grid.n_observed()
    }

    /// Unique first and second moments, `p(p+3)/2`.
    pub fn moment_count(&self) -> usize {
        let p = self.n_observed();
        p * (p + 3) / 2
    }

    pub fn degrees_of_freedom(&self) -> usize {
        self.moment_count() - parameter_count(self)
    }

    /// Column labels in observed order (`HR_1`, ..., `SL_T`).
    pub fn observed_labels(&self) -> Vec<String> {
        let t = self.grid.n_points;
        (1..=t)
            .map(|i| format!("HR_{i}"))
            .chain((1..=t).map(|i| format!("SL_{i}")))
            .collect()
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let def: ModelDefinition = serde_json::from_str(s)?;
        def.grid.validate()?;
        Ok(def)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn parameter_count(def: &ModelDefinition) -> usize {
    match def.variant {
        Variant::TimeDependent => ParameterVector::NAMES.len(),
        Variant::TimeInvariantBaseline => BaselineParameterVector::NAMES.len(),
    }
}

/// Block of the model a parameter belongs to (rows of the estimates table).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParameterGroup {
    IndicatorConstruct,
    MeasurementError,
    Trend,
    Autoregression,
}

/// Map from the unconstrained optimisation space to a parameter value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    Identity,
    /// Variances: `theta = exp(u)`.
    Log,
    /// Autoregressive coefficient: `theta = tanh(u)`.
    Tanh,
}

impl Transform {
    pub fn to_param(self, u: f64) -> f64 {
        match self {
            Transform::Identity => u,
            Transform::Log => u.exp(),
            Transform::Tanh => u.tanh(),
        }
    }

    pub fn to_free(self, theta: f64) -> f64 {
        match self {
            Transform::Identity => theta,
            Transform::Log => theta.max(1e-10).ln(),
            Transform::Tanh => theta.clamp(-1.0 + 1e-12, 1.0 - 1e-12).atanh(),
        }
    }

    /// `d theta / d u`
    pub fn derivative(self, u: f64) -> f64 {
        match self {
            Transform::Identity => 1.0,
            Transform::Log => u.exp(),
            Transform::Tanh => 1.0 - u.tanh().powi(2),
        }
    }
}

/// The 20 free parameters of the time-dependent model.
///
/// The heart-rate loading is fixed to one (marker indicator) and is not a
/// field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    pub lambda_sl: f64,
    pub mu_sl: f64,
    pub theta_hr_init: f64,
    pub theta_hr: f64,
    pub theta_sl: f64,
    pub rho_sl: f64,
    pub phi_i_sl_init: f64,
    pub phi_i_sl_2: f64,
    pub mu_i_ff: f64,
    pub mu_s1: f64,
    pub mu_s2: f64,
    pub phi_i_ff: f64,
    pub phi_s1: f64,
    pub phi_s2: f64,
    pub phi_iff_s1: f64,
    pub phi_iff_s2: f64,
    pub phi_s1_s2: f64,
    pub rho: f64,
    pub phi_r_init: f64,
    pub phi_r: f64,
}

impl ParameterVector {
    pub const NAMES: [&'static str; 20] = [
        "lambda_sl",
        "mu_sl",
        "theta_hr_init",
        "theta_hr",
        "theta_sl",
        "rho_sl",
        "phi_i_sl_init",
        "phi_i_sl_2",
        "mu_i_ff",
        "mu_s1",
        "mu_s2",
        "phi_i_ff",
        "phi_s1",
        "phi_s2",
        "phi_iff_s1",
        "phi_iff_s2",
        "phi_s1_s2",
        "rho",
        "phi_r_init",
        "phi_r",
    ];

    pub const GROUPS: [ParameterGroup; 20] = {
        use ParameterGroup::*;
        [
            IndicatorConstruct,
            IndicatorConstruct,
            MeasurementError,
            MeasurementError,
            MeasurementError,
            MeasurementError,
            MeasurementError,
            MeasurementError,
            Trend,
            Trend,
            Trend,
            Trend,
            Trend,
            Trend,
            Trend,
            Trend,
            Trend,
            Autoregression,
            Autoregression,
            Autoregression,
        ]
    };

    pub const TRANSFORMS: [Transform; 20] = {
        use Transform::*;
        [
            Identity, Identity, Log, Log, Log, Identity, Log, Log, Identity, Identity, Identity,
            Log, Log, Log, Identity, Identity, Identity, Tanh, Log, Log,
        ]
    };

    pub const VARIANCE_INDICES: [usize; 10] = [2, 3, 4, 6, 7, 11, 12, 13, 18, 19];

    /// Pooled estimates of the reference two-indicator panel; used as the
    /// ground truth for simulations throughout the crate.
    pub fn reference() -> Self {
        Self {
            lambda_sl: 1.236,
            mu_sl: -40.782,
            theta_hr_init: 24.900,
            theta_hr: 6.075,
            theta_sl: 86.329,
            rho_sl: 0.895,
            phi_i_sl_init: 75.735,
            phi_i_sl_2: 28.060,
            mu_i_ff: 89.046,
            mu_s1: -0.431,
            mu_s2: 0.633,
            phi_i_ff: 164.518,
            phi_s1: 0.121,
            phi_s2: 0.114,
            phi_iff_s1: -1.428,
            phi_iff_s2: 2.505,
            phi_s1_s2: -0.023,
            rho: 0.658,
            phi_r_init: 82.646,
            phi_r: 19.393,
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        vec![
            self.lambda_sl,
            self.mu_sl,
            self.theta_hr_init,
            self.theta_hr,
            self.theta_sl,
            self.rho_sl,
            self.phi_i_sl_init,
            self.phi_i_sl_2,
            self.mu_i_ff,
            self.mu_s1,
            self.mu_s2,
            self.phi_i_ff,
            self.phi_s1,
            self.phi_s2,
            self.phi_iff_s1,
            self.phi_iff_s2,
            self.phi_s1_s2,
            self.rho,
            self.phi_r_init,
            self.phi_r,
        ]
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != 20 {
            return Err(Error::Dimension(format!("expected 20 parameters, got {}", v.len())));
        }
        Ok(Self {
            lambda_sl: v[0],
            mu_sl: v[1],
            theta_hr_init: v[2],
            theta_hr: v[3],
            theta_sl: v[4],
            rho_sl: v[5],
            phi_i_sl_init: v[6],
            phi_i_sl_2: v[7],
            mu_i_ff: v[8],
            mu_s1: v[9],
            mu_s2: v[10],
            phi_i_ff: v[11],
            phi_s1: v[12],
            phi_s2: v[13],
            phi_iff_s1: v[14],
            phi_iff_s2: v[15],
            phi_s1_s2: v[16],
            rho: v[17],
            phi_r_init: v[18],
            phi_r: v[19],
        })
    }

    /// 3x3 covariance of `(I_FF, S1, S2)`.
    pub fn trend_covariance(&self) -> nalgebra::Matrix3<f64> {
        nalgebra::Matrix3::new(
            self.phi_i_ff,
            self.phi_iff_s1,
            self.phi_iff_s2,
            self.phi_iff_s1,
            self.phi_s1,
            self.phi_s1_s2,
            self.phi_iff_s2,
            self.phi_s1_s2,
            self.phi_s2,
        )
    }

    /// Checks finiteness, non-negative variances, `|rho| < 1` and a PSD trend
    /// covariance.
    pub fn validate(&self) -> Result<()> {
        let v = self.to_vec();
        if let Some(i) = v.iter().position(|x| !x.is_finite()) {
            return Err(Error::Inadmissible(format!("{} is not finite", Self::NAMES[i])));
        }
        for &i in &Self::VARIANCE_INDICES {
            if v[i] < 0.0 {
                return Err(Error::Inadmissible(format!(
                    "variance {} = {} is negative",
                    Self::NAMES[i],
                    v[i]
                )));
            }
        }
        if self.rho.abs() >= 1.0 {
            return Err(Error::Inadmissible(format!("|rho| = {} must be < 1", self.rho.abs())));
        }
        check_trend_psd(&self.trend_covariance())
    }
}

pub(crate) fn check_trend_psd(phi: &nalgebra::Matrix3<f64>) -> Result<()> {
    let min = phi.symmetric_eigenvalues().min();
    let tol = 1e-10 * phi.trace().abs().max(1.0);
    if min < -tol {
        return Err(Error::TrendCovarianceNotPsd { min_eigenvalue: min });
    }
    Ok(())
}

/// Six parameters of the time-invariant baseline: i.i.d. latent levels with
/// fixed loadings, intercepts and error variances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineParameterVector {
    pub lambda_sl: f64,
    pub mu_sl: f64,
    pub theta_hr: f64,
    pub theta_sl: f64,
    pub mu_ff: f64,
    pub phi_ff: f64,
}

impl BaselineParameterVector {
    pub const NAMES: [&'static str; 6] =
        ["lambda_sl", "mu_sl", "theta_hr", "theta_sl", "mu_ff", "phi_ff"];

    pub const GROUPS: [ParameterGroup; 6] = {
        use ParameterGroup::*;
        [
            IndicatorConstruct,
            IndicatorConstruct,
            MeasurementError,
            MeasurementError,
            Trend,
            Trend,
        ]
    };

    pub const TRANSFORMS: [Transform; 6] = {
        use Transform::*;
        [Identity, Identity, Log, Log, Identity, Log]
    };

    pub fn to_vec(&self) -> Vec<f64> {
        vec![
            self.lambda_sl,
            self.mu_sl,
            self.theta_hr,
            self.theta_sl,
            self.mu_ff,
            self.phi_ff,
        ]
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != 6 {
            return Err(Error::Dimension(format!("expected 6 parameters, got {}", v.len())));
        }
        Ok(Self {
            lambda_sl: v[0],
            mu_sl: v[1],
            theta_hr: v[2],
            theta_sl: v[3],
            mu_ff: v[4],
            phi_ff: v[5],
        })
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.to_vec();
        if let Some(i) = v.iter().position(|x| !x.is_finite()) {
            return Err(Error::Inadmissible(format!("{} is not finite", Self::NAMES[i])));
        }
        for i in [2, 3, 5] {
            if v[i] < 0.0 {
                return Err(Error::Inadmissible(format!(
                    "variance {} = {} is negative",
                    Self::NAMES[i],
                    v[i]
                )));
            }
        }
        Ok(())
    }
}

/// Parameters of either model variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", content = "values", rename_all = "snake_case")]
pub enum Parameters {
    TimeDependent(ParameterVector),
    TimeInvariantBaseline(BaselineParameterVector),
}

impl Parameters {
    pub fn variant(&self) -> Variant {
        match self {
            Parameters::TimeDependent(_) => Variant::TimeDependent,
            Parameters::TimeInvariantBaseline(_) => Variant::TimeInvariantBaseline,
        }
    }

    pub fn values(&self) -> Vec<f64> {
        match self {
            Parameters::TimeDependent(p) => p.to_vec(),
            Parameters::TimeInvariantBaseline(p) => p.to_vec(),
        }
    }

    pub fn names(&self) -> &'static [&'static str] {
        names_for(self.variant())
    }

    pub fn len(&self) -> usize {
        self.names().len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Same variant, new values.
    pub fn with_values(&self, v: &[f64]) -> Result<Parameters> {
        Parameters::from_values(self.variant(), v)
    }

    pub fn from_values(variant: Variant, v: &[f64]) -> Result<Parameters> {
        Ok(match variant {
            Variant::TimeDependent => Parameters::TimeDependent(ParameterVector::from_slice(v)?),
            Variant::TimeInvariantBaseline => {
                Parameters::TimeInvariantBaseline(BaselineParameterVector::from_slice(v)?)
            }
        })
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Parameters::TimeDependent(p) => p.validate(),
            Parameters::TimeInvariantBaseline(p) => p.validate(),
        }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        let idx = self.names().iter().position(|n| *n == name)?;
        Some(self.values()[idx])
    }
}

pub fn names_for(variant: Variant) -> &'static [&'static str] {
    match variant {
        Variant::TimeDependent => &ParameterVector::NAMES,
        Variant::TimeInvariantBaseline => &BaselineParameterVector::NAMES,
    }
}

pub fn groups_for(variant: Variant) -> &'static [ParameterGroup] {
    match variant {
        Variant::TimeDependent => &ParameterVector::GROUPS,
        Variant::TimeInvariantBaseline => &BaselineParameterVector::GROUPS,
    }
}

pub fn transforms_for(variant: Variant) -> &'static [Transform] {
    match variant {
        Variant::TimeDependent => &ParameterVector::TRANSFORMS,
        Variant::TimeInvariantBaseline => &BaselineParameterVector::TRANSFORMS,
    }
}
