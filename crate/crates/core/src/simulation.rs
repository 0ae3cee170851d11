//! Synthetic fan panels drawn from the time-dependent model.
//!
//! Every fan has its own pair of ChaCha8 streams: one for the latent and
//! measurement draws, one for the auxiliary activity covariates and the
//! missingness mask. Switching missingness on or off therefore leaves the
//! heart-rate and stress values unchanged.

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::PanelDataset;
use crate::error::{Error, Result};
use crate::model::{trend_row, ParameterVector, TimeGrid};
use crate::moments::{expected_fever, latent_covariance};

/// Stress-level entries masked with probability
/// `1 / (1 + exp(-(a + strength * motion_t)))`, `a` calibrated so that the
/// expected masked share equals `fraction`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Missingness {
    pub fraction: f64,
    pub strength: f64,
}

impl Missingness {
    pub fn mar(fraction: f64) -> Self {
        Self {
            fraction,
            strength: 1.0,
        }
    }
}

/// Second-half disruption of the latent intercept: the second-half
/// intercept is `mu + mean_shift + r (I - mu) + sqrt(1 - r^2) * fresh`, with
/// `r = intercept_correlation` and `fresh` an independent draw of the same
/// variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BreakInjection {
    pub mean_shift: f64,
    pub intercept_correlation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    /// Defaults to the reference parameter set.
    #[serde(default = "ParameterVector::reference")]
    pub params: ParameterVector,
    #[serde(default)]
    pub grid: TimeGrid,
    pub n_fans: usize,
    pub seed: u64,
    #[serde(default)]
    pub missingness: Option<Missingness>,
    #[serde(default)]
    pub break_injection: Option<BreakInjection>,
}

impl SimulationConfig {
    pub fn new(params: ParameterVector, n_fans: usize, seed: u64) -> Self {
        Self {
            params,
            grid: TimeGrid::default(),
            n_fans,
            seed,
            missingness: None,
            break_injection: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.params.validate()?;
        if self.n_fans == 0 {
            return Err(Error::Config("n_fans must be at least 1".into()));
        }
        if let Some(m) = self.missingness {
            if !(0.0..1.0).contains(&m.fraction) || !m.strength.is_finite() {
                return Err(Error::Config(format!("missing fraction {} must lie in [0, 1)", m.fraction)));
            }
        }
        if let Some(b) = self.break_injection {
            if !(-1.0..=1.0).contains(&b.intercept_correlation) || !b.mean_shift.is_finite() {
                return Err(Error::Config("break intercept correlation must lie in [-1, 1]".into()));
            }
        }
        Ok(())
    }
}

/// Precomputed per-configuration quantities.
struct Generator {
    grid: TimeGrid,
    p: ParameterVector,
    trend_sqrt: Matrix3<f64>,
    trend_rows: Vec<[f64; 3]>,
    ff_mean: Vec<f64>,
    ff_sd: Vec<f64>,
    brk: Option<BreakInjection>,
}

struct FanDraw {
    hr: Vec<f64>,
    sl: Vec<f64>,
    /// Standardized latent deviation, drives the activity covariates.
    ff_z: Vec<f64>,
}

impl Generator {
    fn new(p: &ParameterVector, grid: &TimeGrid, brk: Option<BreakInjection>) -> Result<Self> {
        p.validate()?;
        let eig = SymmetricEigen::new(p.trend_covariance());
        let d = Matrix3::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()));
        let trend_sqrt = eig.eigenvectors * d;
        let cov = latent_covariance(p, grid)?;
        Ok(Self {
            grid: *grid,
            p: *p,
            trend_sqrt,
            trend_rows: (1..=grid.n_points).map(|t| trend_row(grid, t)).collect(),
            ff_mean: expected_fever(p, grid).iter().copied().collect(),
            ff_sd: (0..grid.n_points).map(|i| cov[(i, i)].max(0.0).sqrt()).collect(),
            brk,
        })
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> FanDraw {
        let p = &self.p;
        let n = self.grid.n_points;
        let mut z = || -> f64 { rng.sample(StandardNormal) };
        let z3 = nalgebra::Vector3::new(z(), z(), z());
        let dev = self.trend_sqrt * z3;
        let trend = [p.mu_i_ff + dev[0], p.mu_s1 + dev[1], p.mu_s2 + dev[2]];
        let fresh = z();
        let i_sl1 = p.phi_i_sl_init.sqrt() * z();
        let i_sl2 = p.phi_i_sl_2.sqrt() * z();
        let second_intercept = {
            let mut i2 = trend[0];
            if let Some(b) = self.brk {
                let r = b.intercept_correlation;
                i2 = p.mu_i_ff + b.mean_shift + r * dev[0] + (1.0 - r * r).sqrt() * p.phi_i_ff.sqrt() * fresh;
            }
            i2
        };

        let mut hr = Vec::with_capacity(n);
        let mut sl = Vec::with_capacity(n);
        let mut ff_z = Vec::with_capacity(n);
        let mut r_prev = 0.0;
        for t in 1..=n {
            let d = if self.grid.is_half_start(t) { p.phi_r_init } else { p.phi_r };
            let r = if t == 1 { d.sqrt() * z() } else { p.rho * r_prev + d.sqrt() * z() };
            r_prev = r;
            let [_, a1, a2] = self.trend_rows[t - 1];
            let second = self.grid.is_second_half(t);
            let intercept = if second { second_intercept } else { trend[0] };
            let ff = intercept + a1 * trend[1] + a2 * trend[2] + r;
            let theta_hr = if self.grid.is_half_start(t) { p.theta_hr_init } else { p.theta_hr };
            hr.push(ff + theta_hr.sqrt() * z());
            let sl_int = if second { p.rho_sl * i_sl1 + i_sl2 } else { i_sl1 };
            sl.push(p.mu_sl + p.lambda_sl * ff + sl_int + p.theta_sl.sqrt() * z());
            let sd = self.ff_sd[t - 1];
            ff_z.push(if sd > 0.0 { (ff - self.ff_mean[t - 1]) / sd } else { 0.0 });
        }
        FanDraw { hr, sl, ff_z }
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

struct Aux {
    steps: Vec<f64>,
    calories: Vec<f64>,
    motion: Vec<f64>,
    uniforms: Vec<f64>,
}

fn draw_aux(ff_z: &[f64], rng: &mut ChaCha8Rng) -> Aux {
    let n = ff_z.len();
    let mut aux = Aux {
        steps: Vec::with_capacity(n),
        calories: Vec::with_capacity(n),
        motion: Vec::with_capacity(n),
        uniforms: Vec::with_capacity(n),
    };
    for &fz in ff_z {
        let u1: f64 = rng.sample(StandardNormal);
        let u2: f64 = rng.sample(StandardNormal);
        let motion = 0.5 * fz + 0.75f64.sqrt() * u1;
        let steps = (40.0 + 25.0 * motion).max(0.0).round();
        aux.motion.push(motion);
        aux.steps.push(steps);
        aux.calories.push(((4.0 + 0.04 * steps + 0.5 * u2).max(0.0) * 100.0).round() / 100.0);
        aux.uniforms.push(rng.random::<f64>());
    }
    aux
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Intercept `a` with `mean(logistic(a + b * x)) = target`.
fn calibrate_intercept(xs: &[f64], strength: f64, target: f64) -> f64 {
    let rate = |a: f64| xs.iter().map(|&x| logistic(a + strength * x)).sum::<f64>() / xs.len() as f64;
    let (mut lo, mut hi) = (-50.0, 50.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if rate(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Draws a panel of fans. Fan `i` is named `fan_{i+1}`; stress levels are
/// not clipped to the device range.
pub fn simulate_panel(cfg: &SimulationConfig) -> Result<PanelDataset> {
    cfg.validate()?;
    let gen = Generator::new(&cfg.params, &cfg.grid, cfg.break_injection)?;
    let fans: Vec<(FanDraw, Aux)> = (0..cfg.n_fans as u64)
        .into_par_iter()
        .map(|i| {
            let draw = gen.draw(&mut stream_rng(cfg.seed, 2 * i));
            let aux = draw_aux(&draw.ff_z, &mut stream_rng(cfg.seed, 2 * i + 1));
            (draw, aux)
        })
        .collect();

    let threshold = cfg.missingness.filter(|m| m.fraction > 0.0).map(|m| {
        let motions: Vec<f64> = fans.iter().flat_map(|(_, a)| a.motion.iter().copied()).collect();
        (calibrate_intercept(&motions, m.strength, m.fraction), m.strength)
    });

    let mut panel = PanelDataset::empty(cfg.grid.n_points);
    for (i, (draw, aux)) in fans.into_iter().enumerate() {
        let sl = draw
            .sl
            .iter()
            .zip(aux.motion.iter().zip(&aux.uniforms))
            .map(|(&v, (&m, &u))| match threshold {
                Some((a, b)) if u < logistic(a + b * m) => None,
                _ => Some(v),
            })
            .collect();
        panel.fan_ids.push(format!("fan_{}", i + 1));
        panel.hr.push(draw.hr);
        panel.sl.push(sl);
        panel.steps.push(aux.steps);
        panel.calories.push(aux.calories);
        panel.motion.push(aux.motion);
    }
    Ok(panel)
}

/// Monte Carlo mean and covariance of the simulated observed vector with
/// their Monte Carlo standard errors.
#[derive(Debug, Clone)]
pub struct MonteCarloMoments {
    pub n_fans: usize,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub mean_se: DVector<f64>,
    pub cov_se: DMatrix<f64>,
}

const MC_CHUNK: usize = 8192;

fn observed(draw: &FanDraw) -> Vec<f64> {
    let mut x = draw.hr.clone();
    x.extend_from_slice(&draw.sl);
    x
}

/// Streams `n_fans` simulated fans twice (mean pass, then centred products),
/// never holding the panel in memory.
pub fn monte_carlo_moments(params: &ParameterVector, grid: &TimeGrid, n_fans: usize, seed: u64) -> Result<MonteCarloMoments> {
    if n_fans < 2 {
        return Err(Error::Config("Monte Carlo moments need at least 2 fans".into()));
    }
    let gen = Generator::new(params, grid, None)?;
    let p = 2 * grid.n_points;
    let chunks: Vec<(usize, usize)> = (0..n_fans)
        .step_by(MC_CHUNK)
        .map(|s| (s, (s + MC_CHUNK).min(n_fans)))
        .collect();

    let sums: Vec<Vec<f64>> = chunks
        .par_iter()
        .map(|&(a, b)| {
            let mut s = vec![0.0; p];
            for i in a..b {
                let x = observed(&gen.draw(&mut stream_rng(seed, 2 * i as u64)));
                for (acc, v) in s.iter_mut().zip(&x) {
                    *acc += v;
                }
            }
            s
        })
        .collect();
    let nf = n_fans as f64;
    let mut mean = DVector::<f64>::zeros(p);
    for s in &sums {
        for k in 0..p {
            mean[k] += s[k];
        }
    }
    mean /= nf;

    let tri = p * (p + 1) / 2;
    let products: Vec<(Vec<f64>, Vec<f64>)> = chunks
        .par_iter()
        .map(|&(a, b)| {
            let mut s1 = vec![0.0; tri];
            let mut s2 = vec![0.0; tri];
            let mut d = vec![0.0; p];
            for i in a..b {
                let x = observed(&gen.draw(&mut stream_rng(seed, 2 * i as u64)));
                for k in 0..p {
                    d[k] = x[k] - mean[k];
                }
                let mut idx = 0;
                for r in 0..p {
                    let dr = d[r];
                    for c in 0..=r {
                        let v = dr * d[c];
                        s1[idx] += v;
                        s2[idx] += v * v;
                        idx += 1;
                    }
                }
            }
            (s1, s2)
        })
        .collect();
    let mut s1 = vec![0.0; tri];
    let mut s2 = vec![0.0; tri];
    for (a, b) in &products {
        for k in 0..tri {
            s1[k] += a[k];
            s2[k] += b[k];
        }
    }
    let mut cov = DMatrix::zeros(p, p);
    let mut cov_se = DMatrix::zeros(p, p);
    let mut idx = 0;
    for r in 0..p {
        for c in 0..=r {
            let m1 = s1[idx] / nf;
            let m2 = s2[idx] / nf;
            let se = ((m2 - m1 * m1).max(0.0) / nf).sqrt();
            cov[(r, c)] = m1;
            cov[(c, r)] = m1;
            cov_se[(r, c)] = se;
            cov_se[(c, r)] = se;
            idx += 1;
        }
    }
    let mean_se = DVector::from_fn(p, |k, _| (cov[(k, k)] / nf).sqrt());
    Ok(MonteCarloMoments {
        n_fans,
        mean,
        cov,
        mean_se,
        cov_se,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::empirical_moments;

    fn zero_variance() -> ParameterVector {
        let mut p = ParameterVector::reference();
        for i in ParameterVector::VARIANCE_INDICES {
            let mut v = p.to_vec();
            v[i] = 0.0;
            p = ParameterVector::from_slice(&v).unwrap();
        }
        p.phi_iff_s1 = 0.0;
        p.phi_iff_s2 = 0.0;
        p.phi_s1_s2 = 0.0;
        p
    }

    #[test]
    fn zero_variances_give_expected_fever() {
        let p = zero_variance();
        let panel = simulate_panel(&SimulationConfig::new(p, 20, 1)).unwrap();
        let e = expected_fever(&p, &TimeGrid::default());
        for row in &panel.hr {
            for (a, b) in row.iter().zip(e.iter()) {
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let cfg = SimulationConfig::new(ParameterVector::reference(), 50, 9);
        assert_eq!(simulate_panel(&cfg).unwrap(), simulate_panel(&cfg).unwrap());
        let other = SimulationConfig { seed: 10, ..cfg.clone() };
        assert_ne!(simulate_panel(&cfg).unwrap().hr, simulate_panel(&other).unwrap().hr);
    }

    #[test]
    fn missingness_does_not_change_values() {
        let cfg = SimulationConfig::new(ParameterVector::reference(), 400, 3);
        let full = simulate_panel(&cfg).unwrap();
        let masked = simulate_panel(&SimulationConfig {
            missingness: Some(Missingness::mar(0.25)),
            ..cfg
        })
        .unwrap();
        assert_eq!(full.hr, masked.hr);
        for (a, b) in full.sl.iter().flatten().zip(masked.sl.iter().flatten()) {
            if let Some(v) = b {
                assert_eq!(a, &Some(*v));
            }
        }
        let frac = masked.missing_fraction();
        assert!((frac - 0.25).abs() < 0.02, "{frac}");
    }

    #[test]
    fn missingness_depends_on_motion() {
        let cfg = SimulationConfig {
            missingness: Some(Missingness::mar(0.25)),
            ..SimulationConfig::new(ParameterVector::reference(), 2000, 4)
        };
        let panel = simulate_panel(&cfg).unwrap();
        let (mut hi_miss, mut hi_n, mut lo_miss, mut lo_n) = (0, 0, 0, 0);
        for (m_row, s_row) in panel.motion.iter().zip(&panel.sl) {
            for (m, s) in m_row.iter().zip(s_row) {
                if *m > 0.0 {
                    hi_n += 1;
                    hi_miss += s.is_none() as usize;
                } else {
                    lo_n += 1;
                    lo_miss += s.is_none() as usize;
                }
            }
        }
        assert!(hi_miss as f64 / hi_n as f64 > lo_miss as f64 / lo_n as f64 + 0.1);
    }

    #[test]
    fn mean_of_first_heart_rate() {
        let p = ParameterVector::reference();
        let panel = simulate_panel(&SimulationConfig::new(p, 20000, 5)).unwrap();
        let n = panel.n_fans() as f64;
        let m = panel.hr.iter().map(|r| r[0]).sum::<f64>() / n;
        let v = panel.hr.iter().map(|r| (r[0] - m).powi(2)).sum::<f64>() / n;
        assert!((m - 89.046).abs() < 3.0 * (v / n).sqrt(), "{m}");
    }

    #[test]
    fn monte_carlo_matches_panel_moments() {
        let p = ParameterVector::reference();
        let grid = TimeGrid::default();
        let mc = monte_carlo_moments(&p, &grid, 3000, 8).unwrap();
        let panel = simulate_panel(&SimulationConfig::new(p, 3000, 8)).unwrap();
        let em = empirical_moments(&panel).unwrap();
        assert!((&mc.mean - &em.mean).abs().max() < 1e-9);
        assert!((&mc.cov - &em.cov).abs().max() < 1e-7);
    }

    #[test]
    fn break_injection_lowers_cross_half_covariance() {
        let p = ParameterVector::reference();
        let base = SimulationConfig::new(p, 3000, 6);
        let brk = SimulationConfig {
            break_injection: Some(BreakInjection {
                mean_shift: 0.0,
                intercept_correlation: 0.0,
            }),
            ..base.clone()
        };
        let a = empirical_moments(&simulate_panel(&base).unwrap()).unwrap();
        let b = empirical_moments(&simulate_panel(&brk).unwrap()).unwrap();
        assert!(b.cov[(2, 30)] < a.cov[(2, 30)] - 50.0, "{} vs {}", b.cov[(2, 30)], a.cov[(2, 30)]);
        assert!((b.cov[(2, 5)] - a.cov[(2, 5)]).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = SimulationConfig::new(ParameterVector::reference(), 0, 1);
        assert!(simulate_panel(&cfg).is_err());
        cfg.n_fans = 5;
        cfg.missingness = Some(Missingness::mar(1.0));
        assert!(simulate_panel(&cfg).is_err());
        cfg.missingness = None;
        cfg.params.theta_sl = -1.0;
        assert!(simulate_panel(&cfg).is_err());
    }
}
