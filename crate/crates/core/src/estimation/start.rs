use super::SampleMoments;
use crate::error::{Error, Result};
use crate::model::{
    trend_row, BaselineParameterVector, ModelDefinition, ParameterVector, Parameters, Variant,
};

/// Moment-based starting values.
///
/// The loading is the ratio of heart-rate/stress cross-covariances to
/// heart-rate covariances away from the diagonal, the trend means come from
/// least squares on the heart-rate means, and the AR part from the average
/// lag-0/1/2 heart-rate covariances.
pub fn start_values(def: &ModelDefinition, sample: &SampleMoments) -> Result<Parameters> {
    let n = def.grid.n_points;
    if sample.dim() != 2 * n {
        return Err(Error::Dimension(format!(
            "sample has {} variables, model expects {}",
            sample.dim(),
            2 * n
        )));
    }
    let c = &sample.cov;
    let hr = |t: usize, s: usize| c[(t, s)];
    let sl = |t: usize, s: usize| c[(n + t, n + s)];
    let cross = |t: usize, s: usize| c[(n + t, s)];

    let (mut num, mut den) = (0.0, 0.0);
    for t in 0..n {
        for s in 0..n {
            if t != s {
                num += cross(t, s);
                den += hr(t, s);
            }
        }
    }
    let lambda = if den > 0.0 && num / den > 0.05 { num / den } else { 1.0 };
    let mean_hr: Vec<f64> = (0..n).map(|t| sample.mean[t]).collect();
    let mean_sl: Vec<f64> = (0..n).map(|t| sample.mean[n + t]).collect();
    let mu_sl = (0..n).map(|t| mean_sl[t] - lambda * mean_hr[t]).sum::<f64>() / n as f64;
    let avg_var_hr = (0..n).map(|t| hr(t, t)).sum::<f64>() / n as f64;
    let avg_var_sl = (0..n).map(|t| sl(t, t)).sum::<f64>() / n as f64;
    let floor_hr = 0.02 * avg_var_hr.max(1e-6);
    let floor_sl = 0.02 * avg_var_sl.max(1e-6);

    let v_ff: Vec<f64> = (0..n)
        .map(|t| (cross(t, t) / lambda).clamp(0.5 * hr(t, t), hr(t, t)))
        .collect();

    if def.variant == Variant::TimeInvariantBaseline {
        let mut off = 0.0;
        for t in 0..n {
            for s in 0..n {
                if t != s {
                    off += hr(t, s);
                }
            }
        }
        off /= (n * (n - 1)) as f64;
        let phi_ff = off.max(0.1 * avg_var_hr);
        return Ok(Parameters::TimeInvariantBaseline(BaselineParameterVector {
            lambda_sl: lambda,
            mu_sl: (0..n).map(|t| mean_sl[t]).sum::<f64>() / n as f64
                - lambda * mean_hr.iter().sum::<f64>() / n as f64,
            theta_hr: (avg_var_hr - phi_ff).max(floor_hr),
            theta_sl: (avg_var_sl - lambda * lambda * phi_ff).max(floor_sl),
            mu_ff: mean_hr.iter().sum::<f64>() / n as f64,
            phi_ff,
        }));
    }

    let grid = &def.grid;
    // least squares of the heart-rate means on (1, a1, a2)
    let rows: Vec<[f64; 3]> = (1..=n).map(|t| trend_row(grid, t)).collect();
    let xtx = nalgebra::Matrix3::from_fn(|i, j| rows.iter().map(|r| r[i] * r[j]).sum::<f64>());
    let xty = nalgebra::Vector3::from_fn(|i, _| rows.iter().zip(&mean_hr).map(|(r, m)| r[i] * m).sum::<f64>());
    let beta = xtx
        .try_inverse()
        .map(|inv| inv * xty)
        .unwrap_or_else(|| nalgebra::Vector3::new(mean_hr.iter().sum::<f64>() / n as f64, 0.0, 0.0));

    let theta_hr_t: Vec<f64> = (0..n).map(|t| (hr(t, t) - v_ff[t]).max(floor_hr)).collect();
    let (mut init_sum, mut init_n, mut rest_sum, mut rest_n) = (0.0, 0, 0.0, 0);
    for (i, th) in theta_hr_t.iter().enumerate() {
        if grid.is_half_start(i + 1) {
            init_sum += th;
            init_n += 1;
        } else {
            rest_sum += th;
            rest_n += 1;
        }
    }
    let theta_hr_init = init_sum / init_n.max(1) as f64;
    let theta_hr = rest_sum / rest_n.max(1) as f64;

    let lag_mean = |k: usize| -> f64 {
        if k == 0 {
            v_ff.iter().sum::<f64>() / n as f64
        } else {
            (0..n - k).map(|t| hr(t, t + k)).sum::<f64>() / (n - k) as f64
        }
    };
    let (c0, c1, c2) = (lag_mean(0), lag_mean(1), lag_mean(2));
    let rho = if c0 - c1 > 1e-9 {
        ((c1 - c2) / (c0 - c1)).clamp(0.05, 0.95)
    } else {
        0.5
    };
    let v_r = ((c0 - c1) / (1.0 - rho)).clamp(0.05 * c0, 0.9 * c0);
    let phi_i_ff = (c0 - v_r).max(0.1 * c0);

    let span = (grid.knot2 - grid.knot1) as f64;
    let phi_slope = 1e-3 * phi_i_ff / span;

    // stress-level error covariance away from the diagonal
    let resid = |t: usize, s: usize| sl(t, s) - lambda * lambda * hr(t, s);
    let (mut ff, mut ffn, mut ss, mut ssn, mut cr, mut crn) = (0.0, 0, 0.0, 0, 0.0, 0);
    for t in 0..n {
        for s in 0..n {
            if t == s {
                continue;
            }
            match (grid.is_second_half(t + 1), grid.is_second_half(s + 1)) {
                (false, false) => {
                    ff += resid(t, s);
                    ffn += 1;
                }
                (true, true) => {
                    ss += resid(t, s);
                    ssn += 1;
                }
                _ => {
                    cr += resid(t, s);
                    crn += 1;
                }
            }
        }
    }
    let avg = |sum: f64, k: usize| if k > 0 { sum / k as f64 } else { 0.0 };
    let phi_i_sl_init = avg(ff, ffn).max(floor_sl);
    let rho_sl = (avg(cr, crn) / phi_i_sl_init).clamp(-1.5, 1.5);
    let phi_i_sl_2 = (avg(ss, ssn) - rho_sl * rho_sl * phi_i_sl_init).max(floor_sl);
    let theta_sl = ((0..n)
        .map(|t| sl(t, t) - lambda * lambda * v_ff[t])
        .sum::<f64>()
        / n as f64
        - 0.5 * (phi_i_sl_init + phi_i_sl_2 + rho_sl * rho_sl * phi_i_sl_init))
        .max(floor_sl);

    Ok(Parameters::TimeDependent(ParameterVector {
        lambda_sl: lambda,
        mu_sl,
        theta_hr_init,
        theta_hr,
        theta_sl,
        rho_sl,
        phi_i_sl_init,
        phi_i_sl_2,
        mu_i_ff: beta[0],
        mu_s1: beta[1],
        mu_s2: beta[2],
        phi_i_ff,
        phi_s1: phi_slope,
        phi_s2: phi_slope,
        phi_iff_s1: 0.0,
        phi_iff_s2: 0.0,
        phi_s1_s2: 0.0,
        rho,
        phi_r_init: v_r,
        phi_r: v_r * (1.0 - rho * rho),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moments::implied_moments;

    #[test]
    fn starts_are_admissible_and_close_on_population_moments() {
        let def = ModelDefinition::time_dependent();
        let truth = ParameterVector::reference();
        let m = implied_moments(&truth, &def).unwrap();
        let s = SampleMoments::new(137, m.mean, m.cov).unwrap();
        let Parameters::TimeDependent(p) = start_values(&def, &s).unwrap() else {
            panic!("wrong variant");
        };
        p.validate().unwrap();
        assert!((p.lambda_sl - truth.lambda_sl).abs() < 0.05, "{}", p.lambda_sl);
        assert!((p.mu_i_ff - truth.mu_i_ff).abs() < 1e-6);
        assert!((p.mu_s1 - truth.mu_s1).abs() < 1e-6);
        assert!((p.mu_s2 - truth.mu_s2).abs() < 1e-6);
        assert!(p.rho > 0.0 && p.rho < 1.0);
    }

    #[test]
    fn baseline_start() {
        let def = ModelDefinition::baseline();
        let full = ModelDefinition::time_dependent();
        let m = implied_moments(&ParameterVector::reference(), &full).unwrap();
        let s = SampleMoments::new(137, m.mean, m.cov).unwrap();
        let p = start_values(&def, &s).unwrap();
        assert_eq!(p.variant(), Variant::TimeInvariantBaseline);
        p.validate().unwrap();
    }
}
