use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelDefinition, ParameterVector, Parameters};
use crate::moments::variance_components;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StandardizedPoint {
    pub t: usize,
    pub std_loading_hr: f64,
    pub std_loading_sl: f64,
    pub r2_hr: f64,
    pub r2_sl: f64,
    /// Construct reliability from the standardized loadings,
    /// `(l_hr + l_sl)^2 / ((l_hr + l_sl)^2 + (1 - l_hr^2) + (1 - l_sl^2))`.
    pub reliability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizedSolution {
    pub points: Vec<StandardizedPoint>,
    pub mean_std_loading_hr: f64,
    pub mean_std_loading_sl: f64,
    pub mean_r2_hr: f64,
    pub mean_r2_sl: f64,
    pub mean_reliability: f64,
}

pub fn standardized_solution(params: &Parameters, def: &ModelDefinition) -> Result<StandardizedSolution> {
    let comp = variance_components(params, &def.grid);
    let lambda_sl = match params {
        Parameters::TimeDependent(p) => p.lambda_sl,
        Parameters::TimeInvariantBaseline(p) => p.lambda_sl,
    };
    let mut points = Vec::with_capacity(comp.latent.len());
    for (i, ((&vff, &ehr), &esl)) in comp.latent.iter().zip(&comp.error_hr).zip(&comp.error_sl).enumerate() {
        let var_hr = vff + ehr;
        let var_sl = lambda_sl * lambda_sl * vff + esl;
        if var_hr <= 0.0 || var_sl <= 0.0 {
            return Err(Error::Inadmissible(format!("zero implied indicator variance at t={}", i + 1)));
        }
        let l_hr = vff.max(0.0).sqrt() / var_hr.sqrt();
        let l_sl = lambda_sl * vff.max(0.0).sqrt() / var_sl.sqrt();
        let (r2_hr, r2_sl) = (l_hr * l_hr, l_sl * l_sl);
        let sum_sq = (l_hr + l_sl).powi(2);
        let reliability = sum_sq / (sum_sq + (1.0 - r2_hr) + (1.0 - r2_sl));
        points.push(StandardizedPoint {
            t: i + 1,
            std_loading_hr: l_hr,
            std_loading_sl: l_sl,
            r2_hr,
            r2_sl,
            reliability,
        });
    }
    let mean = |f: fn(&StandardizedPoint) -> f64| points.iter().map(f).sum::<f64>() / points.len() as f64;
    Ok(StandardizedSolution {
        mean_std_loading_hr: mean(|p| p.std_loading_hr),
        mean_std_loading_sl: mean(|p| p.std_loading_sl),
        mean_r2_hr: mean(|p| p.r2_hr),
        mean_r2_sl: mean(|p| p.r2_sl),
        mean_reliability: mean(|p| p.reliability),
        points,
    })
}

/// Average implied indicator variances and the shares attributed to the
/// individual error components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceDecomposition {
    pub avg_var_sl: f64,
    pub avg_var_hr: f64,
    /// `theta_sl / avg_var_sl`
    pub share_theta_sl: f64,
    /// `phi_i_sl_init / avg_var_sl`
    pub share_phi_i_sl: f64,
    /// `theta_hr / avg_var_hr`
    pub share_theta_hr: f64,
    /// `theta_hr_init / theta_hr`
    pub ratio_theta_hr_init: f64,
}

pub fn variance_decomposition(params: &ParameterVector, def: &ModelDefinition) -> VarianceDecomposition {
    let comp = variance_components(&Parameters::TimeDependent(*params), &def.grid);
    let n = comp.latent.len() as f64;
    let lam2 = params.lambda_sl * params.lambda_sl;
    let avg_var_sl = comp
        .latent
        .iter()
        .zip(&comp.error_sl)
        .map(|(v, e)| e + lam2 * v)
        .sum::<f64>()
        / n;
    let avg_var_hr = comp.latent.iter().zip(&comp.error_hr).map(|(v, e)| e + v).sum::<f64>() / n;
    VarianceDecomposition {
        avg_var_sl,
        avg_var_hr,
        share_theta_sl: params.theta_sl / avg_var_sl,
        share_phi_i_sl: params.phi_i_sl_init / avg_var_sl,
        share_theta_hr: params.theta_hr / avg_var_hr,
        ratio_theta_hr_init: params.theta_hr_init / params.theta_hr,
    }
}
