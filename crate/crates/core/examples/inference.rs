//! Wald tests with Bonferroni flags and the LRT of the four trend covariances.
use fever_sem::data::empirical_moments;
use fever_sem::estimation::{
    bonferroni_threshold, fit_from_moments, likelihood_ratio_test, wald_tests, FitOptions, DEFAULT_JOINT_TEST,
};
use fever_sem::model::{ModelDefinition, ParameterVector};
use fever_sem::simulation::{simulate_panel, SimulationConfig};

fn main() -> fever_sem::error::Result<()> {
    let panel = simulate_panel(&SimulationConfig::new(ParameterVector::reference(), 137, 42))?;
    let sample = empirical_moments(&panel)?;
    let def = ModelDefinition::time_dependent();
    let full = fit_from_moments(&def, &sample, &FitOptions::default())?;

    println!("Bonferroni threshold {:.4}", bonferroni_threshold(0.05, full.n_free()));
    for w in wald_tests(&full, 0.05) {
        let flag = match w.significant_bonferroni {
            Some(true) => "**",
            Some(false) if w.significant == Some(true) => "*",
            _ => "",
        };
        println!("{:<14} z = {:>7.2}  p = {:.4} {flag}", w.name, w.z.unwrap_or(f64::NAN), w.p.unwrap_or(f64::NAN));
    }

    let restricted = fit_from_moments(&def, &sample, &FitOptions::default().with_fixed_zero(&DEFAULT_JOINT_TEST))?;
    let lrt = likelihood_ratio_test(&full, &restricted)?;
    println!("\nLRT {:?} = 0: stat {:.3}, df {}, p {:.4}", DEFAULT_JOINT_TEST, lrt.stat, lrt.df, lrt.p);
    Ok(())
}
