//! Maximum-likelihood fit of both variants to one simulated sample.
use fever_sem::data::empirical_moments;
use fever_sem::estimation::{fit_from_moments, FitOptions};
use fever_sem::model::{ModelDefinition, ParameterVector};
use fever_sem::simulation::{simulate_panel, SimulationConfig};

fn main() -> fever_sem::error::Result<()> {
    let truth = ParameterVector::reference();
    let panel = simulate_panel(&SimulationConfig::new(truth, 1000, 3))?;
    let sample = empirical_moments(&panel)?;

    let full = fit_from_moments(&ModelDefinition::time_dependent(), &sample, &FitOptions::default())?;
    println!("full: F = {:.4}, chi2 = {:.1}, AIC = {:.1}, {} iterations", full.f_ml, full.chi2, full.aic(), full.n_iter);
    println!("{:<14} {:>9} {:>9} {:>8}", "parameter", "truth", "estimate", "se");
    for ((name, est), (t, se)) in full.names().iter().zip(full.params.values()).zip(truth.to_vec().iter().zip(&full.se)) {
        println!("{name:<14} {t:>9.3} {est:>9.3} {:>8.3}", se.unwrap_or(f64::NAN));
    }

    let base = fit_from_moments(&ModelDefinition::baseline(), &sample, &FitOptions::default())?;
    println!("\nbaseline: chi2 = {:.1}, AIC = {:.1}", base.chi2, base.aic());
    for (name, est) in base.names().iter().zip(base.params.values()) {
        println!("  {name:<10} {est:>9.3}");
    }
    Ok(())
}
