//! Rubin pooling of per-imputation fits and D4/D2 pooling of chi-square values.
use fever_sem::data::empirical_moments;
use fever_sem::estimation::{fit_from_moments, FitOptions};
use fever_sem::imputation::{filter_fans, mice_impute, ImputationOptions};
use fever_sem::model::{ModelDefinition, ParameterVector};
use fever_sem::pooling::{pool_chi_square, pool_estimates, PoolingMethod};
use fever_sem::simulation::{simulate_panel, Missingness, SimulationConfig};

fn main() -> fever_sem::error::Result<()> {
    let mut cfg = SimulationConfig::new(ParameterVector::reference(), 137, 9);
    cfg.missingness = Some(Missingness::mar(0.25));
    let set = mice_impute(&filter_fans(&simulate_panel(&cfg)?)?, &ImputationOptions::default())?;

    let def = ModelDefinition::time_dependent();
    let opts = FitOptions::default();
    let fits = set
        .datasets
        .iter()
        .map(|d| fit_from_moments(&def, &empirical_moments(d)?, &opts))
        .collect::<Result<Vec<_>, _>>()?;

    let pooled = pool_estimates(&fits, 0.05)?;
    println!("{:<14} {:>9} {:>8} {:>8} {:>8} {:>8}", "parameter", "estimate", "W", "B", "se", "p");
    for q in &pooled.parameters {
        println!(
            "{:<14} {:>9.3} {:>8.3} {:>8.3} {:>8.3} {:>8.4} {}",
            q.name,
            q.estimate,
            q.within.unwrap_or(f64::NAN),
            q.between,
            q.se.unwrap_or(f64::NAN),
            q.p.unwrap_or(f64::NAN),
            q.significance
        );
    }

    let chi: Vec<f64> = fits.iter().map(|f| f.chi2).collect();
    let d2 = pool_chi_square(&chi, None, def.degrees_of_freedom(), PoolingMethod::D2)?;
    println!("\nD2: mean chi2 {:.1}, pooled {:.1}, r {:.3}, p {:.3}", d2.mean, d2.chi2, d2.r, d2.p);
    Ok(())
}
