//! Corrected chi-square, RMSEA, CFI, SRMR and the standardized residual matrix.
use fever_sem::data::empirical_moments;
use fever_sem::estimation::{fit_from_moments, FitOptions};
use fever_sem::fit::{fit_indices, fit_residuals, yuan_correction};
use fever_sem::model::{ModelDefinition, ParameterVector};
use fever_sem::simulation::{simulate_panel, SimulationConfig};

fn main() -> fever_sem::error::Result<()> {
    let panel = simulate_panel(&SimulationConfig::new(ParameterVector::reference(), 137, 1))?;
    let sample = empirical_moments(&panel)?;
    let full_def = ModelDefinition::time_dependent();
    let opts = FitOptions::default();
    let full = fit_from_moments(&full_def, &sample, &opts)?;
    let base = fit_from_moments(&ModelDefinition::baseline(), &sample, &opts)?;

    let y = yuan_correction(full.chi2, sample.n, full_def.n_observed(), full.n_free());
    println!("correction factor {:.4}: chi2 {:.1} -> {:.1}", y.factor, full.chi2, y.chi2);

    let report = fit_indices(&full, &base, &sample, full_def.grid)?;
    for m in [&report.full, &report.baseline] {
        println!(
            "{:?}: df {}, chi2 {:.1} ({:.1} corrected), RMSEA {:.3}, CFI {:.3}, SRMR {:.3}, AIC {:.1}",
            m.variant, m.df, m.chi2_raw, m.chi2_corrected, m.rmsea_corrected, m.cfi_corrected, m.srmr, m.aic
        );
    }
    println!("delta AIC {:.1}", report.delta_aic);

    let res = fit_residuals(&full, &full_def, &sample)?;
    let t = full_def.grid.n_points;
    println!("\nresiduals: SRMR {:.4}, {:.1}% within +/-0.1", res.srmr(), 100.0 * res.share_within(0.1));
    println!("HR-SL block mean {:.4}", res.block_mean(0..t, t..2 * t));
    let path = std::env::temp_dir().join("fever_sem_residuals.csv");
    res.save(&path)?;
    println!("wrote {}", path.display());
    Ok(())
}
