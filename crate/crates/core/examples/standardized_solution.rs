//! Standardized loadings, explained variance and reliability per time point.
use fever_sem::estimation::{standardized_solution, variance_decomposition};
use fever_sem::model::{ModelDefinition, ParameterVector, Parameters};

fn main() -> fever_sem::error::Result<()> {
    let def = ModelDefinition::time_dependent();
    let p = ParameterVector::reference();
    let sol = standardized_solution(&Parameters::TimeDependent(p), &def)?;
    println!("{:>3} {:>7} {:>7} {:>6} {:>6} {:>6}", "t", "l_HR", "l_SL", "R2_HR", "R2_SL", "rel");
    for pt in &sol.points {
        println!(
            "{:>3} {:>7.3} {:>7.3} {:>6.3} {:>6.3} {:>6.3}",
            pt.t,
            pt.std_loading_hr,
            pt.std_loading_sl,
            pt.r2_hr,
            pt.r2_sl,
            pt.reliability
        );
    }
    println!(
        "means: l_HR {:.3}, l_SL {:.3}, R2_HR {:.3}, R2_SL {:.3}, reliability {:.3}",
        sol.mean_std_loading_hr, sol.mean_std_loading_sl, sol.mean_r2_hr, sol.mean_r2_sl, sol.mean_reliability
    );

    let d = variance_decomposition(&p, &def);
    println!("average variance SL {:.1}, HR {:.1}", d.avg_var_sl, d.avg_var_hr);
    println!(
        "shares: theta_SL {:.3}, random intercept SL {:.3}, theta_HR {:.3}; theta_HR init ratio {:.2}",
        d.share_theta_sl, d.share_phi_i_sl, d.share_theta_hr, d.ratio_theta_hr_init
    );
    Ok(())
}
