//! Compares Monte Carlo moments with the closed-form implied moments.
use fever_sem::model::{ModelDefinition, ParameterVector};
use fever_sem::moments::implied_moments;
use fever_sem::simulation::monte_carlo_moments;

fn main() -> fever_sem::error::Result<()> {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(200_000);
    let def = ModelDefinition::time_dependent();
    let p = ParameterVector::reference();
    let implied = implied_moments(&p, &def)?;
    let mc = monte_carlo_moments(&p, &def.grid, n, 11)?;

    let dim = implied.dim();
    let (mut total, mut inside, mut worst) = (0, 0, 0.0f64);
    for i in 0..dim {
        let z = (mc.mean[i] - implied.mean[i]) / mc.mean_se[i];
        total += 1;
        inside += usize::from(z.abs() <= 3.0);
        worst = worst.max(z.abs());
        for j in 0..=i {
            let z = (mc.cov[(i, j)] - implied.cov[(i, j)]) / mc.cov_se[(i, j)];
            total += 1;
            inside += usize::from(z.abs() <= 3.0);
            worst = worst.max(z.abs());
        }
    }
    println!("n = {n}: {inside}/{total} moments within 3 MCSE, max |z| {worst:.2}");
    println!("HR_1 mean {:.3} +/- {:.3} (implied {:.3})", mc.mean[0], mc.mean_se[0], implied.mean[0]);
    Ok(())
}
