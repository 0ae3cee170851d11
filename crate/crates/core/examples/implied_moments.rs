//! Model-implied means and covariances at the reference values.
use fever_sem::model::{ModelDefinition, ParameterVector};
use fever_sem::moments::{ar_variances, expected_fever, implied_moments};

fn main() -> fever_sem::error::Result<()> {
    let def = ModelDefinition::time_dependent();
    let p = ParameterVector::reference();
    let imp = implied_moments(&p, &def)?;
    let t = def.grid.n_points;

    let fever = expected_fever(&p, &def.grid);
    let ar = ar_variances(p.rho, p.phi_r_init, p.phi_r, &def.grid)?;
    println!("{:>3} {:>8} {:>8} {:>9} {:>9} {:>8}", "t", "E[HR]", "E[SL]", "Var HR", "Var SL", "Var R");
    for i in 0..t {
        println!(
            "{:>3} {:>8.2} {:>8.2} {:>9.2} {:>9.2} {:>8.2}  fever {:.2}",
            i + 1,
            imp.mean[i],
            imp.mean[t + i],
            imp.cov[(i, i)],
            imp.cov[(t + i, t + i)],
            ar[i],
            fever[i]
        );
    }

    let json = imp.to_json(&def);
    println!("\n{} labels, serialized size {} bytes", json.labels.len(), serde_json::to_string(&json).unwrap().len());
    Ok(())
}
