//! Parameter layout, moment counts and degrees of freedom of both variants.
use fever_sem::model::{parameter_count, trend_loadings, ModelDefinition, ParameterVector};

fn main() -> fever_sem::error::Result<()> {
    for def in [ModelDefinition::time_dependent(), ModelDefinition::baseline()] {
        println!(
            "{:?}: {} observed, {} moments, {} parameters, df {}",
            def.variant,
            def.n_observed(),
            def.moment_count(),
            parameter_count(&def),
            def.degrees_of_freedom()
        );
    }

    let grid = ModelDefinition::time_dependent().grid;
    println!("\ntrend loadings (intercept, slope 1, slope 2):");
    for t in [1, grid.knot1, grid.halftime_start, grid.knot2, grid.n_points] {
        println!("  t = {:>2}: {:?}", t, trend_loadings(&grid, t)?);
    }

    let p = ParameterVector::reference();
    p.validate()?;
    println!("\nreference values:");
    for (name, v) in fever_sem::model::names_for(fever_sem::model::Variant::TimeDependent).iter().zip(p.to_vec()) {
        println!("  {name:<14} {v:>9.3}");
    }
    Ok(())
}
