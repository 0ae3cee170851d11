//! Chained-equation imputation of missing stress levels with PMM and Normal draws.
use fever_sem::imputation::{filter_fans_with_summary, mice_impute, ImputationMethod, ImputationOptions};
use fever_sem::model::ParameterVector;
use fever_sem::simulation::{simulate_panel, Missingness, SimulationConfig};

fn main() -> fever_sem::error::Result<()> {
    let mut cfg = SimulationConfig::new(ParameterVector::reference(), 137, 5);
    cfg.missingness = Some(Missingness::mar(0.25));
    let (panel, summary) = filter_fans_with_summary(&simulate_panel(&cfg)?)?;
    println!("{summary:?}");

    for method in [ImputationMethod::Pmm, ImputationMethod::Normal] {
        let opts = ImputationOptions {
            method,
            m: 5,
            ..ImputationOptions::default()
        };
        let set = mice_impute(&panel, &opts)?;
        let means: Vec<String> = set
            .datasets
            .iter()
            .map(|d| {
                let all: Vec<f64> = d.sl.iter().flatten().map(|v| v.unwrap()).collect();
                format!("{:.2}", all.iter().sum::<f64>() / all.len() as f64)
            })
            .collect();
        println!("{method:?}: mean SL per imputation {}", means.join(", "));
        for w in &set.warnings {
            println!("  warning: {w}");
        }
    }

    let dir = std::env::temp_dir().join("fever_sem_imputations");
    mice_impute(&panel, &ImputationOptions::default())?.save(&dir)?;
    println!("wrote {}", dir.display());
    Ok(())
}
