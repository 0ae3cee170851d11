//! Draws a synthetic panel with MAR-masked stress levels and writes it as CSV.
use fever_sem::model::ParameterVector;
use fever_sem::simulation::{simulate_panel, Missingness, SimulationConfig};

fn main() -> fever_sem::error::Result<()> {
    let mut cfg = SimulationConfig::new(ParameterVector::reference(), 137, 7);
    cfg.missingness = Some(Missingness::mar(0.25));
    let panel = simulate_panel(&cfg)?;

    println!("{} fans, {} time points", panel.n_fans(), panel.n_points);
    println!("stress missing: {:.1}%", 100.0 * panel.missing_fraction());
    let first = &panel.fan_ids[0];
    println!("{first}: HR {:?}", &panel.hr[0][..5]);
    println!("{first}: SL {:?}", &panel.sl[0][..5]);

    let path = std::env::temp_dir().join("fever_sem_panel.csv");
    panel.save(&path)?;
    println!("wrote {}", path.display());
    Ok(())
}
