//! Raw wearable records binned into 3-minute intervals around the match clock.
use fever_sem::ingest::{ingest, MatchClock, RawRecordFile};
use fever_sem::model::{ParameterVector, TimeGrid};
use fever_sem::simulation::{simulate_panel, Missingness, SimulationConfig};

fn main() -> fever_sem::error::Result<()> {
    let path = match std::env::args().nth(1) {
        Some(p) => p.into(),
        None => {
            let mut cfg = SimulationConfig::new(ParameterVector::reference(), 40, 3);
            cfg.missingness = Some(Missingness::mar(0.3));
            let clock = MatchClock::with_kickoff("2024-05-18 15:30:00");
            let raw = RawRecordFile::from_panel(&simulate_panel(&cfg)?, &clock, &TimeGrid::default())?;
            let path = std::env::temp_dir().join("fever_sem_raw.csv");
            raw.save(&path)?;
            path
        }
    };
    let kickoff = std::env::args().nth(2).unwrap_or_else(|| "2024-05-18 15:30:00".into());

    let raw = RawRecordFile::load(&path)?;
    let (panel, summary) = ingest(&raw, &MatchClock::with_kickoff(&kickoff), &TimeGrid::default())?;
    println!("{}: {} records", path.display(), raw.records.len());
    println!("{}", serde_json::to_string_pretty(&summary).unwrap());
    println!("{} fans kept, {:.1}% stress missing", panel.n_fans(), 100.0 * panel.missing_fraction());
    Ok(())
}
