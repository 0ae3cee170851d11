use fever_sem::imputation::filter_fans;
use fever_sem::ingest::{ingest, MatchClock, RawRecordFile};
use fever_sem::model::{ParameterVector, TimeGrid};
use fever_sem::simulation::{simulate_panel, Missingness, SimulationConfig};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn simulated_panels_roundtrip_through_raw_csv(
        seed in 0u64..1000,
        n in 1usize..40,
        fraction in 0.0f64..0.4,
        gap in 0i64..30,
    ) {
        let mut cfg = SimulationConfig::new(ParameterVector::reference(), n, seed);
        cfg.missingness = Some(Missingness::mar(fraction));
        let panel = simulate_panel(&cfg).unwrap();
        let grid = TimeGrid::default();
        let clock = MatchClock {
            halftime_gap_minutes: gap,
            ..MatchClock::with_kickoff("2024-03-09T18:30:00")
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("raw.csv");
        RawRecordFile::from_panel(&panel, &clock, &grid).unwrap().save(&path).unwrap();
        let raw = RawRecordFile::load(&path).unwrap();
        match filter_fans(&panel) {
            Ok(expected) => {
                let (ingested, summary) = ingest(&raw, &clock, &grid).unwrap();
                prop_assert_eq!(ingested, expected);
                prop_assert_eq!(summary.outside_window, 0);
                prop_assert_eq!(summary.incomplete_heart_rate, 0);
            }
            Err(_) => prop_assert!(ingest(&raw, &clock, &grid).is_err()),
        }
    }
}

#[test]
fn several_readings_per_bin_are_aggregated() {
    let text = "\
fan_id,timestamp,heart_rate,stress,steps,calories,motion_intensity
a,2024-03-09 18:36:00,80,30,5,1.5,0.25
a,2024-03-09 18:37:30,84,,7,0.5,0.75
a,2024-03-09 18:39:00,100,60,1,1,1
";
    let mut raw = RawRecordFile::read_csv(text.as_bytes()).unwrap();
    let clock = MatchClock::with_kickoff("2024-03-09 18:30:00");
    let grid = TimeGrid::default();
    // fill every other bin so the fan survives the filters
    let filler = RawRecordFile::from_panel(
        &simulate_panel(&SimulationConfig::new(ParameterVector::reference(), 1, 1)).unwrap(),
        &clock,
        &grid,
    )
    .unwrap();
    raw.records.extend(filler.records.into_iter().enumerate().filter(|(t, _)| *t != 2 && *t != 3).map(|(_, mut r)| {
        r.fan_id = "a".into();
        r
    }));
    let (panel, _) = ingest(&raw, &clock, &grid).unwrap();
    assert_eq!(panel.hr[0][2], 82.0);
    assert_eq!(panel.sl[0][2], Some(30.0));
    assert_eq!(panel.steps[0][2], 12.0);
    assert_eq!(panel.calories[0][2], 2.0);
    assert_eq!(panel.motion[0][2], 0.5);
    assert_eq!(panel.hr[0][3], 100.0);
}
