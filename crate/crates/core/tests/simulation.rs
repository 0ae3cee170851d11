use fever_sem::data::empirical_moments;
use fever_sem::model::{ModelDefinition, ParameterVector, TimeGrid};
use fever_sem::moments::implied_moments;
use fever_sem::simulation::{monte_carlo_moments, simulate_panel, SimulationConfig};

#[test]
fn heart_rate_at_kickoff_matches_intercept_mean() {
    let mc = monte_carlo_moments(&ParameterVector::reference(), &TimeGrid::default(), 1_000_000, 13).unwrap();
    let z = (mc.mean[0] - 89.046) / mc.mean_se[0];
    assert!(z.abs() <= 3.0, "HR_1 mean {} (z = {z})", mc.mean[0]);
}

#[test]
fn monte_carlo_agrees_with_direct_panel_moments() {
    let params = ParameterVector::reference();
    let mc = monte_carlo_moments(&params, &TimeGrid::default(), 3000, 17).unwrap();
    let panel = simulate_panel(&SimulationConfig::new(params, 3000, 17)).unwrap();
    let direct = empirical_moments(&panel).unwrap();
    // unbiased vs ML divisor
    let scale = 3000.0 / 2999.0;
    for i in 0..68 {
        assert!((mc.mean[i] - direct.mean[i]).abs() < 1e-9);
        for j in 0..68 {
            let d = mc.cov[(i, j)] - direct.cov[(i, j)] * scale;
            let d_ml = mc.cov[(i, j)] - direct.cov[(i, j)];
            assert!(d.abs() < 1e-8 || d_ml.abs() < 1e-8, "({i},{j})");
        }
    }
}

#[test]
fn distinct_seeds_converge_to_implied_moments() {
    let params = ParameterVector::reference();
    let implied = implied_moments(&params, &ModelDefinition::time_dependent()).unwrap();
    let grid = TimeGrid::default();
    let a = monte_carlo_moments(&params, &grid, 200_000, 1).unwrap();
    let b = monte_carlo_moments(&params, &grid, 200_000, 2).unwrap();
    assert_ne!(a.mean, b.mean);
    let max_z = |mc: &fever_sem::simulation::MonteCarloMoments| {
        let mut z = 0.0f64;
        for i in 0..68 {
            for j in 0..=i {
                z = z.max(((mc.cov[(i, j)] - implied.cov[(i, j)]) / mc.cov_se[(i, j)]).abs());
            }
        }
        z
    };
    // 2346 covariance cells: the maximum |z| rarely exceeds 4.5
    assert!(max_z(&a) < 4.5 && max_z(&b) < 4.5);
}
