use fever_sem::data::empirical_moments;
use fever_sem::estimation::{
    fit_from_moments, likelihood_ratio_test, wald_tests, FitOptions, FitResult, DEFAULT_JOINT_TEST,
};
use fever_sem::model::{ModelDefinition, ParameterVector};
use fever_sem::simulation::{simulate_panel, SimulationConfig};

fn fit(params: ParameterVector, n: usize, seed: u64, opts: &FitOptions) -> FitResult {
    let panel = simulate_panel(&SimulationConfig::new(params, n, seed)).unwrap();
    let sample = empirical_moments(&panel).unwrap();
    fit_from_moments(&ModelDefinition::time_dependent(), &sample, opts).unwrap()
}

#[test]
fn standard_errors_shrink_like_root_n() {
    let opts = FitOptions::default();
    let small = fit(ParameterVector::reference(), 1000, 3, &opts);
    let large = fit(ParameterVector::reference(), 4000, 4, &opts);
    let mut ratios: Vec<f64> = small
        .se
        .iter()
        .zip(&large.se)
        .map(|(a, b)| a.unwrap() / b.unwrap())
        .collect();
    ratios.sort_by(f64::total_cmp);
    let median = ratios[ratios.len() / 2];
    assert!((median - 2.0).abs() < 0.2, "median SE ratio {median}, {ratios:?}");
    assert!(ratios.iter().all(|r| (1.4..2.8).contains(r)), "{ratios:?}");
}

#[test]
fn baseline_fits_worse_than_full_model() {
    let panel = simulate_panel(&SimulationConfig::new(ParameterVector::reference(), 400, 9)).unwrap();
    let sample = empirical_moments(&panel).unwrap();
    let opts = FitOptions::default();
    let full = fit_from_moments(&ModelDefinition::time_dependent(), &sample, &opts).unwrap();
    let base = fit_from_moments(&ModelDefinition::baseline(), &sample, &opts).unwrap();
    assert!(full.converged && base.converged);
    assert!(base.f_ml > full.f_ml);
    assert!(base.aic() > full.aic());
}

#[test]
fn joint_test_of_trend_covariances() {
    let mut null_truth = ParameterVector::reference();
    null_truth.phi_s2 = 0.0;
    null_truth.phi_iff_s1 = 0.0;
    null_truth.phi_iff_s2 = 0.0;
    null_truth.phi_s1_s2 = 0.0;
    let restricted_opts = FitOptions::default().with_fixed_zero(&DEFAULT_JOINT_TEST);

    // restriction true: no rejection at this seed, statistic non-negative
    let panel = simulate_panel(&SimulationConfig::new(null_truth, 1500, 21)).unwrap();
    let sample = empirical_moments(&panel).unwrap();
    let def = ModelDefinition::time_dependent();
    let full = fit_from_moments(&def, &sample, &FitOptions::default()).unwrap();
    let restricted = fit_from_moments(&def, &sample, &restricted_opts).unwrap();
    let lrt = likelihood_ratio_test(&full, &restricted).unwrap();
    assert_eq!(lrt.df, 4);
    assert!(!lrt.optimizer_issue);
    assert!(lrt.stat >= 0.0);
    assert!(lrt.p > 0.01, "{lrt:?}");
    assert_eq!(restricted.n_free(), 16);
    for name in DEFAULT_JOINT_TEST {
        assert_eq!(restricted.estimate(name), Some(0.0));
        assert_eq!(restricted.se_of(name), None);
    }

    // restriction false at large n: rejected
    let full = fit(ParameterVector::reference(), 5000, 22, &FitOptions::default());
    let panel = simulate_panel(&SimulationConfig::new(ParameterVector::reference(), 5000, 22)).unwrap();
    let restricted = fit_from_moments(&def, &empirical_moments(&panel).unwrap(), &restricted_opts).unwrap();
    let lrt = likelihood_ratio_test(&full, &restricted).unwrap();
    assert!(lrt.p < 1e-3, "{lrt:?}");
}

#[test]
fn wald_tests_use_bonferroni_over_free_parameters() {
    let f = fit(ParameterVector::reference(), 137, 31, &FitOptions::default());
    let tests = wald_tests(&f, 0.05);
    assert_eq!(tests.len(), 20);
    for t in &tests {
        let p = t.p.unwrap();
        assert_eq!(t.significant, Some(p < 0.05));
        assert_eq!(t.significant_bonferroni, Some(p < 0.0025));
    }
    let lambda = tests.iter().find(|t| t.name == "lambda_sl").unwrap();
    assert_eq!(lambda.significant_bonferroni, Some(true));
}
