use mfboot::harness::{
    experiment_seed, generate_series, render_report, run_coverage, true_parameter,
    ExperimentConfig, Method, ModelSpec, ReportFormat, Target, Transfer, CACHE_DIR_ENV,
};
use mfboot::statistic::StatisticSpec;

fn use_test_cache() {
    std::env::set_var(CACHE_DIR_ENV, env!("CARGO_TARGET_TMPDIR"));
}

#[test]
fn gaussian_ar1_truths_match_closed_form() {
    use_test_cache();
    // AR(1), phi = 0.5, unit innovations: mean 0, gamma(1) = phi / (1 - phi^2).
    let model = ModelSpec::model2().with_transfer(Transfer::Identity);
    let mean = true_parameter(&model, &StatisticSpec::Mean).unwrap();
    let g1 = true_parameter(&model, &StatisticSpec::Autocovariance(1)).unwrap();
    assert!(mean.abs() < 3e-3, "mean {mean}");
    assert!((g1 - 2.0 / 3.0).abs() < 5e-3, "gamma(1) {g1}");
}

#[test]
fn ma1_truths_match_closed_form() {
    use_test_cache();
    // MA(1), theta = -0.5: gamma(0) = 1.25, gamma(1) = -0.5, gamma(2) = 0.
    let model = ModelSpec::model1().with_transfer(Transfer::Identity);
    let g0 = true_parameter(&model, &StatisticSpec::Autocovariance(0)).unwrap();
    let g1 = true_parameter(&model, &StatisticSpec::Autocovariance(1)).unwrap();
    let g2 = true_parameter(&model, &StatisticSpec::Autocovariance(2)).unwrap();
    assert!((g0 - 1.25).abs() < 5e-3, "{g0}");
    assert!((g1 + 0.5).abs() < 5e-3, "{g1}");
    assert!(g2.abs() < 5e-3, "{g2}");
}

#[test]
fn simulated_series_are_reproducible() {
    let m = ModelSpec::model3();
    assert_eq!(
        generate_series(&m, 300, 9).unwrap(),
        generate_series(&m, 300, 9).unwrap()
    );
    assert_ne!(
        generate_series(&m, 300, 9).unwrap(),
        generate_series(&m, 300, 10).unwrap()
    );
}

#[test]
fn experiment_seeds_are_distinct() {
    let seeds: std::collections::HashSet<u64> = (0..200)
        .flat_map(|i| [100usize, 200].map(|n| experiment_seed(1, n, i)))
        .collect();
    assert_eq!(seeds.len(), 400);
}

#[test]
fn small_coverage_run_is_sane() {
    use_test_cache();
    let cfg = ExperimentConfig::parse(
        "model = 2\ntransfer = identity\nn = 150\nmethods = ar-sieve, bb\nstatistics = mean\nN = 50\nB = 100\nseed = 3\n",
    )
    .unwrap();
    let report = run_coverage(&cfg).unwrap();
    assert_eq!(report.cells.len(), 2);
    for cell in &report.cells {
        assert_eq!(cell.outcomes.len(), 50);
        assert_eq!(cell.failures(), 0);
        assert!(cell.cvr() > 0.7, "{} {}", cell.method, cell.cvr());
        assert!(cell.mean_width() > 0.0);
    }
    let csv = render_report(&report, ReportFormat::Csv).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.starts_with("method,model,statistic,n,N,B,alpha,cvr,mean_width,failures"));
    let json: serde_json::Value =
        serde_json::from_str(&render_report(&report, ReportFormat::Json).unwrap()).unwrap();
    assert_eq!(json.as_array().unwrap().len(), 2);
}

#[test]
fn config_rejects_unsupported_combinations() {
    let base = "model = 1\nn = 200\nN = 50\n";
    for bad in [
        "methods = bb\nstatistics = pi:l2\n",
        "methods = bb\nstatistics = acov:5\n",
        "methods = mf-ker\nstatistics = spectral:0\n",
        "methods = mf-ker\nstatistics = mean\nbogus = 1\n",
    ] {
        assert!(
            ExperimentConfig::parse(&format!("{base}{bad}")).is_err(),
            "{bad}"
        );
    }
    let ok = ExperimentConfig::parse(&format!(
        "{base}methods = mf-ker, ar-sieve\nstatistics = mean, pi:l1\n"
    ))
    .unwrap();
    assert_eq!(ok.methods, vec![Method::MfKer, Method::ArSieve]);
    assert_eq!(ok.targets.len(), 2);
    assert!(matches!(
        ok.targets[0],
        Target::Statistic(StatisticSpec::Mean)
    ));
}
