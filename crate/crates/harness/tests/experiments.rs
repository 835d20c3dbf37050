use std::path::Path;

use ec2st::ec2st::MlpLearner;
use ec2st_harness::config::DataSpec;
use ec2st_harness::report::{read_curves_csv, write_reports};
use ec2st_harness::{run_experiment, ExperimentConfig, ExperimentKind, Method};

fn quick() -> ExperimentConfig {
    let mut learner = MlpLearner::default();
    learner.hidden = vec![8, 8];
    learner.train.max_epochs = 30;
    learner.train.patience = 10;
    ExperimentConfig {
        replications: 4,
        seed: 5,
        batch_size: 40,
        max_batches: 4,
        learner,
        ..Default::default()
    }
}

#[test]
fn reports_round_trip() {
    let config = ExperimentConfig {
        methods: vec![Method::Ec2st, Method::Sc2st],
        ..quick()
    };
    let out = run_experiment(ExperimentKind::Power, &config, Some(1), Path::new(".")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_reports(&out, &config, dir.path()).unwrap();
    assert_eq!(read_curves_csv(&dir.path().join("curves.csv")).unwrap(), out.curves);

    let runs = std::fs::read_to_string(dir.path().join("runs.jsonl")).unwrap();
    assert_eq!(runs.lines().count(), out.runs.len());
    for line in runs.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["method"].is_string());
    }
    let echoed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("config.json")).unwrap()).unwrap();
    assert_eq!(echoed["kind"], "power");
    assert_eq!(echoed["seed"], 5);
    let svg = std::fs::read_to_string(dir.path().join("curves.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
}

#[test]
fn rates_are_probabilities() {
    let out = run_experiment(ExperimentKind::Power, &quick(), None, Path::new(".")).unwrap();
    let c = out.curve("ec2st").unwrap();
    assert_eq!(c.sample_sizes, vec![120, 160]);
    for (r, s) in c.rates.iter().zip(&c.stderr) {
        assert!((0.0..=1.0).contains(r));
        assert!(*s >= 0.0);
    }
    // the sequential test never un-rejects, so its curve is non-decreasing
    assert!(c.rates.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn single_order_has_no_dispersion() {
    let mut config = quick();
    config.batch_order.shuffles = 1;
    let out = run_experiment(ExperimentKind::BatchOrder, &config, Some(1), Path::new(".")).unwrap();
    assert_eq!(out.summary["max_dispersion_sd"], 0.0);
    assert_eq!(out.summary["max_deviation_from_mean"], 0.0);
    assert_eq!(out.curve("ec2st_order0").unwrap().rates, out.curve("ec2st_order_mean").unwrap().rates);
}

#[test]
fn stopping_time_summaries() {
    let mut config = quick();
    config.stopping_time.batch_sizes = vec![20, 40];
    config.stopping_time.budget = 200;
    let out = run_experiment(ExperimentKind::StoppingTime, &config, Some(1), Path::new(".")).unwrap();
    for bs in [20, 40] {
        let samples = out.summary[&format!("mean_samples_bs{bs}")];
        let censored = out.summary[&format!("censored_fraction_bs{bs}")];
        assert!(samples > 0.0 && samples <= 200.0);
        assert!((0.0..=1.0).contains(&censored));
        assert!(out.curve(&format!("ec2st_bs{bs}")).is_some());
    }
}

#[test]
fn lambda_ablation_variants() {
    let mut config = quick();
    config.lambda_ablation.lambdas = vec![0.2, 0.8];
    let out = run_experiment(ExperimentKind::LambdaAblation, &config, Some(1), Path::new(".")).unwrap();
    for name in ["ec2st_lambda=0.2", "ec2st_lambda=0.8", "ec2st_adaptive"] {
        assert!(out.curve(name).is_some(), "missing {name}");
    }
}

#[test]
fn type1_rejects_alternative_data() {
    let config = ExperimentConfig {
        data: DataSpec::Blob(Default::default()),
        ..quick()
    };
    let err = run_experiment(ExperimentKind::Type1, &config, Some(1), Path::new(".")).unwrap_err();
    assert_eq!(err.code(), "config");
}

#[test]
fn invalid_configs() {
    let mut config = quick();
    config.replications = 0;
    assert!(config.validate(ExperimentKind::Power).is_err());

    let mut config = quick();
    config.sample_sizes = Some(vec![100, 50]);
    assert!(config.validate(ExperimentKind::Power).is_err());

    let mut config = quick();
    config.kind = Some(ExperimentKind::Type1);
    assert!(config.validate(ExperimentKind::Power).is_err());

    assert!(ExperimentConfig::from_toml("replications = 3\nunknown_key = 1\n").is_err());
    let parsed = ExperimentConfig::from_toml("replications = 3\n[data]\nkind = \"gaussian\"\n").unwrap();
    assert_eq!(parsed.replications, 3);
    assert!(matches!(parsed.data, DataSpec::Gaussian(_)));
}
