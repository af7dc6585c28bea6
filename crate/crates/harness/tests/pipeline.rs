use std::fs;
use std::path::Path;

use proptest::prelude::*;

use rent_core::data::NoiseKind;
use rent_core::risk::{Budget, DwsConfig, RentConfig, SamplingStrategy, Strategy};
use rent_harness::experiment::Manifest;
use rent_harness::{
    alpha_sweep, analyze, budget_sweep, run_experiment, DataSource, ExperimentConfig,
    TransitionSource,
};

fn tiny(out: &Path) -> ExperimentConfig {
    ExperimentConfig {
        data: DataSource::Mixture {
            num_classes: 3,
            dim: 4,
            train: 600,
            test: 200,
            separation: 3.0,
        },
        noise: Some(NoiseKind::Symmetric { rate: 0.3 }),
        epochs: 3,
        batch_size: 32,
        seeds: vec![0, 1],
        out_dir: out.to_path_buf(),
        ..ExperimentConfig::default()
    }
}

#[test]
fn run_writes_the_documented_layout() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny(tmp.path());
    let report = run_experiment(&cfg).unwrap();
    assert!(report.all_completed());
    assert_eq!(report.dir, tmp.path().join(cfg.hash()));
    assert!(report.dir.join("config.json").is_file());

    let manifest: Manifest =
        serde_json::from_str(&fs::read_to_string(report.dir.join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest.config_hash, cfg.hash());
    assert!(manifest.seeds.iter().all(|s| s.completed));

    for seed in &cfg.seeds {
        let d = report.dir.join(seed.to_string());
        for f in [
            "metrics.csv",
            "histogram.csv",
            "oracle_histogram.csv",
            "transition.csv",
            "model.ckpt",
            "result.json",
        ] {
            assert!(d.join(f).is_file(), "missing {f}");
        }
        let metrics = rent_harness::io::read_metrics(&d.join("metrics.csv")).unwrap();
        assert_eq!(metrics.len(), cfg.epochs);
        let model = rent_harness::io::read_checkpoint(&d.join("model.ckpt")).unwrap();
        assert_eq!(model.input_dim(), 4);
    }

    let summary = analyze(&report.dir).unwrap();
    assert_eq!(summary.seeds.len(), 2);
    assert!(report.dir.join("summary.csv").is_file());
    let mean = report.final_test_accuracies().iter().sum::<f64>() / 2.0;
    assert!((summary.mean_final_test_acc - mean).abs() < 1e-12);
}

#[test]
fn loaded_config_reproduces_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny(tmp.path());
    let first = run_experiment(&cfg).unwrap();
    let loaded = ExperimentConfig::load(&first.dir.join("config.json")).unwrap();
    assert_eq!(loaded, cfg);
    let second = run_experiment(&ExperimentConfig {
        out_dir: tmp.path().join("again"),
        ..loaded
    })
    .unwrap();
    assert_eq!(first.final_test_accuracies(), second.final_test_accuracies());
}

#[test]
fn failing_seeds_are_recorded_not_fatal() {
    let tmp = tempfile::tempdir().unwrap();
    let t_path = tmp.path().join("t.csv");
    // two classes against three-class data
    fs::write(&t_path, "0.9,0.1\n0.1,0.9\n").unwrap();
    let cfg = ExperimentConfig {
        transition: TransitionSource::File { path: t_path },
        ..tiny(tmp.path())
    };
    let report = run_experiment(&cfg).unwrap();
    assert!(!report.all_completed());
    assert_eq!(report.failures.len(), 2);
    let manifest: Manifest =
        serde_json::from_str(&fs::read_to_string(report.dir.join("manifest.json")).unwrap())
            .unwrap();
    assert!(manifest
        .seeds
        .iter()
        .all(|s| !s.completed && s.error.is_some()));
}

#[test]
fn clean_separable_data_is_learned() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        data: DataSource::Mixture {
            num_classes: 3,
            dim: 4,
            train: 2_000,
            test: 500,
            separation: 10.0,
        },
        noise: Some(NoiseKind::Symmetric { rate: 0.0 }),
        risk: Strategy::Ce,
        epochs: 10,
        seeds: vec![0],
        out_dir: tmp.path().to_path_buf(),
        ..ExperimentConfig::default()
    };
    let report = run_experiment(&cfg).unwrap();
    assert!(report.results[0].final_test_acc > 0.99);
}

#[test]
fn every_risk_and_transition_source_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let risks = [
        Strategy::Ce,
        Strategy::Forward,
        Strategy::Backward,
        Strategy::Reweight,
        Strategy::Dws(DwsConfig::default()),
        Strategy::Rent(RentConfig {
            budget: Budget::Count(16),
            strategy: SamplingStrategy::Batch,
        }),
        Strategy::Rent(RentConfig {
            budget: Budget::Ratio(0.5),
            strategy: SamplingStrategy::Global,
        }),
        Strategy::Snl { sigma: 0.1 },
    ];
    let sources = [
        TransitionSource::True,
        TransitionSource::Corrupted { eps: 0.1 },
        TransitionSource::Anchor {
            fraction: 0.05,
            warmup_epochs: 1,
        },
    ];
    for risk in risks {
        for transition in sources.clone() {
            let cfg = ExperimentConfig {
                risk,
                transition: transition.clone(),
                seeds: vec![0],
                epochs: 1,
                ..tiny(tmp.path())
            };
            let report = run_experiment(&cfg).unwrap();
            assert!(report.all_completed(), "{risk:?} {transition:?}: {:?}", report.failures);
            let r = &report.results[0];
            assert!(r.final_test_acc.is_finite());
            if matches!(transition, TransitionSource::True) {
                assert_eq!(r.transition_error, Some(0.0));
            }
        }
    }
}

#[test]
fn alpha_sweep_adds_both_endpoints() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        risk: Strategy::Dws(DwsConfig::default()),
        seeds: vec![0],
        epochs: 1,
        ..tiny(tmp.path())
    };
    let table = alpha_sweep(&cfg, &[0.1, 1.0, 100.0]).unwrap();
    assert_eq!(table.rows.len(), 5);
    assert!(table.all_completed());
    assert_eq!(table.rows[3].label, "rw");
    assert_eq!(table.rows[4].label, "rent");
    let path = tmp.path().join("sweep.csv");
    table.write(&path).unwrap();
    assert_eq!(fs::read_to_string(&path).unwrap().lines().count(), 6);
}

#[test]
fn small_budgets_complete_every_epoch() {
    let tmp = tempfile::tempdir().unwrap();
    for strategy in [SamplingStrategy::Batch, SamplingStrategy::GlobalClass] {
        let cfg = ExperimentConfig {
            risk: Strategy::Rent(RentConfig {
                budget: Budget::Ratio(0.25),
                strategy,
            }),
            seeds: vec![0],
            ..tiny(tmp.path())
        };
        let table = budget_sweep(&cfg, &[0.25]).unwrap();
        assert!(table.all_completed());
        let run = tmp.path().join(&table.rows[0].config_hash);
        let metrics = rent_harness::io::read_metrics(&run.join("0").join("metrics.csv")).unwrap();
        assert_eq!(metrics.len(), cfg.epochs);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn config_json_round_trips(
        tau in 0.0..0.7f64,
        alpha in 0.01..1e3f64,
        ratio in 0.05..2.0f64,
        epochs in 1usize..500,
        seeds in proptest::collection::vec(any::<u64>(), 1..5),
        dws in any::<bool>(),
    ) {
        let risk = if dws {
            Strategy::Dws(DwsConfig { alpha, weight_draws: 2 })
        } else {
            Strategy::Rent(RentConfig { budget: Budget::Ratio(ratio), strategy: SamplingStrategy::GlobalClass })
        };
        let cfg = ExperimentConfig {
            noise: Some(NoiseKind::Symmetric { rate: tau }),
            risk,
            epochs,
            seeds: seeds.clone(),
            ..ExperimentConfig::default()
        };
        let back: ExperimentConfig = serde_json::from_str(&cfg.to_json()).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.hash(), cfg.hash());

        let other_seeds = ExperimentConfig { seeds: vec![seeds[0].wrapping_add(1)], workers: Some(3), ..cfg.clone() };
        prop_assert_eq!(other_seeds.hash(), cfg.hash());
        let other_epochs = ExperimentConfig { epochs: epochs + 1, ..cfg.clone() };
        prop_assert_ne!(other_epochs.hash(), cfg.hash());
    }
}
