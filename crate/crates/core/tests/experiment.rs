use std::fs;

use cggd::experiment::{
    load_and_split, prepare, read_csv, run_experiment, run_prepared, synthetic_dataset,
    DatasetSource, DatasetSpec, ExperimentConfig, Normalizer, RawSplits,
};
use cggd::scalar_lab::{
    classify_attractors, default_cggd_schedule, default_fuzzy_schedule, linspace, polynomial_problem,
    ScalarMethod, ScalarSettings, WORKING_INTERVAL,
};
use cggd::{satisfaction_ratio, Error, Method, MlpModel, StepSchedule, TrainConfig};

fn small_config(methods: Vec<Method>, seeds: Vec<u64>, epochs: usize) -> ExperimentConfig {
    let mut train = TrainConfig::default();
    train.optimizer.max_epochs = epochs;
    train.optimizer.schedule = StepSchedule::Fixed { eta: 0.01 };
    ExperimentConfig {
        dataset: DatasetSource::Synthetic {
            rows: 160,
            seed: 11,
            split_sizes: [80, 40, 40],
        },
        hidden_layers: vec![8],
        train,
        methods,
        seeds,
    }
}

fn synthetic_splits() -> RawSplits {
    let (data, _) = synthetic_dataset(120, 5).unwrap();
    RawSplits {
        train: data.select(&(0..60).collect::<Vec<_>>()),
        val: data.select(&(60..90).collect::<Vec<_>>()),
        test: data.select(&(90..120).collect::<Vec<_>>()),
    }
}

#[test]
fn normalizers_ignore_validation_and_test_values() {
    let raw = synthetic_splits();
    let before = prepare(&raw).unwrap();

    let mut poisoned = raw.clone();
    for split in [&mut poisoned.val, &mut poisoned.test] {
        let (inputs, targets) = (split.inputs.data_mut(), split.targets.data_mut());
        inputs.iter_mut().for_each(|v| *v = *v * 1e3 + 7.0);
        targets.iter_mut().for_each(|v| *v = -*v * 50.0);
    }
    let after = prepare(&poisoned).unwrap();
    assert_eq!(before.inputs, after.inputs);
    assert_eq!(before.targets, after.targets);
    assert_eq!(before.data.train, after.data.train);

    let refit = Normalizer::fit_zscore(&raw.train.inputs).unwrap();
    assert_eq!(refit, before.inputs);
}

#[test]
fn reruns_produce_identical_reports() {
    let cfg = small_config(Method::ALL.to_vec(), vec![0, 1], 30);
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        run_experiment(&cfg).unwrap().write_artifacts(d.path()).unwrap();
    }
    for name in ["report.json", "report.csv", "cggd_seed1_history.csv", "fuzzy_seed0_final.json"] {
        let a = fs::read(dirs[0].path().join(name)).unwrap();
        let b = fs::read(dirs[1].path().join(name)).unwrap();
        assert!(a == b, "{name} differs between runs");
    }
}

#[test]
fn final_history_line_matches_saved_checkpoint() {
    let cfg = small_config(vec![Method::Cggd, Method::Baseline], vec![3], 25);
    let dir = tempfile::tempdir().unwrap();
    let run = run_experiment(&cfg).unwrap();
    run.write_artifacts(dir.path()).unwrap();

    let (raw, cs) = cggd::experiment::materialize(&cfg.dataset).unwrap();
    let prepared = prepare(&raw).unwrap();
    for stem in ["cggd_seed3", "baseline_seed3"] {
        let model = MlpModel::load(&dir.path().join(format!("{stem}_final.json"))).unwrap();
        let pred = model.predict(&prepared.data.train.inputs).unwrap();
        let raw_pred = prepared.data.output_scale.to_raw(&pred).unwrap();
        let sr = satisfaction_ratio(&cs, &prepared.data.train.raw_inputs, &raw_pred).unwrap();

        let history = fs::read_to_string(dir.path().join(format!("{stem}_history.csv"))).unwrap();
        let last = history.lines().rfind(|l| l.contains(",train,")).unwrap();
        let logged: f64 = last.split(',').nth(3).unwrap().parse().unwrap();
        assert!((logged - sr).abs() <= 1e-12, "{stem}: history {logged}, checkpoint {sr}");
    }
}

#[test]
fn every_method_and_seed_is_reported() {
    let cfg = small_config(Method::ALL.to_vec(), vec![0, 1, 2, 3], 10);
    let run = run_experiment(&cfg).unwrap();
    assert_eq!(run.report.runs.len(), 12);
    assert_eq!(run.report.aggregates.len(), 3);
    for agg in &run.report.aggregates {
        assert_eq!(agg.runs, 4);
        assert_eq!(agg.diverged, 0);
        assert!(!agg.failed);
    }
    let order: Vec<_> = run.report.runs.iter().map(|r| (r.method, r.seed)).collect();
    assert_eq!(order[0], (Method::ALL[0], 0));
    assert_eq!(order[11], (Method::ALL[2], 3));
}

#[test]
fn single_seed_has_zero_spread() {
    let raw = synthetic_splits();
    let prepared = prepare(&raw).unwrap();
    let (_, cs) = synthetic_dataset(10, 0).unwrap();
    let cfg = small_config(vec![Method::Cggd], vec![9], 10);
    let run = run_prepared(&prepared, &cs, &[4], &[Method::Cggd], &[9], &cfg.train, "unit").unwrap();
    let agg = run.report.aggregate(Method::Cggd).unwrap();
    assert_eq!(agg.test_mse.unwrap().std, 0.0);
    assert_eq!(agg.test_sr.unwrap().std, 0.0);
}

#[test]
fn ingestion_errors_name_row_and_column() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    fs::write(&path, "a,b,y\n1,2,3\n4,oops,6\n").unwrap();
    let cols = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    match read_csv(&path, &cols(&["a", "b"]), &cols(&["y"])) {
        Err(Error::Ingestion { row, column, .. }) => {
            assert_eq!(row, 2);
            assert_eq!(column, "b");
        }
        other => panic!("expected an ingestion error, got {other:?}"),
    }
    match read_csv(&path, &cols(&["a", "missing"]), &cols(&["y"])) {
        Err(Error::Ingestion { column, .. }) => assert_eq!(column, "missing"),
        other => panic!("expected an ingestion error, got {other:?}"),
    }

    let spec = DatasetSpec {
        csv_path: path,
        input_columns: cols(&["a"]),
        target_columns: cols(&["y"]),
        constraint_file: None,
        default_bounds: false,
        split_sizes: [1, 1, 1],
        shuffle_seed: 0,
        head_count: None,
    };
    assert!(load_and_split(&spec).is_err());
}

#[test]
fn attractors_are_stable_under_grid_refinement() {
    let p = polynomial_problem();
    let settings = ScalarSettings::default();
    for (method, schedule) in [
        (ScalarMethod::Fuzzy, default_fuzzy_schedule()),
        (ScalarMethod::Cggd, default_cggd_schedule(&p, &settings)),
    ] {
        let locate = |n| {
            let starts = linspace(WORKING_INTERVAL.0, WORKING_INTERVAL.1, n);
            classify_attractors(method, &p, &starts, &schedule, &settings)
                .unwrap()
                .stable_locations()
        };
        let (coarse, fine) = (locate(64), locate(128));
        assert_eq!(coarse.len(), fine.len(), "{method}: {coarse:?} vs {fine:?}");
        for (a, b) in coarse.iter().zip(&fine) {
            assert!((a - b).abs() <= 1e-3, "{method}: {a} vs {b}");
        }
    }
}
