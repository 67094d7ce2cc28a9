use das_lab::data::SplitSizes;
use das_lab::engine::{load_split, run_experiment, DatasetSource, ExperimentConfig};
use das_lab::metrics::{read_histogram_csv, read_selections_csv, read_steps_csv, write_run_csv};
use das_lab::strategies::StrategyKind;

fn small(strategy: StrategyKind) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::preset("desk").unwrap();
    cfg.strategy = strategy;
    cfg.dataset = DatasetSource::Synthetic;
    cfg.model = "mlp".into();
    cfg.split = SplitSizes::new(300, 60, 60);
    cfg.total_steps = 2;
    cfg.warmup_steps = 1;
    cfg.batch_per_step = 7;
    cfg.epochs_per_step = 1;
    cfg.checkpoint_every = 0;
    cfg
}

#[test]
fn csv_round_trip_is_exact() {
    let cfg = small(StrategyKind::Das);
    let log = run_experiment(&cfg).unwrap();
    let split = load_split(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_run_csv(&log, &split.train_pool, dir.path()).unwrap();

    let steps = read_steps_csv(&dir.path().join("steps.csv")).unwrap();
    assert_eq!(steps.len(), 2);
    for (row, r) in steps.iter().zip(&log.steps) {
        assert_eq!(row.val_acc, r.val_acc);
        assert_eq!(row.test_acc, r.test_acc);
        assert_eq!(row.train_seconds, r.train_seconds);
        assert_eq!(row.select_seconds, r.select_seconds);
        let rates = r.per_class.rates();
        assert_eq!(row.class_acc.len(), rates.len());
        for (a, b) in row.class_acc.iter().zip(&rates) {
            assert!(a == b || (a.is_nan() && b.is_nan()));
        }
    }
    let selections = read_selections_csv(&dir.path().join("selections.csv")).unwrap();
    assert_eq!(selections.len(), 14);
    for (row, rec) in selections.iter().zip(log.steps.iter().flat_map(|s| &s.selections)) {
        assert_eq!(row.index, rec.chosen_index);
        assert_eq!(row.score, rec.score);
        assert_eq!(row.strategy, rec.strategy.as_str());
        assert_eq!(row.true_class, split.train_pool[row.index].label);
    }
    let hist = read_histogram_csv(&dir.path().join("histogram.csv")).unwrap();
    assert_eq!(hist.counts.iter().sum::<usize>(), 14);
    assert!(!dir.path().join("timings.csv").exists());
}

#[test]
fn serial_runs_keep_timings_apart() {
    let mut cfg = small(StrategyKind::Coreset);
    cfg.serial = true;
    let log = run_experiment(&cfg).unwrap();
    let split = load_split(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_run_csv(&log, &split.train_pool, dir.path()).unwrap();
    let steps = read_steps_csv(&dir.path().join("steps.csv")).unwrap();
    assert!(steps.iter().all(|s| s.train_seconds == 0.0 && s.select_seconds == 0.0));
    let timings = std::fs::read_to_string(dir.path().join("timings.csv")).unwrap();
    assert_eq!(timings.lines().count(), 3);
}

#[test]
fn empty_log_is_refused() {
    let cfg = small(StrategyKind::Random);
    let mut log = run_experiment(&cfg).unwrap();
    log.steps.clear();
    let dir = tempfile::tempdir().unwrap();
    assert!(write_run_csv(&log, &[], dir.path()).is_err());
}

#[test]
fn config_text_round_trips() {
    let mut cfg = small(StrategyKind::Coreset);
    cfg.dropout = Some(0.3);
    cfg.synthetic_per_class = Some(250);
    let back = ExperimentConfig::from_text(&cfg.to_text()).unwrap();
    assert_eq!(back, cfg);
}
