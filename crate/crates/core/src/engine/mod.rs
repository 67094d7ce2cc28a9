//! The batch-incremental active-learning loop.
//!
//! Every step queries `n` items (at random during the warm-up steps, with
//! the configured strategy afterwards), labels them through the simulated
//! oracle, trains both models for `m` epochs on top of their previous
//! weights and evaluates the first model on the validation and test sets.

mod config;
mod learner;

use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{
    load_cifar10_dir, split_dataset, standardize, synth_placeholder, synth_two_class, Dataset, DatasetSplit,
    ImageShape, LabeledExample, CIFAR_CLASSES, SYNTH_SHAPE,
};
use crate::error::{Error, Result};
use crate::metrics::{class_histogram, per_class_accuracy, ClassHistogram, PerClassAccuracy};
use crate::nn::{write_checkpoint, Layer, ModelSpec, Network};
use crate::strategies::{
    das_select_batch, kcenter_greedy_scored, random_select, DasOptions, OutputSource, PoolState,
    SelectionRecord, StrategyKind,
};

pub use config::{derive_seeds, parse_entries, DatasetSource, ExperimentConfig, PRESETS};
pub use learner::{Learner, NetLearner, StubLearner, TrainContext, TrainStats};

/// Geometry of the placeholder images used by dry runs without a dataset.
pub const PLACEHOLDER_SHAPE: ImageShape = ImageShape::new(3, 4, 4);

/// Ground-truth labels of the train pool, handed out one query at a time.
#[derive(Clone, Debug)]
pub struct SimulatedOracle {
    labels: Vec<usize>,
    cost: u64,
}

impl SimulatedOracle {
    pub fn new(pool: &[LabeledExample]) -> Self {
        Self {
            labels: pool.iter().map(|e| e.label).collect(),
            cost: 0,
        }
    }

    /// Returns the label of train-pool item `index`; each call costs one unit.
    pub fn label(&mut self, index: usize) -> Result<usize> {
        let label = *self
            .labels
            .get(index)
            .ok_or_else(|| Error::structural(format!("index {index} outside the train pool of {}", self.labels.len())))?;
        self.cost += 1;
        Ok(label)
    }

    pub fn cost(&self) -> u64 {
        self.cost
    }
}

/// Outcome of one step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub step: usize,
    pub labeled_count: usize,
    pub val_acc: f64,
    pub test_acc: f64,
    pub per_class: PerClassAccuracy,
    pub selections: Vec<SelectionRecord>,
    pub train_seconds: f64,
    pub select_seconds: f64,
}

#[derive(Clone, Debug)]
pub struct ExperimentLog {
    pub config: ExperimentConfig,
    pub num_classes: usize,
    pub steps: Vec<StepResult>,
    /// Ground-truth classes of the final labeled set.
    pub histogram: ClassHistogram,
    pub label_cost: u64,
    /// Why the run ended before `total_steps`, if it did.
    pub early_stop: Option<String>,
}

/// Both models' accuracy snapshot.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub val_acc: f64,
    pub test_acc: f64,
    pub per_class: PerClassAccuracy,
}

/// Loads or generates the configured dataset and splits it.
pub fn load_split(config: &ExperimentConfig) -> Result<DatasetSplit> {
    let dataset = match &config.dataset {
        DatasetSource::Cifar10(dir) => load_cifar10_dir(dir)?,
        DatasetSource::Synthetic => {
            let per_class = config.synthetic_per_class.unwrap_or(config.split.total().div_ceil(2));
            let examples = synth_two_class(per_class, config.synthetic_noise, config.data_seed)?;
            Dataset::new(SYNTH_SHAPE, 2, examples)?
        }
        DatasetSource::Placeholder => Dataset::new(
            PLACEHOLDER_SHAPE,
            CIFAR_CLASSES,
            synth_placeholder(config.split.total(), CIFAR_CLASSES, PLACEHOLDER_SHAPE, config.data_seed),
        )?,
    };
    let mut split = split_dataset(&dataset, config.split, config.split_seed)?;
    if config.standardize {
        standardize(&mut split);
    }
    Ok(split)
}

/// Resolves the model spec of a config against a dataset geometry.
pub fn model_spec(config: &ExperimentConfig, shape: ImageShape, num_classes: usize) -> Result<ModelSpec> {
    let mut spec = ModelSpec::resolve(&config.model, shape, num_classes)?;
    if let Some(rate) = config.dropout {
        for layer in &mut spec.layers {
            if let Layer::Dropout { rate: r } = layer {
                *r = rate;
            }
        }
        spec.activations()?;
    }
    Ok(spec)
}

fn build_learner(config: &ExperimentConfig, spec: &ModelSpec, seed: u64) -> Result<Box<dyn Learner>> {
    if config.dry_run {
        return Ok(Box::new(StubLearner::new(seed, spec.num_classes)));
    }
    let net = Network::init(spec.clone(), seed)?;
    Ok(Box::new(NetLearner::new(net, config.learning_rate, seed)))
}

/// Eval-mode outputs of one frozen learner, memoized by pool index for the
/// duration of one selection phase.
struct FrozenOutputs<'a> {
    learner: &'a dyn Learner,
    pool: &'a [LabeledExample],
    eval_batch_size: usize,
    cache: Mutex<HashMap<usize, Vec<f64>>>,
}

impl<'a> FrozenOutputs<'a> {
    fn new(learner: &'a dyn Learner, pool: &'a [LabeledExample], eval_batch_size: usize) -> Self {
        Self {
            learner,
            pool,
            eval_batch_size,
            cache: Mutex::new(HashMap::new()),
        }
    }
}

impl OutputSource for FrozenOutputs<'_> {
    fn outputs(&self, indices: &[usize]) -> Result<Vec<Vec<f64>>> {
        let mut cache = self.cache.lock().expect("cache lock");
        let mut missing: Vec<usize> = indices.iter().copied().filter(|i| !cache.contains_key(i)).collect();
        missing.sort_unstable();
        missing.dedup();
        if !missing.is_empty() {
            let examples: Vec<&LabeledExample> = missing.iter().map(|&i| &self.pool[i]).collect();
            let rows = self.learner.logits(&examples, self.eval_batch_size)?;
            cache.extend(missing.into_iter().zip(rows));
        }
        Ok(indices.iter().map(|i| cache[i].clone()).collect())
    }
}

/// State of a running experiment.
pub struct Experiment {
    config: ExperimentConfig,
    split: DatasetSplit,
    pool: PoolState,
    oracle: SimulatedOracle,
    model1: Box<dyn Learner>,
    model2: Box<dyn Learner>,
    selection_rng: ChaCha8Rng,
    ctx: TrainContext,
    step: usize,
    threads: usize,
    workers: rayon::ThreadPool,
}

impl Experiment {
    pub fn new(config: ExperimentConfig, split: DatasetSplit) -> Result<Self> {
        config.validate()?;
        if split.train_pool.len() < config.batch_per_step * config.total_steps {
            return Err(Error::config("train pool smaller than the labels the run needs"));
        }
        let spec = model_spec(&config, split.shape, split.num_classes)?;
        let augment = config.augment(split.shape.height);
        augment.validate(split.shape)?;
        let model1 = build_learner(&config, &spec, config.model1_seed)?;
        let model2 = build_learner(&config, &spec, config.model2_seed)?;
        let threads = if config.serial {
            1
        } else {
            config
                .threads
                .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        };
        let workers = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::config(format!("cannot start worker pool: {e}")))?;
        Ok(Self {
            pool: PoolState::new(split.train_pool.len()),
            oracle: SimulatedOracle::new(&split.train_pool),
            selection_rng: ChaCha8Rng::seed_from_u64(config.selection_seed),
            ctx: TrainContext {
                step: 0,
                shape: split.shape,
                augment,
                minibatch_size: config.minibatch_size,
                eval_batch_size: config.eval_batch_size,
            },
            step: 0,
            threads,
            workers,
            model1,
            model2,
            split,
            config,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn split(&self) -> &DatasetSplit {
        &self.split
    }

    pub fn pool(&self) -> &PoolState {
        &self.pool
    }

    pub fn label_cost(&self) -> u64 {
        self.oracle.cost()
    }

    /// Index of the next step to run.
    pub fn current_step(&self) -> usize {
        self.step
    }

    pub fn models(&self) -> (&dyn Learner, &dyn Learner) {
        (self.model1.as_ref(), self.model2.as_ref())
    }

    pub fn models_mut(&mut self) -> (&mut dyn Learner, &mut dyn Learner) {
        (self.model1.as_mut(), self.model2.as_mut())
    }

    /// Strategy in force for the current step.
    pub fn active_strategy(&self) -> StrategyKind {
        if self.step < self.config.warmup_steps {
            StrategyKind::Random
        } else {
            self.config.strategy
        }
    }

    /// Chooses the current step's `n` items without touching the pool.
    pub fn select(&mut self) -> Result<Vec<SelectionRecord>> {
        let n = self.config.batch_per_step;
        let step = self.step;
        if self.pool.unlabeled().len() < n {
            return Err(Error::PoolExhausted(format!(
                "step {step} needs {n} items, {} left",
                self.pool.unlabeled().len()
            )));
        }
        let strategy = self.active_strategy();
        let pool = &self.pool;
        let train = &self.split.train_pool;
        let rng = &mut self.selection_rng;
        let (m1, m2) = (self.model1.as_ref(), self.model2.as_ref());
        let eval_batch = self.config.eval_batch_size;
        let opts = DasOptions {
            pool_sample_size: self.config.pool_sample_size,
            distance: self.config.distance,
        };
        self.workers.install(|| match strategy {
            StrategyKind::Random => Ok(random_select(pool, n, rng)?
                .into_iter()
                .map(|chosen_index| SelectionRecord {
                    step,
                    chosen_index,
                    strategy,
                    score: None,
                })
                .collect()),
            StrategyKind::Das => {
                let o1 = FrozenOutputs::new(m1, train, eval_batch);
                let o2 = FrozenOutputs::new(m2, train, eval_batch);
                das_select_batch(&o1, &o2, pool, n, step, &opts, rng)
            }
            StrategyKind::Coreset => {
                let unl: Vec<&LabeledExample> = pool.unlabeled().iter().map(|&i| &train[i]).collect();
                let lab: Vec<&LabeledExample> = pool.labeled().iter().map(|&i| &train[i]).collect();
                let points = m1.embed(&unl, eval_batch)?;
                let centers = m1.embed(&lab, eval_batch)?;
                Ok(kcenter_greedy_scored(&points, &centers, n)?
                    .into_iter()
                    .map(|(p, d)| SelectionRecord {
                        step,
                        chosen_index: pool.unlabeled()[p],
                        strategy,
                        score: d.is_finite().then_some(d),
                    })
                    .collect())
            }
        })
    }

    /// Queries the oracle for every record and moves the items into S.
    pub fn label(&mut self, records: &[SelectionRecord]) -> Result<()> {
        let indices: Vec<usize> = records.iter().map(|r| r.chosen_index).collect();
        for &i in &indices {
            if !self.pool.is_unlabeled(i) {
                return Err(Error::structural(format!("index {i} was already queried")));
            }
        }
        for &i in &indices {
            self.oracle.label(i)?;
        }
        self.pool.mark_labeled(&indices)
    }

    /// Trains both models for `m` epochs on S, concurrently unless serial.
    pub fn train(&mut self) -> Result<(TrainStats, TrainStats)> {
        let epochs = self.config.epochs_per_step;
        let ctx = TrainContext { step: self.step, ..self.ctx };
        let train = &self.split.train_pool;
        let labeled = self.pool.labeled();
        let (m1, m2) = (&mut self.model1, &mut self.model2);
        if self.threads >= 2 {
            std::thread::scope(|s| {
                let h = s.spawn(|| m2.train_epochs(train, labeled, epochs, &ctx));
                let r1 = m1.train_epochs(train, labeled, epochs, &ctx);
                let r2 = h.join().expect("trainer thread panicked");
                Ok((r1?, r2?))
            })
        } else {
            let r1 = m1.train_epochs(train, labeled, epochs, &ctx)?;
            let r2 = m2.train_epochs(train, labeled, epochs, &ctx)?;
            Ok((r1, r2))
        }
    }

    /// Accuracy of model 1 on the validation and test sets.
    pub fn evaluate(&self) -> Result<Evaluation> {
        let k = self.split.num_classes;
        let eval_batch = self.config.eval_batch_size;
        let predict = |set: &[LabeledExample]| -> Result<Vec<usize>> {
            let refs: Vec<&LabeledExample> = set.iter().collect();
            let logits = self.workers.install(|| self.model1.logits(&refs, eval_batch))?;
            Ok(logits.iter().map(|row| crate::nn::argmax(row)).collect())
        };
        let labels = |set: &[LabeledExample]| set.iter().map(|e| e.label).collect::<Vec<_>>();
        let val_pred = predict(&self.split.validation)?;
        let test_pred = predict(&self.split.test)?;
        let val = per_class_accuracy(&val_pred, &labels(&self.split.validation), k);
        let test = per_class_accuracy(&test_pred, &labels(&self.split.test), k);
        Ok(Evaluation {
            val_acc: val.overall(),
            test_acc: test.overall(),
            per_class: test,
        })
    }

    /// Runs one full step: select, label, train, evaluate, checkpoint.
    pub fn run_step(&mut self) -> Result<StepResult> {
        let t0 = Instant::now();
        let selections = self.select()?;
        let select_seconds = t0.elapsed().as_secs_f64();
        self.label(&selections)?;
        let t1 = Instant::now();
        self.train()?;
        let train_seconds = t1.elapsed().as_secs_f64();
        let eval = self.evaluate()?;
        let result = StepResult {
            step: self.step,
            labeled_count: self.pool.labeled().len(),
            val_acc: eval.val_acc,
            test_acc: eval.test_acc,
            per_class: eval.per_class,
            selections,
            train_seconds,
            select_seconds,
        };
        self.maybe_checkpoint()?;
        self.step += 1;
        Ok(result)
    }

    fn maybe_checkpoint(&self) -> Result<()> {
        let every = self.config.checkpoint_every;
        let Some(dir) = &self.config.checkpoint_dir else { return Ok(()) };
        if every == 0 || !(self.step + 1).is_multiple_of(every) {
            return Ok(());
        }
        let step_dir = dir.join(format!("step_{:04}", self.step));
        for (name, model) in [("model1.ckpt", &self.model1), ("model2.ckpt", &self.model2)] {
            if let Some(ck) = model.checkpoint() {
                std::fs::create_dir_all(&step_dir).map_err(|e| Error::io(&step_dir, e))?;
                write_checkpoint(&step_dir.join(name), &ck)?;
            }
        }
        Ok(())
    }

    /// Runs the remaining steps. Pool exhaustion ends the run early with a
    /// partial log; any other error is returned.
    pub fn run(mut self, mut on_step: impl FnMut(&StepResult)) -> Result<ExperimentLog> {
        let mut steps = Vec::with_capacity(self.config.total_steps);
        let mut early_stop = None;
        while self.step < self.config.total_steps {
            match self.run_step() {
                Ok(r) => {
                    on_step(&r);
                    steps.push(r);
                }
                Err(Error::PoolExhausted(msg)) => {
                    early_stop = Some(msg);
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        let labeled: Vec<usize> = self.pool.labeled().to_vec();
        Ok(ExperimentLog {
            histogram: class_histogram(&labeled, &self.split.train_pool, self.split.num_classes),
            num_classes: self.split.num_classes,
            label_cost: self.oracle.cost(),
            steps,
            early_stop,
            config: self.config,
        })
    }
}

/// Loads the dataset, runs every step and returns the log.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentLog> {
    run_experiment_with(config, |_| {})
}

pub fn run_experiment_with(config: &ExperimentConfig, on_step: impl FnMut(&StepResult)) -> Result<ExperimentLog> {
    config.validate()?;
    let split = load_split(config)?;
    Experiment::new(config.clone(), split)?.run(on_step)
}

/// Convenience for callers that only need the checkpoint directory layout.
pub fn checkpoint_path(dir: &Path, step: usize, model: usize) -> std::path::PathBuf {
    dir.join(format!("step_{step:04}")).join(format!("model{model}.ckpt"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(strategy: StrategyKind) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::preset("desk").unwrap();
        cfg.strategy = strategy;
        cfg.dataset = DatasetSource::Synthetic;
        cfg.split = crate::data::SplitSizes::new(200, 40, 40);
        cfg.model = "mlp".into();
        cfg.total_steps = 4;
        cfg.warmup_steps = 1;
        cfg.batch_per_step = 10;
        cfg.epochs_per_step = 2;
        cfg.pool_sample_size = 64;
        cfg.learning_rate = 1e-3;
        cfg.serial = true;
        cfg
    }

    #[test]
    fn oracle_counts_every_call() {
        let pool: Vec<LabeledExample> = [3, 1].iter().map(|&l| LabeledExample::new(vec![], l)).collect();
        let mut oracle = SimulatedOracle::new(&pool);
        assert_eq!(oracle.label(0).unwrap(), 3);
        assert_eq!(oracle.label(0).unwrap(), 3);
        assert_eq!(oracle.cost(), 2);
        assert!(matches!(oracle.label(2), Err(Error::Structural(_))));
        assert_eq!(oracle.cost(), 2);
    }

    #[test]
    fn warmup_steps_query_at_random() {
        let cfg = synthetic(StrategyKind::Das);
        let log = run_experiment(&cfg).unwrap();
        assert_eq!(log.steps.len(), 4);
        for r in &log.steps {
            let expected = if r.step < 1 { StrategyKind::Random } else { StrategyKind::Das };
            assert!(r.selections.iter().all(|s| s.strategy == expected));
            assert_eq!(r.labeled_count, 10 * (r.step + 1));
        }
        assert_eq!(log.label_cost, 40);
        assert_eq!(log.histogram.total(), 40);
    }

    #[test]
    fn pool_partition_is_preserved() {
        let cfg = synthetic(StrategyKind::Coreset);
        let split = load_split(&cfg).unwrap();
        let mut exp = Experiment::new(cfg, split).unwrap();
        for step in 0..4 {
            let before_u = exp.pool().unlabeled().len();
            exp.run_step().unwrap();
            let (s, u) = (exp.pool().labeled(), exp.pool().unlabeled());
            assert_eq!(s.len(), 10 * (step + 1));
            assert_eq!(u.len(), before_u - 10);
            assert_eq!(s.len() + u.len(), 200);
            assert!(s.iter().all(|i| !exp.pool().is_unlabeled(*i)));
            assert_eq!(exp.label_cost(), s.len() as u64);
        }
    }

    #[test]
    fn exhausted_pool_stops_early() {
        let mut cfg = synthetic(StrategyKind::Random);
        cfg.dry_run = true;
        cfg.split = crate::data::SplitSizes::new(40, 10, 10);
        let split = load_split(&cfg).unwrap();
        let mut exp = Experiment::new(cfg, split).unwrap();
        // shrink the pool behind the engine's back
        let all: Vec<usize> = exp.pool().unlabeled()[..35].to_vec();
        exp.pool.mark_labeled(&all).unwrap();
        let log = exp.run(|_| {}).unwrap();
        assert!(log.steps.is_empty());
        assert!(log.early_stop.unwrap().contains("needs 10"));
    }

    #[test]
    fn adam_counter_never_resets() {
        let cfg = synthetic(StrategyKind::Das);
        let split = load_split(&cfg).unwrap();
        let mut exp = Experiment::new(cfg, split).unwrap();
        let mut last = (0, 0);
        for _ in 0..3 {
            exp.run_step().unwrap();
            let (m1, m2) = exp.models();
            let now = (m1.optimizer_steps(), m2.optimizer_steps());
            assert!(now.0 > last.0 && now.1 > last.1);
            last = now;
        }
    }

    #[test]
    fn model2_does_not_touch_metrics() {
        let cfg = synthetic(StrategyKind::Das);
        let split = load_split(&cfg).unwrap();
        let mut exp = Experiment::new(cfg, split).unwrap();
        for _ in 0..2 {
            exp.run_step().unwrap();
        }
        let before = exp.evaluate().unwrap();
        let (_, m2) = exp.models_mut();
        for v in &mut m2.network_mut().unwrap().params_mut().values {
            *v = f32::NAN;
        }
        assert_eq!(exp.evaluate().unwrap(), before);
    }

    #[test]
    fn serial_and_concurrent_runs_agree() {
        let serial = synthetic(StrategyKind::Das);
        let mut concurrent = serial.clone();
        concurrent.serial = false;
        concurrent.threads = Some(2);
        let a = run_experiment(&serial).unwrap();
        let b = run_experiment(&concurrent).unwrap();
        for (x, y) in a.steps.iter().zip(&b.steps) {
            assert_eq!(x.selections, y.selections);
            assert_eq!(x.test_acc, y.test_acc);
        }
    }

    #[test]
    fn checkpoints_follow_the_cadence() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = synthetic(StrategyKind::Random);
        cfg.checkpoint_every = 2;
        cfg.checkpoint_dir = Some(dir.path().to_path_buf());
        run_experiment(&cfg).unwrap();
        for step in 0..4 {
            let present = checkpoint_path(dir.path(), step, 1).exists();
            assert_eq!(present, step % 2 == 1, "step {step}");
        }
        let ck = crate::nn::read_checkpoint::<f32>(&checkpoint_path(dir.path(), 3, 2)).unwrap();
        assert!(ck.adam.unwrap().t > 0);
    }

    #[test]
    fn dropout_override_applies_to_every_layer() {
        let mut cfg = synthetic(StrategyKind::Random);
        cfg.dropout = Some(0.25);
        let spec = model_spec(&cfg, SYNTH_SHAPE, 2).unwrap();
        let rates: Vec<f64> = spec
            .layers
            .iter()
            .filter_map(|l| match l {
                Layer::Dropout { rate } => Some(*rate),
                _ => None,
            })
            .collect();
        assert_eq!(rates, vec![0.25]);
    }
}
