//! Command-line front end: `run`, `grad-check`, `kcenter-verify`, `report`.
//!
//! Exit codes: 0 success, 1 run failure or tolerance breach, 2 usage or
//! configuration error.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::ImageShape;
use crate::engine::{load_split, Experiment, ExperimentConfig, StepResult};
use crate::error::{Error, Result};
use crate::metrics::{merge_runs, write_report, write_run_csv};
use crate::nn::{grad_check, GradCheckOptions, ModelSpec, Real};
use crate::strategies::{brute_force_kcenter_radius, kcenter_greedy, kcenter_radius};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Environment variable capping the worker count.
pub const THREADS_ENV: &str = "DAS_LAB_THREADS";

#[derive(Debug, Parser)]
#[command(name = "das-lab", version, about = "Pool-based active learning with dual-model sampling")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run an active-learning experiment and write its CSVs.
    Run(Box<RunArgs>),
    /// Compare backpropagated gradients with finite differences.
    GradCheck(GradCheckArgs),
    /// Check the greedy k-center radius against exhaustive search.
    KcenterVerify(KcenterArgs),
    /// Merge run directories into mean curves and a histogram table.
    Report(ReportArgs),
}

#[derive(Debug, Default, Args)]
pub struct RunArgs {
    /// random, das or coreset
    #[arg(long)]
    pub strategy: Option<String>,
    /// `key = value` config file
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Base preset: paper-cifar10 or desk
    #[arg(long)]
    pub preset: Option<String>,
    /// Directory with the CIFAR-10 binary batches
    #[arg(long)]
    pub dataset_dir: Option<PathBuf>,
    /// Use the synthetic two-class set
    #[arg(long)]
    pub synthetic: bool,
    #[arg(long, default_value = "das-lab-out")]
    pub out_dir: PathBuf,
    /// Comma-separated run seeds; each run goes to its own subdirectory
    #[arg(long, value_delimiter = ',')]
    pub seed_list: Option<Vec<u64>>,
    /// Single run seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Single-threaded, bitwise reproducible execution
    #[arg(long)]
    pub serial: bool,
    /// Replace the networks by stub models
    #[arg(long)]
    pub dry_run: bool,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long)]
    pub pool_sample: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Model preset name or full model description
    #[arg(long)]
    pub model: Option<String>,
    /// Any other config key, as KEY=VALUE
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Print nothing per step
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct GradCheckArgs {
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    /// Check only this model preset
    #[arg(long)]
    pub spec: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Seeds per spec
    #[arg(long, default_value_t = 1)]
    pub repeats: u64,
}

#[derive(Debug, Args)]
pub struct KcenterArgs {
    #[arg(long, default_value_t = 200)]
    pub instances: u64,
    /// Seed of the first instance; instance i uses seed + i
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 12)]
    pub max_points: usize,
    #[arg(long, default_value_t = 4)]
    pub max_k: usize,
    #[arg(long, default_value_t = 3)]
    pub max_dim: usize,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Run directories produced by `run`
    #[arg(required = true)]
    pub dirs: Vec<PathBuf>,
    #[arg(long, default_value = "das-lab-report")]
    pub out_dir: PathBuf,
}

/// Parses the process arguments and runs the command.
pub fn main() -> i32 {
    match Cli::try_parse() {
        Ok(cli) => execute(cli),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                EXIT_USAGE
            } else {
                EXIT_OK
            }
        }
    }
}

pub fn execute(cli: Cli) -> i32 {
    let outcome = match cli.command {
        Command::Run(a) => cmd_run(&a),
        Command::GradCheck(a) => cmd_grad_check(&a),
        Command::KcenterVerify(a) => cmd_kcenter_verify(&a),
        Command::Report(a) => cmd_report(&a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_USAGE,
        _ => EXIT_FAILURE,
    }
}

/// Preset, then config file, then flags.
pub fn resolve_config(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let mut cfg = ExperimentConfig::from_file(path)?;
            if let Some(p) = &args.preset {
                // re-apply the file on top of the requested preset
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                let mut base = ExperimentConfig::preset(p)?;
                for (k, v) in crate::engine::parse_entries(&text)? {
                    if k != "preset" {
                        base.set(&k, &v)?;
                    }
                }
                cfg = base;
            }
            cfg
        }
        None => ExperimentConfig::preset(args.preset.as_deref().unwrap_or("paper-cifar10"))?,
    };
    if let Ok(v) = std::env::var(THREADS_ENV) {
        cfg.set("threads", &v)?;
    }
    let mut flags: Vec<(&str, String)> = Vec::new();
    let mut opt = |k, v: Option<String>| {
        if let Some(v) = v {
            flags.push((k, v));
        }
    };
    opt("strategy", args.strategy.clone());
    opt("dataset_dir", args.dataset_dir.as_ref().map(|p| p.display().to_string()));
    opt("seed", args.seed.map(|v| v.to_string()));
    opt("steps", args.steps.map(|v| v.to_string()));
    opt("batch", args.batch.map(|v| v.to_string()));
    opt("epochs", args.epochs.map(|v| v.to_string()));
    opt("warmup", args.warmup.map(|v| v.to_string()));
    opt("pool_sample", args.pool_sample.map(|v| v.to_string()));
    opt("lr", args.lr.map(|v| v.to_string()));
    opt("model", args.model.clone());
    if args.synthetic {
        flags.push(("synthetic", "true".into()));
    }
    if args.serial {
        flags.push(("serial", "true".into()));
    }
    if args.dry_run {
        flags.push(("dry_run", "true".into()));
    }
    for (k, v) in flags {
        cfg.set(k, &v)?;
    }
    for kv in &args.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v)?;
    }
    // the warm-up may not outlast a shortened run
    if args.steps.is_some() && args.warmup.is_none() {
        cfg.warmup_steps = cfg.warmup_steps.min(cfg.total_steps);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn step_line(r: &StepResult, strategy: &str) -> String {
    format!(
        "step {:>3} [{strategy}] labeled {:>6} val {:.4} test {:.4} train {:.2}s select {:.2}s",
        r.step, r.labeled_count, r.val_acc, r.test_acc, r.train_seconds, r.select_seconds
    )
}

/// Runs one configured experiment and writes its files into `out_dir`.
pub fn run_to_dir(cfg: &ExperimentConfig, out_dir: &Path, quiet: bool) -> Result<crate::engine::ExperimentLog> {
    let mut cfg = cfg.clone();
    if cfg.checkpoint_every > 0 && cfg.checkpoint_dir.is_none() && !cfg.dry_run {
        cfg.checkpoint_dir = Some(out_dir.join("checkpoints"));
    }
    let split = load_split(&cfg)?;
    let experiment = Experiment::new(cfg, split)?;
    let strategy_at = |step: usize, c: &ExperimentConfig| {
        if step < c.warmup_steps { "random" } else { c.strategy.as_str() }
    };
    let shown = experiment.config().clone();
    let split = experiment.split().clone();
    let log = experiment.run(|r| {
        if !quiet {
            println!("{}", step_line(r, strategy_at(r.step, &shown)));
        }
    })?;
    if let Some(reason) = &log.early_stop {
        eprintln!("stopped early: {reason}");
    }
    write_run_csv(&log, &split.train_pool, out_dir)?;
    Ok(log)
}

pub fn cmd_run(args: &RunArgs) -> Result<i32> {
    let cfg = resolve_config(args)?;
    match &args.seed_list {
        None => {
            run_to_dir(&cfg, &args.out_dir, args.quiet)?;
        }
        Some(seeds) => {
            for &seed in seeds {
                let mut c = cfg.clone();
                c.set_run_seed(seed);
                let dir = args.out_dir.join(format!("{}_seed{seed}", c.strategy));
                if !args.quiet {
                    println!("run seed {seed} -> {}", dir.display());
                }
                run_to_dir(&c, &dir, args.quiet)?;
            }
        }
    }
    Ok(EXIT_OK)
}

/// One gradient-check case of the built-in suite.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCase {
    pub spec: String,
    pub wide: bool,
    pub seed: u64,
    pub max_rel_error: f64,
    pub threshold: f64,
}

impl GradCase {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.threshold
    }
}

/// Input geometry used by the gradient-check suite.
pub const GRAD_CHECK_SHAPE: ImageShape = ImageShape::new(2, 5, 5);
const GRAD_CHECK_CLASSES: usize = 3;
const GRAD_CHECK_BATCH: usize = 4;

fn grad_batch<T: Real>(seed: u64) -> (Vec<T>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xba7c);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let pixels = (0..GRAD_CHECK_BATCH * GRAD_CHECK_SHAPE.len())
        .map(|_| T::from_f64_lossy(normal.sample(&mut rng)))
        .collect();
    let labels = (0..GRAD_CHECK_BATCH).map(|_| rng.random_range(0..GRAD_CHECK_CLASSES)).collect();
    (pixels, labels)
}

/// Runs one spec at one seed, in single or double width.
pub fn grad_case(spec_name: &str, wide: bool, seed: u64, eps: f64) -> Result<GradCase> {
    let spec = ModelSpec::resolve(spec_name, GRAD_CHECK_SHAPE, GRAD_CHECK_CLASSES)?;
    let opts = GradCheckOptions { eps, max_coords: None };
    let report = if wide {
        let (x, y) = grad_batch::<f64>(seed);
        grad_check(&spec, &x, &y, seed, opts)?
    } else {
        let (x, y) = grad_batch::<f32>(seed);
        grad_check(&spec, &x, &y, seed, opts)?
    };
    Ok(GradCase {
        spec: spec_name.to_string(),
        wide,
        seed,
        max_rel_error: report.max_rel_error,
        threshold: if wide { 1e-6 } else { 1e-3 },
    })
}

/// The default suite: both small specs in single width, the linear model
/// also in double width.
pub fn grad_check_suite(spec: Option<&str>, eps: f64, seeds: std::ops::Range<u64>) -> Result<Vec<GradCase>> {
    let mut plan: Vec<(&str, bool)> = vec![("linear-softmax", false), ("linear-softmax", true), ("conv-check", false)];
    if let Some(name) = spec {
        plan.retain(|(s, _)| *s == name);
        if plan.is_empty() {
            plan = vec![(name, false), (name, true)];
        }
    }
    let mut out = Vec::new();
    for seed in seeds {
        for &(name, wide) in &plan {
            out.push(grad_case(name, wide, seed, eps)?);
        }
    }
    Ok(out)
}

pub fn cmd_grad_check(args: &GradCheckArgs) -> Result<i32> {
    if !(args.eps.is_finite() && args.eps > 0.0) {
        return Err(Error::config(format!("--eps must be positive, got {}", args.eps)));
    }
    let cases = grad_check_suite(args.spec.as_deref(), args.eps, args.seed..args.seed + args.repeats.max(1))?;
    let mut ok = true;
    for c in &cases {
        let width = if c.wide { "f64" } else { "f32" };
        let verdict = if c.passed() { "ok" } else { "FAIL" };
        println!(
            "{:<16} {width} seed {:<4} max rel error {:.3e} (limit {:.0e}) {verdict}",
            c.spec, c.seed, c.max_rel_error, c.threshold
        );
        ok &= c.passed();
    }
    Ok(if ok { EXIT_OK } else { EXIT_FAILURE })
}

/// One random k-center instance.
#[derive(Clone, Debug, PartialEq)]
pub struct KcenterInstance {
    pub seed: u64,
    pub points: Vec<Vec<f64>>,
    pub k: usize,
}

impl KcenterInstance {
    pub fn generate(seed: u64, max_points: usize, max_k: usize, max_dim: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..=max_points.max(1));
        let dim = rng.random_range(1..=max_dim.max(1));
        let k = rng.random_range(0..=max_k.min(n));
        let points = (0..n)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        Self { seed, points, k }
    }

    /// Greedy radius over optimal radius; 1 when k is 0 or both are 0.
    pub fn ratio(&self) -> Result<f64> {
        if self.k == 0 {
            return Ok(1.0);
        }
        let picks = kcenter_greedy::<f64>(&self.points, &[], self.k)?;
        let centers: Vec<Vec<f64>> = picks.iter().map(|&i| self.points[i].clone()).collect();
        let greedy = kcenter_radius(&self.points, &centers)?;
        let best = brute_force_kcenter_radius(&self.points, self.k);
        Ok(if best == 0.0 {
            if greedy == 0.0 { 1.0 } else { f64::INFINITY }
        } else {
            greedy / best
        })
    }
}

pub fn cmd_kcenter_verify(args: &KcenterArgs) -> Result<i32> {
    let mut worst = (0.0f64, args.seed);
    let mut violations = Vec::new();
    for i in 0..args.instances {
        let inst = KcenterInstance::generate(args.seed + i, args.max_points, args.max_k, args.max_dim);
        let ratio = inst.ratio()?;
        if ratio > worst.0 {
            worst = (ratio, inst.seed);
        }
        if ratio > 2.0 {
            violations.push(inst.seed);
            eprintln!("instance seed {}: ratio {ratio} exceeds 2", inst.seed);
        }
    }
    println!(
        "{} instances, worst greedy/optimal ratio {:.6} (instance seed {})",
        args.instances, worst.0, worst.1
    );
    Ok(if violations.is_empty() { EXIT_OK } else { EXIT_FAILURE })
}

pub fn cmd_report(args: &ReportArgs) -> Result<i32> {
    let report = merge_runs(&args.dirs)?;
    for path in write_report(&report, &args.out_dir)? {
        println!("wrote {}", path.display());
    }
    for (strategy, curve) in &report.curves {
        if let Some(last) = curve.last() {
            println!(
                "{strategy}: {} runs, final test accuracy {:.4} [{:.4}, {:.4}] at {} labels",
                last.runs, last.mean_test, last.min_test, last.max_test, last.labeled_count
            );
        }
    }
    Ok(EXIT_OK)
}
