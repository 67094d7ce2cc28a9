//! Exit criteria. Every criterion prints one `PASS` or `FAIL` line; the
//! process fails when any criterion fails.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use das_lab::cli::{grad_check_suite, run_to_dir, KcenterInstance};
use das_lab::data::{
    load_cifar10_dir, parse_cifar10_file, serialize_cifar10, synth_source_class, ImageShape, CIFAR_BATCH_FILES,
    CIFAR_RECORD_BYTES,
};
use das_lab::engine::{load_split, DatasetSource, Experiment, ExperimentConfig};
use das_lab::metrics::{read_selections_csv, read_steps_csv};
use das_lab::nn::{adam_step, AdamConfig, AdamState, ModelSpec, Network};
use das_lab::strategies::{
    das_distance, das_select_one, kcenter_greedy, kcenter_radius, DasOptions, OutputSource, PoolState,
    StrategyKind,
};
use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

struct Criterion {
    id: u32,
    name: &'static str,
    limit: Option<Duration>,
    run: fn() -> Outcome,
}

fn main() {
    let only: Option<u32> = std::env::var("DAS_LAB_CRITERION").ok().and_then(|v| v.parse().ok());
    let criteria = [
        Criterion { id: 1, name: "gradient correctness", limit: Some(Duration::from_secs(60)), run: c1_gradients },
        Criterion { id: 2, name: "adam oracle equivalence", limit: Some(Duration::from_secs(10)), run: c2_adam },
        Criterion { id: 3, name: "k-center 2-approximation", limit: Some(Duration::from_secs(60)), run: c3_kcenter },
        Criterion { id: 4, name: "dual selection oracle", limit: Some(Duration::from_secs(120)), run: c4_das_oracle },
        Criterion { id: 5, name: "distance bounds and metric axioms", limit: None, run: c5_distance },
        Criterion { id: 6, name: "protocol shape", limit: None, run: c6_protocol },
        Criterion { id: 7, name: "desk-scale efficacy", limit: None, run: c7_desk_efficacy },
        Criterion { id: 8, name: "hard-class oversampling", limit: Some(Duration::from_secs(600)), run: c8_hard_class },
        Criterion { id: 9, name: "serial determinism", limit: None, run: c9_determinism },
        Criterion { id: 10, name: "cifar-10 parser", limit: None, run: c10_parser },
    ];
    let mut failed = 0;
    for c in criteria.iter().filter(|c| only.is_none_or(|id| id == c.id)) {
        let start = Instant::now();
        let mut outcome = (c.run)();
        let elapsed = start.elapsed();
        if let (Ok(msg), Some(limit)) = (&outcome, c.limit) {
            if elapsed > limit {
                outcome = Err(format!("{msg}; took {elapsed:.1?}, limit {limit:?}"));
            }
        }
        match outcome {
            Ok(msg) => println!("criterion {:>2} {:<34} PASS  {msg} ({elapsed:.1?})", c.id, c.name),
            Err(msg) => {
                failed += 1;
                println!("criterion {:>2} {:<34} FAIL  {msg} ({elapsed:.1?})", c.id, c.name);
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

fn check(ok: bool, msg: String) -> Outcome {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c1_gradients() -> Outcome {
    let cases = grad_check_suite(None, 1e-5, 0..20).map_err(|e| e.to_string())?;
    let worst = |spec: &str, wide: bool| {
        cases
            .iter()
            .filter(|c| c.spec == spec && c.wide == wide)
            .map(|c| c.max_rel_error)
            .fold(0.0f64, f64::max)
    };
    let (lin32, lin64, conv32) = (
        worst("linear-softmax", false),
        worst("linear-softmax", true),
        worst("conv-check", false),
    );
    check(
        lin32 < 1e-3 && conv32 < 1e-3 && lin64 < 1e-6,
        format!(
            "20 seeds at eps 1e-5: linear f32 {lin32:.2e}, conv+relu+dense f32 {conv32:.2e} (< 1e-3), linear f64 {lin64:.2e} (< 1e-6)"
        ),
    )
}

/// Adam on one scalar, written out longhand.
fn scalar_adam(mut x: f64, grads: &[f64], lr: f64) -> Vec<f64> {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8f64);
    let (mut m, mut v) = (0.0f64, 0.0f64);
    let mut out = Vec::new();
    for (i, &g) in grads.iter().enumerate() {
        let t = (i + 1) as i32;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let m_hat = m / (1.0 - b1.powi(t));
        let v_hat = v / (1.0 - b2.powi(t));
        x -= lr * m_hat / (v_hat.sqrt() + eps);
        out.push(x);
    }
    out
}

fn c2_adam() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lr = [1e-4, 1e-3, 1e-2][seed as usize % 3];
        let x0: f64 = rng.random_range(-2.0..2.0);
        let grads: Vec<f64> = (0..100).map(|_| rng.random_range(-3.0..3.0)).collect();
        let expected = scalar_adam(x0, &grads, lr);
        let mut params = vec![x0];
        let mut state = AdamState::<f64>::new(1, AdamConfig { learning_rate: lr, ..AdamConfig::default() });
        for (g, want) in grads.iter().zip(&expected) {
            adam_step(&mut params, &[*g], &mut state).map_err(|e| e.to_string())?;
            worst = worst.max((params[0] - want).abs());
        }
    }
    check(worst <= 1e-10, format!("20 trajectories of 100 steps, max deviation {worst:.1e} (<= 1e-10)"))
}

/// Exact k-center radius over every k-subset of the points.
fn exhaustive_radius(points: &[Vec<f64>], k: usize) -> f64 {
    let n = points.len();
    if k == 0 {
        return f64::INFINITY;
    }
    if k >= n {
        return 0.0;
    }
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != k {
            continue;
        }
        let radius = points
            .iter()
            .map(|p| {
                (0..n)
                    .filter(|j| mask & (1 << j) != 0)
                    .map(|j| dist(p, &points[j]))
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max);
        best = best.min(radius);
    }
    best
}

fn c3_kcenter() -> Outcome {
    let mut worst = (0.0f64, 0u64);
    for seed in 0..200u64 {
        let inst = KcenterInstance::generate(seed, 12, 4, 3);
        if inst.k == 0 {
            worst.0 = worst.0.max(1.0);
            continue;
        }
        let picks = kcenter_greedy::<f64>(&inst.points, &[], inst.k).map_err(|e| e.to_string())?;
        let centers: Vec<Vec<f64>> = picks.iter().map(|&i| inst.points[i].clone()).collect();
        let greedy = kcenter_radius(&inst.points, &centers).map_err(|e| e.to_string())?;
        let best = exhaustive_radius(&inst.points, inst.k);
        let ratio = if best == 0.0 {
            if greedy == 0.0 { 1.0 } else { f64::INFINITY }
        } else {
            greedy / best
        };
        if ratio > 2.0 {
            return Err(format!("instance seed {seed}: greedy {greedy} vs optimal {best}"));
        }
        if ratio > worst.0 {
            worst = (ratio, seed);
        }
    }
    Ok(format!("200 instances, worst ratio {:.4} (seed {})", worst.0, worst.1))
}

struct NetSource<'a> {
    net: &'a Network<f64>,
    inputs: &'a [Vec<f64>],
}

impl OutputSource for NetSource<'_> {
    fn outputs(&self, indices: &[usize]) -> das_lab::Result<Vec<Vec<f64>>> {
        let k = self.net.num_classes();
        let batch: Vec<f64> = indices.iter().flat_map(|&i| self.inputs[i].iter().copied()).collect();
        Ok(self.net.logits(&batch)?.chunks(k).map(<[f64]>::to_vec).collect())
    }
}

fn oracle_softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

fn c4_das_oracle() -> Outcome {
    let shape = ImageShape::new(1, 3, 3);
    let mut ties = 0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let spec = ModelSpec::resolve(if seed % 2 == 0 { "linear-softmax" } else { "mlp" }, shape, 4)
            .map_err(|e| e.to_string())?;
        let m1 = Network::<f64>::init(spec.clone(), 2 * seed).map_err(|e| e.to_string())?;
        let m2 = Network::<f64>::init(spec, 2 * seed + 1).map_err(|e| e.to_string())?;
        let n = rng.random_range(2..=500usize);
        let mut inputs: Vec<Vec<f64>> = (0..n).map(|_| (0..9).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
        // duplicate rows give exact ties
        for _ in 0..n / 10 {
            let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
            inputs[b] = inputs[a].clone();
        }
        let labeled: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.2)).collect();
        let unlabeled: Vec<usize> = (0..n).filter(|i| !labeled.contains(i)).collect();
        if unlabeled.is_empty() {
            continue;
        }
        let pool = PoolState::from_parts(labeled, unlabeled.clone()).map_err(|e| e.to_string())?;
        let opts = DasOptions { pool_sample_size: unlabeled.len() + rng.random_range(0..3), ..DasOptions::default() };
        let (s1, s2) = (NetSource { net: &m1, inputs: &inputs }, NetSource { net: &m2, inputs: &inputs });
        let (got, score) = das_select_one(&s1, &s2, &pool, &opts, &mut rng).map_err(|e| e.to_string())?;

        let mut best = (usize::MAX, f64::NEG_INFINITY);
        let mut tied = 0;
        for &u in &unlabeled {
            let p = oracle_softmax(&m1.logits(&inputs[u]).map_err(|e| e.to_string())?);
            let q = oracle_softmax(&m2.logits(&inputs[u]).map_err(|e| e.to_string())?);
            let d = p.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            if d > best.1 {
                best = (u, d);
                tied = 0;
            } else if d == best.1 {
                tied += 1;
            }
        }
        ties += usize::from(tied > 0);
        if got != best.0 || (score - best.1).abs() > 1e-12 {
            return Err(format!("seed {seed}: selected {got} ({score}), exhaustive argmax {} ({})", best.0, best.1));
        }
    }
    Ok(format!("100 model pairs agree with exhaustive argmax, {ties} with tied maxima"))
}

fn c5_distance() -> Outcome {
    let prob = |dim: usize| {
        prop::collection::vec(prop_oneof![Just(0.0f64), 0.0f64..1.0, Just(1.0f64)], dim).prop_map(|w| {
            let s: f64 = w.iter().sum();
            if s == 0.0 {
                let mut one_hot = vec![0.0; w.len()];
                one_hot[0] = 1.0;
                one_hot
            } else {
                w.iter().map(|v| v / s).collect()
            }
        })
    };
    let triples = (1usize..=12).prop_flat_map(move |d| (prob(d), prob(d), prob(d)));
    let mut runner = TestRunner::new(PropConfig { cases: 5000, failure_persistence: None, ..PropConfig::default() });
    let result = runner.run(&triples, |(p, q, r)| {
        let d = |a: &[f64], b: &[f64]| das_distance(a, b).unwrap();
        let (pq, qr, pr) = (d(&p, &q), d(&q, &r), d(&p, &r));
        prop_assert!((0.0..=2f64.sqrt() + 1e-12).contains(&pq));
        prop_assert_eq!(d(&p, &p), 0.0);
        prop_assert_eq!(pq, d(&q, &p));
        prop_assert!(pr <= pq + qr + 1e-12);
        if p != q {
            prop_assert!(pq > 0.0);
        }
        Ok(())
    });
    match result {
        Ok(()) => Ok("5000 sampled triples: range [0, sqrt 2], identity, symmetry, triangle inequality".into()),
        Err(e) => Err(e.to_string()),
    }
}

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("das-lab-acceptance-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

fn c6_protocol() -> Outcome {
    let mut cfg = ExperimentConfig::preset("paper-cifar10").map_err(|e| e.to_string())?;
    cfg.dry_run = true;
    cfg.serial = true;
    let dir = temp_dir("protocol");
    run_to_dir(&cfg, &dir, true).map_err(|e| e.to_string())?;
    let steps = read_steps_csv(&dir.join("steps.csv")).map_err(|e| e.to_string())?;
    let selections = read_selections_csv(&dir.join("selections.csv")).map_err(|e| e.to_string())?;
    let config_text = std::fs::read_to_string(dir.join("config.txt")).map_err(|e| e.to_string())?;
    let _ = std::fs::remove_dir_all(&dir);

    let mut problems = Vec::new();
    if steps.len() != 100 {
        problems.push(format!("{} step rows", steps.len()));
    }
    for (i, s) in steps.iter().enumerate() {
        if s.step != i || s.labeled_count != 100 * (i + 1) {
            problems.push(format!("row {i} reports step {} with {} labels", s.step, s.labeled_count));
            break;
        }
    }
    if selections.len() != 10_000 {
        problems.push(format!("{} selections", selections.len()));
    }
    let unique: HashSet<usize> = selections.iter().map(|s| s.index).collect();
    if unique.len() != selections.len() {
        problems.push("an index was queried twice".into());
    }
    for step in 0..100 {
        let rows: Vec<_> = selections.iter().filter(|s| s.step == step).collect();
        let want = if step < 2 { "random" } else { "das" };
        if rows.len() != 100 || rows.iter().any(|s| s.strategy != want) {
            problems.push(format!("step {step} does not hold 100 `{want}` picks"));
            break;
        }
    }
    for line in ["steps = 100", "batch = 100", "warmup = 2", "epochs = 10", "lr = 0.0001"] {
        if !config_text.lines().any(|l| l == line) {
            problems.push(format!("config lacks `{line}`"));
        }
    }

    // the epoch count shows up in the optimizer step counter
    let split = load_split(&cfg).map_err(|e| e.to_string())?;
    let mut exp = Experiment::new(cfg.clone(), split).map_err(|e| e.to_string())?;
    let mut expected = 0u64;
    for step in 0..100 {
        exp.run_step().map_err(|e| e.to_string())?;
        expected += (100 * (step + 1) as u64).div_ceil(cfg.minibatch_size as u64) * 10;
    }
    let (m1, m2) = exp.models();
    if m1.optimizer_steps() != expected || m2.optimizer_steps() != expected {
        problems.push(format!(
            "optimizer steps {} / {} instead of {expected} for 10 epochs per step",
            m1.optimizer_steps(),
            m2.optimizer_steps()
        ));
    }
    check(
        problems.is_empty(),
        if problems.is_empty() {
            "100 steps of 100 labels, 2 random warm-up steps, 10 epochs per step, 10000 labels at the end".into()
        } else {
            problems.join("; ")
        },
    )
}

fn cifar_dir() -> Option<PathBuf> {
    let candidates = std::env::var_os("DAS_LAB_CIFAR_DIR")
        .map(PathBuf::from)
        .into_iter()
        .chain(["data/cifar-10-batches-bin", "../../data/cifar-10-batches-bin", "/root/data/cifar-10-batches-bin"].map(PathBuf::from));
    candidates
        .into_iter()
        .find(|d| CIFAR_BATCH_FILES.iter().all(|f| d.join(f).is_file()))
}

fn c7_desk_efficacy() -> Outcome {
    let Some(dir) = cifar_dir() else {
        return Err("blocked: CIFAR-10 binary batches not found (set DAS_LAB_CIFAR_DIR)".into());
    };
    let mut base = ExperimentConfig::preset("desk").map_err(|e| e.to_string())?;
    base.dataset = DatasetSource::Cifar10(dir);
    base.checkpoint_every = 0;
    let out = temp_dir("desk");
    let mut finals = Vec::new();
    let mut curves = Vec::new();
    for strategy in [StrategyKind::Random, StrategyKind::Das] {
        let mut accs = Vec::new();
        let mut curve = vec![0.0; base.total_steps];
        for seed in 0..5 {
            let mut cfg = base.clone();
            cfg.strategy = strategy;
            cfg.set_run_seed(seed);
            let log = run_to_dir(&cfg, &out.join(format!("{strategy}_{seed}")), true).map_err(|e| e.to_string())?;
            for (c, s) in curve.iter_mut().zip(&log.steps) {
                *c += s.test_acc / 5.0;
            }
            accs.push(log.steps.last().map_or(f64::NAN, |s| s.test_acc));
        }
        finals.push(accs.iter().sum::<f64>() / accs.len() as f64);
        curves.push(format!(
            "{strategy} curve [{}]",
            curve.iter().map(|a| format!("{a:.3}")).collect::<Vec<_>>().join(" ")
        ));
    }
    let _ = std::fs::remove_dir_all(&out);
    println!("    {}", curves.join("\n    "));
    let (random, das) = (finals[0], finals[1]);
    check(
        das >= random - 0.01,
        format!("mean final test accuracy das {das:.4} vs random {random:.4} (need das >= random - 0.01)"),
    )
}

fn synthetic_config(strategy: StrategyKind) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::preset("desk").expect("preset");
    cfg.strategy = strategy;
    cfg.dataset = DatasetSource::Synthetic;
    cfg.synthetic_noise = 0.2;
    cfg.model = "mlp".into();
    cfg.split = das_lab::data::SplitSizes::new(2000, 500, 500);
    cfg.total_steps = 20;
    cfg.warmup_steps = 2;
    cfg.batch_per_step = 20;
    cfg.epochs_per_step = 5;
    cfg.learning_rate = 1e-3;
    cfg.pool_sample_size = 256;
    cfg.checkpoint_every = 0;
    cfg.serial = true;
    cfg
}

/// Fraction of queried items generated as class B, pooled over seeds.
fn class_b_fraction(strategy: StrategyKind, out: &Path) -> Result<(f64, usize), String> {
    let (mut b, mut total) = (0usize, 0usize);
    for seed in 0..5 {
        let mut cfg = synthetic_config(strategy);
        cfg.set_run_seed(seed);
        let dir = out.join(format!("{strategy}_{seed}"));
        run_to_dir(&cfg, &dir, true).map_err(|e| e.to_string())?;
        let split = load_split(&cfg).map_err(|e| e.to_string())?;
        let per_class = cfg.split.total().div_ceil(2);
        for row in read_selections_csv(&dir.join("selections.csv")).map_err(|e| e.to_string())? {
            total += 1;
            b += usize::from(synth_source_class(split.train_origin[row.index], per_class) == 1);
        }
    }
    Ok((b as f64 / total as f64, total))
}

fn c8_hard_class() -> Outcome {
    let out = temp_dir("hard-class");
    let (das, n_das) = class_b_fraction(StrategyKind::Das, &out)?;
    let (random, n_random) = class_b_fraction(StrategyKind::Random, &out)?;
    let _ = std::fs::remove_dir_all(&out);
    check(
        das > 0.55 && (random - 0.5).abs() <= 0.03,
        format!("class-B share das {das:.4} over {n_das} picks (> 0.55), random {random:.4} over {n_random} (0.50 +- 0.03)"),
    )
}

fn c9_determinism() -> Outcome {
    let out = temp_dir("determinism");
    let mut checked = Vec::new();
    let mut runs: Vec<(String, ExperimentConfig)> = Vec::new();
    for strategy in StrategyKind::ALL {
        let mut cfg = synthetic_config(strategy);
        cfg.total_steps = 6;
        cfg.set_run_seed(3);
        runs.push((format!("desk/{strategy}"), cfg));
    }
    let mut paper = ExperimentConfig::preset("paper-cifar10").map_err(|e| e.to_string())?;
    paper.dry_run = true;
    paper.serial = true;
    paper.total_steps = 10;
    runs.push(("paper-cifar10/das dry-run".into(), paper));
    for (i, (name, cfg)) in runs.iter().enumerate() {
        let (a, b) = (out.join(format!("{i}a")), out.join(format!("{i}b")));
        run_to_dir(cfg, &a, true).map_err(|e| e.to_string())?;
        run_to_dir(cfg, &b, true).map_err(|e| e.to_string())?;
        for file in ["selections.csv", "steps.csv"] {
            let x = std::fs::read(a.join(file)).map_err(|e| e.to_string())?;
            let y = std::fs::read(b.join(file)).map_err(|e| e.to_string())?;
            if x != y {
                let _ = std::fs::remove_dir_all(&out);
                return Err(format!("{name}: {file} differs between two serial runs"));
            }
        }
        checked.push(name.clone());
    }
    let _ = std::fs::remove_dir_all(&out);
    Ok(format!("byte-identical selections.csv and steps.csv for {}", checked.join(", ")))
}

fn c10_parser() -> Outcome {
    match cifar_dir() {
        Some(dir) => {
            for file in &CIFAR_BATCH_FILES[..5] {
                let bytes = std::fs::read(dir.join(file)).map_err(|e| e.to_string())?;
                let examples = parse_cifar10_file(&bytes).map_err(|e| e.to_string())?;
                if examples.len() != 10_000 || examples.iter().any(|e| e.label > 9) {
                    return Err(format!("{file}: {} examples", examples.len()));
                }
                if serialize_cifar10(&examples).map_err(|e| e.to_string())? != bytes {
                    return Err(format!("{file}: reserialized bytes differ"));
                }
            }
            let all = load_cifar10_dir(&dir).map_err(|e| e.to_string())?;
            Ok(format!("5 official train batches: 10000 examples each, byte-identical round trip; {} images total", all.len()))
        }
        None => {
            // same layout as an official batch: label byte then 3072 pixel bytes
            let mut rng = ChaCha8Rng::seed_from_u64(10);
            let mut bytes = Vec::with_capacity(10_000 * CIFAR_RECORD_BYTES);
            for _ in 0..10_000 {
                bytes.push(rng.random_range(0..10u8));
                bytes.extend((0..CIFAR_RECORD_BYTES - 1).map(|_| rng.random::<u8>()));
            }
            let examples = parse_cifar10_file(&bytes).map_err(|e| e.to_string())?;
            let layout_ok = examples.len() == 10_000
                && examples.iter().all(|e| e.label <= 9)
                && serialize_cifar10(&examples).map_err(|e| e.to_string())? == bytes;
            Err(format!(
                "blocked: official batch files not found (set DAS_LAB_CIFAR_DIR); a generated {}-byte batch in the same layout {}",
                bytes.len(),
                if layout_ok { "parses to 10000 examples and round-trips byte for byte" } else { "does NOT round-trip" }
            ))
        }
    }
}
