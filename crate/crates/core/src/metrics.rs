//! Accuracy tallies, class histograms and the CSV files of a run.
//!
//! Files written per run directory:
//!
//! * `steps.csv`: `step,labeled_count,val_acc,test_acc,acc_class_0..,train_seconds,select_seconds`
//! * `selections.csv`: `step,index,true_class,strategy,score`
//! * `histogram.csv`: `class,count`
//! * `config.txt`: the run's configuration in `key = value` form
//! * `timings.csv`: `step,train_seconds,select_seconds`, only for serial runs,
//!   whose `steps.csv` carries zeros in the timing columns so that it is
//!   reproducible byte for byte.
//!
//! Floats are printed in shortest round-trip form; missing scores are empty.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::data::LabeledExample;
use crate::engine::{parse_entries, ExperimentLog};
use crate::error::{Error, Result};

/// Fraction of matching entries.
pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.is_empty() || predictions.len() != labels.len() {
        return Err(Error::structural(format!(
            "accuracy needs equal nonempty inputs, got {} predictions and {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PerClassAccuracy {
    pub correct: Vec<usize>,
    pub total: Vec<usize>,
}

impl PerClassAccuracy {
    /// Per-class accuracy; NaN for classes without examples.
    pub fn rates(&self) -> Vec<f64> {
        self.correct
            .iter()
            .zip(&self.total)
            .map(|(&c, &t)| if t == 0 { f64::NAN } else { c as f64 / t as f64 })
            .collect()
    }

    /// Overall accuracy; NaN when empty.
    pub fn overall(&self) -> f64 {
        let total: usize = self.total.iter().sum();
        if total == 0 {
            return f64::NAN;
        }
        self.correct.iter().sum::<usize>() as f64 / total as f64
    }
}

/// Per-class tallies. Pairs whose label is out of range are ignored.
pub fn per_class_accuracy(predictions: &[usize], labels: &[usize], num_classes: usize) -> PerClassAccuracy {
    let mut acc = PerClassAccuracy {
        correct: vec![0; num_classes],
        total: vec![0; num_classes],
    };
    for (&p, &l) in predictions.iter().zip(labels) {
        if l < num_classes {
            acc.total[l] += 1;
            acc.correct[l] += usize::from(p == l);
        }
    }
    acc
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ClassHistogram {
    pub counts: Vec<usize>,
}

impl ClassHistogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// Ground-truth class counts among `selected` (indices into `pool`).
pub fn class_histogram(selected: &[usize], pool: &[LabeledExample], num_classes: usize) -> ClassHistogram {
    let mut counts = vec![0; num_classes];
    for &i in selected {
        counts[pool[i].label] += 1;
    }
    ClassHistogram { counts }
}

/// One row of `steps.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRow {
    pub step: usize,
    pub labeled_count: usize,
    pub val_acc: f64,
    pub test_acc: f64,
    pub class_acc: Vec<f64>,
    pub train_seconds: f64,
    pub select_seconds: f64,
}

/// One row of `selections.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectionRow {
    pub step: usize,
    pub index: usize,
    pub true_class: usize,
    pub strategy: String,
    pub score: Option<f64>,
}

pub fn steps_csv(log: &ExperimentLog) -> String {
    let k = log.num_classes;
    let mut s = String::from("step,labeled_count,val_acc,test_acc");
    for c in 0..k {
        let _ = write!(s, ",acc_class_{c}");
    }
    s.push_str(",train_seconds,select_seconds\n");
    for r in &log.steps {
        let _ = write!(s, "{},{},{},{}", r.step, r.labeled_count, r.val_acc, r.test_acc);
        for rate in r.per_class.rates() {
            let _ = write!(s, ",{rate}");
        }
        let (train, select) = if log.config.serial {
            (0.0, 0.0)
        } else {
            (r.train_seconds, r.select_seconds)
        };
        let _ = writeln!(s, ",{train},{select}");
    }
    s
}

/// `selections.csv` text; `true_class` is looked up in `pool`.
pub fn selections_csv(log: &ExperimentLog, pool: &[LabeledExample]) -> String {
    let mut s = String::from("step,index,true_class,strategy,score\n");
    for r in &log.steps {
        for sel in &r.selections {
            let score = sel.score.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                sel.step, sel.chosen_index, pool[sel.chosen_index].label, sel.strategy, score
            );
        }
    }
    s
}

pub fn histogram_csv(hist: &ClassHistogram) -> String {
    let mut s = String::from("class,count\n");
    for (c, n) in hist.counts.iter().enumerate() {
        let _ = writeln!(s, "{c},{n}");
    }
    s
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes every CSV of a run into `out_dir`, creating it if needed.
pub fn write_run_csv(log: &ExperimentLog, pool: &[LabeledExample], out_dir: &Path) -> Result<()> {
    if log.steps.is_empty() {
        return Err(Error::structural("cannot write an empty run log"));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_file(&out_dir.join("steps.csv"), &steps_csv(log))?;
    write_file(&out_dir.join("selections.csv"), &selections_csv(log, pool))?;
    write_file(&out_dir.join("histogram.csv"), &histogram_csv(&log.histogram))?;
    write_file(&out_dir.join("config.txt"), &log.config.to_text())?;
    if log.config.serial {
        let mut s = String::from("step,train_seconds,select_seconds\n");
        for r in &log.steps {
            let _ = writeln!(s, "{},{},{}", r.step, r.train_seconds, r.select_seconds);
        }
        write_file(&out_dir.join("timings.csv"), &s)?;
    }
    Ok(())
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn csv_rows(text: &str, path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::MalformedFile(format!("{}: empty file", path.display())))?
        .split(',')
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        let row: Vec<String> = line.split(',').map(str::to_string).collect();
        if row.len() != header.len() {
            return Err(Error::MalformedFile(format!(
                "{}: line {} has {} fields, header has {}",
                path.display(),
                n + 2,
                row.len(),
                header.len()
            )));
        }
        rows.push(row);
    }
    Ok((header, rows))
}

fn field<T: std::str::FromStr>(value: &str, path: &Path) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::MalformedFile(format!("{}: bad field `{value}`", path.display())))
}

pub fn read_steps_csv(path: &Path) -> Result<Vec<StepRow>> {
    let (header, rows) = csv_rows(&read_file(path)?, path)?;
    if header.len() < 6 || header[0] != "step" || header[3] != "test_acc" {
        return Err(Error::MalformedFile(format!("{}: not a steps.csv header", path.display())));
    }
    let k = header.len() - 6;
    rows.iter()
        .map(|r| {
            Ok(StepRow {
                step: field(&r[0], path)?,
                labeled_count: field(&r[1], path)?,
                val_acc: field(&r[2], path)?,
                test_acc: field(&r[3], path)?,
                class_acc: r[4..4 + k].iter().map(|v| field(v, path)).collect::<Result<_>>()?,
                train_seconds: field(&r[4 + k], path)?,
                select_seconds: field(&r[5 + k], path)?,
            })
        })
        .collect()
}

pub fn read_selections_csv(path: &Path) -> Result<Vec<SelectionRow>> {
    let (header, rows) = csv_rows(&read_file(path)?, path)?;
    if header != ["step", "index", "true_class", "strategy", "score"] {
        return Err(Error::MalformedFile(format!("{}: not a selections.csv header", path.display())));
    }
    rows.iter()
        .map(|r| {
            Ok(SelectionRow {
                step: field(&r[0], path)?,
                index: field(&r[1], path)?,
                true_class: field(&r[2], path)?,
                strategy: r[3].clone(),
                score: if r[4].is_empty() { None } else { Some(field(&r[4], path)?) },
            })
        })
        .collect()
}

pub fn read_histogram_csv(path: &Path) -> Result<ClassHistogram> {
    let (_, rows) = csv_rows(&read_file(path)?, path)?;
    let counts = rows.iter().map(|r| field(&r[1], path)).collect::<Result<_>>()?;
    Ok(ClassHistogram { counts })
}

/// Config keys allowed to differ between runs that are merged together.
const PER_RUN_KEYS: [&str; 5] = ["strategy", "model1_seed", "model2_seed", "selection_seed", "serial"];

/// Mean and range of one curve point across runs.
#[derive(Clone, Debug, PartialEq)]
pub struct CurvePoint {
    pub step: usize,
    pub labeled_count: usize,
    pub runs: usize,
    pub mean_test: f64,
    pub min_test: f64,
    pub max_test: f64,
    pub mean_val: f64,
    pub min_val: f64,
    pub max_val: f64,
}

/// Merged results of several run directories.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    /// Per strategy, the curve points over steps present in every run.
    pub curves: BTreeMap<String, Vec<CurvePoint>>,
    /// Per strategy, mean final class counts.
    pub histograms: BTreeMap<String, Vec<f64>>,
}

fn stats(values: &[f64]) -> (f64, f64, f64) {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (mean, min, max)
}

/// Merges run directories. Runs must agree on every config key except
/// the strategy and the per-run seeds.
pub fn merge_runs(dirs: &[PathBuf]) -> Result<Report> {
    if dirs.is_empty() {
        return Err(Error::config("report needs at least one run directory"));
    }
    let mut reference: Option<(PathBuf, BTreeMap<String, String>)> = None;
    let mut by_strategy: BTreeMap<String, Vec<(Vec<StepRow>, ClassHistogram)>> = BTreeMap::new();
    for dir in dirs {
        let entries: BTreeMap<String, String> =
            parse_entries(&read_file(&dir.join("config.txt"))?)?.into_iter().collect();
        let strategy = entries
            .get("strategy")
            .cloned()
            .ok_or_else(|| Error::MalformedFile(format!("{}: config.txt lacks a strategy", dir.display())))?;
        let shared: BTreeMap<String, String> = entries
            .into_iter()
            .filter(|(k, _)| !PER_RUN_KEYS.contains(&k.as_str()))
            .collect();
        match &reference {
            None => reference = Some((dir.clone(), shared)),
            Some((ref_dir, ref_entries)) => {
                let keys: std::collections::BTreeSet<&String> = ref_entries.keys().chain(shared.keys()).collect();
                for key in keys {
                    let (a, b) = (ref_entries.get(key), shared.get(key));
                    if a != b {
                        let show = |v: Option<&String>| v.map_or("<unset>".to_string(), |s| s.clone());
                        return Err(Error::config(format!(
                            "runs are not comparable: `{key}` is {} in {} but {} in {}",
                            show(a),
                            ref_dir.display(),
                            show(b),
                            dir.display()
                        )));
                    }
                }
            }
        }
        let steps = read_steps_csv(&dir.join("steps.csv"))?;
        let hist = read_histogram_csv(&dir.join("histogram.csv"))?;
        by_strategy.entry(strategy).or_default().push((steps, hist));
    }
    let mut report = Report::default();
    for (strategy, runs) in by_strategy {
        let len = runs.iter().map(|(s, _)| s.len()).min().unwrap_or(0);
        let mut curve = Vec::with_capacity(len);
        for i in 0..len {
            let test: Vec<f64> = runs.iter().map(|(s, _)| s[i].test_acc).collect();
            let val: Vec<f64> = runs.iter().map(|(s, _)| s[i].val_acc).collect();
            let (mean_test, min_test, max_test) = stats(&test);
            let (mean_val, min_val, max_val) = stats(&val);
            curve.push(CurvePoint {
                step: runs[0].0[i].step,
                labeled_count: runs[0].0[i].labeled_count,
                runs: runs.len(),
                mean_test,
                min_test,
                max_test,
                mean_val,
                min_val,
                max_val,
            });
        }
        let k = runs.iter().map(|(_, h)| h.counts.len()).max().unwrap_or(0);
        let hist = (0..k)
            .map(|c| {
                runs.iter().map(|(_, h)| h.counts.get(c).copied().unwrap_or(0) as f64).sum::<f64>() / runs.len() as f64
            })
            .collect();
        report.curves.insert(strategy.clone(), curve);
        report.histograms.insert(strategy, hist);
    }
    Ok(report)
}

/// Writes `curve_<strategy>.csv` per strategy and `histogram_comparison.csv`.
pub fn write_report(report: &Report, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    for (strategy, curve) in &report.curves {
        let mut s = String::from("step,labeled_count,runs,mean_test_acc,min_test_acc,max_test_acc,mean_val_acc,min_val_acc,max_val_acc\n");
        for p in curve {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                p.step, p.labeled_count, p.runs, p.mean_test, p.min_test, p.max_test, p.mean_val, p.min_val, p.max_val
            );
        }
        let path = out_dir.join(format!("curve_{strategy}.csv"));
        write_file(&path, &s)?;
        written.push(path);
    }
    let k = report.histograms.values().map(Vec::len).max().unwrap_or(0);
    let mut s = String::from("class");
    for strategy in report.histograms.keys() {
        let _ = write!(s, ",{strategy}");
    }
    s.push('\n');
    for c in 0..k {
        let _ = write!(s, "{c}");
        for hist in report.histograms.values() {
            let _ = write!(s, ",{}", hist.get(c).copied().unwrap_or(0.0));
        }
        s.push('\n');
    }
    let path = out_dir.join("histogram_comparison.csv");
    write_file(&path, &s)?;
    written.push(path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_counts() {
        assert_eq!(accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0, 0], &[1, 1]).unwrap(), 0.0);
        let pred = [0, 1, 2, 3, 4, 5, 6, 0, 0, 0];
        let lab = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9];
        assert!((accuracy(&pred, &lab).unwrap() - 0.7).abs() < 1e-15);
        assert!(matches!(accuracy(&[], &[]), Err(Error::Structural(_))));
    }

    #[test]
    fn per_class_hand_count() {
        let acc = per_class_accuracy(&[0, 1, 1], &[0, 0, 1], 3);
        assert_eq!(acc.correct, vec![1, 1, 0]);
        assert_eq!(acc.total, vec![2, 1, 0]);
        assert!(acc.rates()[2].is_nan());
        let overall = accuracy(&[0, 1, 1], &[0, 0, 1]).unwrap();
        assert!((acc.overall() - overall).abs() < 1e-15);
    }

    #[test]
    fn histogram_counts_true_labels() {
        let pool: Vec<LabeledExample> = [0, 0, 1, 2].iter().map(|&l| LabeledExample::new(vec![], l)).collect();
        assert_eq!(class_histogram(&[0, 1, 2], &pool, 4).counts, vec![2, 1, 0, 0]);
        assert_eq!(class_histogram(&[], &pool, 3).counts, vec![0, 0, 0]);
        assert_eq!(class_histogram(&[0, 1, 2, 3], &pool, 3).counts, vec![2, 1, 1]);
    }
}
