//! Dual active sampling: query the candidate on which two same-structure
//! models disagree the most.

use rand::seq::index;
use rand::Rng;

use super::{PoolState, SelectionRecord, StrategyKind};
use crate::error::{Error, Result};
use crate::nn::softmax;

/// A frozen model that can score train-pool items by index.
pub trait OutputSource {
    /// Raw outputs (logits), one row per requested index, in request order.
    fn outputs(&self, indices: &[usize]) -> Result<Vec<Vec<f64>>>;
}

/// What the distance is measured between.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DistanceMode {
    /// Softmax probabilities (bounded by `sqrt(2)`).
    #[default]
    Probabilities,
    /// Raw logits.
    Logits,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DasOptions {
    /// Size of the random candidate set drawn per pick.
    pub pool_sample_size: usize,
    pub distance: DistanceMode,
}

impl Default for DasOptions {
    fn default() -> Self {
        Self {
            pool_sample_size: 1024,
            distance: DistanceMode::Probabilities,
        }
    }
}

/// Euclidean distance between two output vectors.
pub fn das_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::structural(format!(
            "output vectors of different lengths ({} and {})",
            p.len(),
            q.len()
        )));
    }
    Ok(p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
}

fn select_from<R: Rng + ?Sized>(
    model1: &dyn OutputSource,
    model2: &dyn OutputSource,
    unlabeled: &[usize],
    opts: &DasOptions,
    rng: &mut R,
) -> Result<(usize, f64)> {
    if unlabeled.is_empty() {
        return Err(Error::PoolExhausted("no unlabeled items left for dual sampling".into()));
    }
    let size = opts.pool_sample_size.min(unlabeled.len()).max(1);
    let candidates: Vec<usize> = index::sample(rng, unlabeled.len(), size)
        .into_iter()
        .map(|p| unlabeled[p])
        .collect();
    let out1 = model1.outputs(&candidates)?;
    let out2 = model2.outputs(&candidates)?;
    if out1.len() != candidates.len() || out2.len() != candidates.len() {
        return Err(Error::structural("model returned the wrong number of output rows"));
    }
    let mut best: Option<(usize, f64)> = None;
    for ((&idx, a), b) in candidates.iter().zip(&out1).zip(&out2) {
        let d = match opts.distance {
            DistanceMode::Probabilities => das_distance(&softmax(a), &softmax(b))?,
            DistanceMode::Logits => das_distance(a, b)?,
        };
        if !d.is_finite() {
            return Err(Error::Divergence {
                context: format!("disagreement for pool item {idx} is not finite"),
            });
        }
        best = match best {
            Some((bi, bd)) if bd > d || (bd == d && bi < idx) => Some((bi, bd)),
            _ => Some((idx, d)),
        };
    }
    Ok(best.expect("at least one candidate"))
}

/// Draws a candidate set from the pool and returns the candidate with the
/// largest disagreement between the two models, smallest index on ties.
pub fn das_select_one<R: Rng + ?Sized>(
    model1: &dyn OutputSource,
    model2: &dyn OutputSource,
    pool: &PoolState,
    opts: &DasOptions,
    rng: &mut R,
) -> Result<(usize, f64)> {
    select_from(model1, model2, pool.unlabeled(), opts, rng)
}

/// `n` consecutive single picks with a fresh candidate set each time. Picked
/// items leave the working pool; the models are not updated in between.
pub fn das_select_batch<R: Rng + ?Sized>(
    model1: &dyn OutputSource,
    model2: &dyn OutputSource,
    pool: &PoolState,
    n: usize,
    step: usize,
    opts: &DasOptions,
    rng: &mut R,
) -> Result<Vec<SelectionRecord>> {
    let mut working = pool.unlabeled().to_vec();
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let (chosen, score) = select_from(model1, model2, &working, opts, rng).map_err(|e| match e {
            Error::PoolExhausted(_) => Error::PoolExhausted(format!(
                "pool ran dry at pick {} of {n} in step {step}",
                i + 1
            )),
            other => other,
        })?;
        let pos = working.binary_search(&chosen).expect("chosen from working pool");
        working.remove(pos);
        records.push(SelectionRecord {
            step,
            chosen_index: chosen,
            strategy: StrategyKind::Das,
            score: Some(score),
        });
    }
    Ok(records)
}
