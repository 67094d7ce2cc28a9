//! Query strategies over an unlabeled pool: random sampling, dual active
//! sampling and k-center greedy core-set selection.

mod das;
mod kcenter;

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Network, Real};

pub use das::{das_distance, das_select_batch, das_select_one, DasOptions, DistanceMode, OutputSource};
pub use kcenter::{brute_force_kcenter_radius, kcenter_greedy, kcenter_greedy_scored, kcenter_radius};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StrategyKind {
    Random,
    Das,
    Coreset,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 3] = [StrategyKind::Random, StrategyKind::Das, StrategyKind::Coreset];

    pub fn as_str(&self) -> &'static str {
        match self {
            StrategyKind::Random => "random",
            StrategyKind::Das => "das",
            StrategyKind::Coreset => "coreset",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "random" => Ok(StrategyKind::Random),
            "das" => Ok(StrategyKind::Das),
            "coreset" => Ok(StrategyKind::Coreset),
            other => Err(Error::config(format!(
                "unknown strategy `{other}` (expected random, das or coreset)"
            ))),
        }
    }
}

/// Provenance of one query.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectionRecord {
    pub step: usize,
    pub chosen_index: usize,
    pub strategy: StrategyKind,
    /// Disagreement distance (das) or min-distance to the centers (coreset).
    pub score: Option<f64>,
}

/// Disjoint labeled set and unlabeled pool over train-pool indices. The
/// labeled set keeps insertion order, the pool is kept sorted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolState {
    labeled: Vec<usize>,
    unlabeled: Vec<usize>,
}

impl PoolState {
    /// Everything unlabeled.
    pub fn new(pool_size: usize) -> Self {
        Self {
            labeled: Vec::new(),
            unlabeled: (0..pool_size).collect(),
        }
    }

    pub fn from_parts(labeled: Vec<usize>, mut unlabeled: Vec<usize>) -> Result<Self> {
        unlabeled.sort_unstable();
        if unlabeled.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::structural("duplicate index in the unlabeled pool"));
        }
        let mut seen = std::collections::HashSet::with_capacity(labeled.len());
        for &i in &labeled {
            if !seen.insert(i) || unlabeled.binary_search(&i).is_ok() {
                return Err(Error::structural(format!("index {i} is labeled twice or also unlabeled")));
            }
        }
        Ok(Self { labeled, unlabeled })
    }

    pub fn labeled(&self) -> &[usize] {
        &self.labeled
    }

    pub fn unlabeled(&self) -> &[usize] {
        &self.unlabeled
    }

    pub fn is_unlabeled(&self, index: usize) -> bool {
        self.unlabeled.binary_search(&index).is_ok()
    }

    /// Moves `indices` from the pool to the labeled set, in order.
    pub fn mark_labeled(&mut self, indices: &[usize]) -> Result<()> {
        for &i in indices {
            let pos = self
                .unlabeled
                .binary_search(&i)
                .map_err(|_| Error::structural(format!("index {i} is not in the unlabeled pool")))?;
            self.unlabeled.remove(pos);
            self.labeled.push(i);
        }
        Ok(())
    }
}

/// `k` distinct pool members drawn uniformly without replacement.
pub fn random_select<R: Rng + ?Sized>(pool: &PoolState, k: usize, rng: &mut R) -> Result<Vec<usize>> {
    let u = pool.unlabeled();
    if k > u.len() {
        return Err(Error::PoolExhausted(format!(
            "asked for {k} random picks from {} unlabeled items",
            u.len()
        )));
    }
    Ok(index::sample(rng, u.len(), k).into_iter().map(|p| u[p]).collect())
}

/// Eval-mode activations feeding the model's final dense layer, one row per
/// image in the batch.
pub fn embed<T: Real>(model: &Network<T>, batch: &[T]) -> Result<Vec<Vec<T>>> {
    let (flat, dim) = model.embed(batch)?;
    if dim == 0 {
        return Ok(Vec::new());
    }
    Ok(flat.chunks_exact(dim).map(<[T]>::to_vec).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn random_edge_cases() {
        let pool = PoolState::new(20);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(random_select(&pool, 0, &mut rng).unwrap().is_empty());
        let mut all = random_select(&pool, 20, &mut rng).unwrap();
        all.sort_unstable();
        assert_eq!(all, (0..20).collect::<Vec<_>>());
        assert!(matches!(random_select(&pool, 21, &mut rng), Err(Error::PoolExhausted(_))));
    }

    #[test]
    fn random_is_deterministic_and_distinct() {
        let mut pool = PoolState::new(100);
        pool.mark_labeled(&[3, 50, 7]).unwrap();
        let a = random_select(&pool, 30, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = random_select(&pool, 30, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
        let mut s = a.clone();
        s.sort_unstable();
        s.dedup();
        assert_eq!(s.len(), 30);
        assert!(a.iter().all(|&i| pool.is_unlabeled(i)));
    }

    #[test]
    fn pool_bookkeeping() {
        let mut pool = PoolState::new(5);
        pool.mark_labeled(&[4, 1]).unwrap();
        assert_eq!(pool.labeled(), &[4, 1]);
        assert_eq!(pool.unlabeled(), &[0, 2, 3]);
        assert!(pool.mark_labeled(&[1]).is_err());
        assert!(PoolState::from_parts(vec![1], vec![1, 2]).is_err());
        assert!(PoolState::from_parts(vec![1, 1], vec![2]).is_err());
        assert!(PoolState::from_parts(vec![0], vec![2, 1]).is_ok());
    }

    #[test]
    fn embedding_rows() {
        use crate::data::ImageShape;
        use crate::nn::{Layer, ModelSpec};
        let spec = ModelSpec::new(
            "e",
            ImageShape::new(1, 2, 2),
            vec![Layer::Flatten, Layer::Dense { input: 4, output: 32 }, Layer::Relu, Layer::Dense { input: 32, output: 10 }],
            10,
        )
        .unwrap();
        let net = Network::<f64>::init(spec, 1).unwrap();
        let batch = [0.1, 0.2, 0.3, 0.4, 0.1, 0.2, 0.3, 0.4];
        let rows = embed(&net, &batch).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].len(), 32);
        assert_eq!(rows[0], rows[1]);
    }

    #[test]
    fn strategy_names() {
        for s in StrategyKind::ALL {
            assert_eq!(s.as_str().parse::<StrategyKind>().unwrap(), s);
        }
        assert!("entropy".parse::<StrategyKind>().is_err());
    }
}
