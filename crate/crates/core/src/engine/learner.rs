//! The two trainable sides of a dual-model experiment.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{augment, AugmentConfig, ImageShape, LabeledExample};
use crate::error::{Error, Result};
use crate::nn::{adam_step, cross_entropy_loss, softmax_rows, AdamConfig, AdamState, Checkpoint, Mode, Network};

/// Settings shared by every training call of one experiment.
#[derive(Clone, Copy, Debug)]
pub struct TrainContext {
    pub step: usize,
    pub shape: ImageShape,
    pub augment: AugmentConfig,
    pub minibatch_size: usize,
    pub eval_batch_size: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TrainStats {
    pub optimizer_steps: u64,
    /// Mean minibatch loss over the last epoch (NaN when nothing ran).
    pub last_epoch_loss: f64,
}

/// A classifier that can be trained incrementally on a labeled subset of
/// the train pool and queried in eval mode.
pub trait Learner: Send + Sync {
    /// `epochs` shuffled passes over `labeled` (indices into `pool`).
    fn train_epochs(
        &mut self,
        pool: &[LabeledExample],
        labeled: &[usize],
        epochs: usize,
        ctx: &TrainContext,
    ) -> Result<TrainStats>;

    /// Eval-mode logits, one row per example.
    fn logits(&self, examples: &[&LabeledExample], eval_batch_size: usize) -> Result<Vec<Vec<f64>>>;

    /// Eval-mode features feeding the final dense layer.
    fn embed(&self, examples: &[&LabeledExample], eval_batch_size: usize) -> Result<Vec<Vec<f32>>>;

    /// Total optimizer updates so far; never decreases.
    fn optimizer_steps(&self) -> u64;

    fn checkpoint(&self) -> Option<Checkpoint<f32>>;

    /// The underlying network, for learners that have one.
    fn network_mut(&mut self) -> Option<&mut Network<f32>>;
}

fn flatten(examples: &[&LabeledExample]) -> Vec<f32> {
    examples.iter().flat_map(|e| e.pixels.iter().copied()).collect()
}

/// A [`Network`] trained with Adam, owning its random stream.
pub struct NetLearner {
    net: Network<f32>,
    adam: AdamState<f32>,
    rng: ChaCha8Rng,
}

impl NetLearner {
    pub fn new(net: Network<f32>, learning_rate: f64, seed: u64) -> Self {
        let adam = AdamState::new(
            net.params().len(),
            AdamConfig {
                learning_rate,
                ..AdamConfig::default()
            },
        );
        Self {
            net,
            adam,
            // separate stream from the weight initialization
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0xa5a5_5a5a_d00d_f00d),
        }
    }

    pub fn network(&self) -> &Network<f32> {
        &self.net
    }

    pub fn adam(&self) -> &AdamState<f32> {
        &self.adam
    }

    /// Eval-mode mean cross-entropy over `indices`.
    pub fn eval_loss(&self, pool: &[LabeledExample], indices: &[usize]) -> Result<f64> {
        let examples: Vec<&LabeledExample> = indices.iter().map(|&i| &pool[i]).collect();
        let labels: Vec<usize> = examples.iter().map(|e| e.label).collect();
        let logits = self.net.logits(&flatten(&examples))?;
        let k = self.net.num_classes();
        Ok(cross_entropy_loss(&softmax_rows(&logits, k), k, &labels)? as f64)
    }
}

impl Learner for NetLearner {
    fn train_epochs(
        &mut self,
        pool: &[LabeledExample],
        labeled: &[usize],
        epochs: usize,
        ctx: &TrainContext,
    ) -> Result<TrainStats> {
        let mut stats = TrainStats {
            optimizer_steps: 0,
            last_epoch_loss: f64::NAN,
        };
        if epochs == 0 {
            return Ok(stats);
        }
        if labeled.is_empty() {
            return Err(Error::structural("training on an empty labeled set"));
        }
        let k = self.net.num_classes();
        for epoch in 0..epochs {
            let mut order = labeled.to_vec();
            order.shuffle(&mut self.rng);
            let mut loss_sum = 0.0;
            let mut batches = 0usize;
            for chunk in order.chunks(ctx.minibatch_size) {
                let mut pixels = Vec::with_capacity(chunk.len() * ctx.shape.len());
                let mut labels = Vec::with_capacity(chunk.len());
                for &i in chunk {
                    let ex = augment(&pool[i], ctx.shape, &ctx.augment, &mut self.rng);
                    pixels.extend_from_slice(&ex.pixels);
                    labels.push(ex.label);
                }
                let (logits, trace) = self.net.forward(&pixels, Mode::Train(&mut self.rng))?;
                let loss = cross_entropy_loss(&softmax_rows(&logits, k), k, &labels)?;
                let t = self.adam.t;
                let context = || format!("step {} epoch {} after {t} optimizer steps", ctx.step, epoch + 1);
                if !loss.is_finite() {
                    return Err(Error::Divergence { context: context() });
                }
                let grads = self.net.backward(&trace.expect("train trace"), &labels)?;
                adam_step(&mut self.net.params_mut().values, &grads, &mut self.adam).map_err(|e| match e {
                    Error::Divergence { context: inner } => Error::Divergence {
                        context: format!("{}: {inner}", context()),
                    },
                    other => other,
                })?;
                loss_sum += loss as f64;
                batches += 1;
                stats.optimizer_steps += 1;
            }
            stats.last_epoch_loss = loss_sum / batches as f64;
        }
        Ok(stats)
    }

    fn logits(&self, examples: &[&LabeledExample], eval_batch_size: usize) -> Result<Vec<Vec<f64>>> {
        let k = self.net.num_classes();
        let chunks: Vec<Result<Vec<Vec<f64>>>> = examples
            .par_chunks(eval_batch_size.max(1))
            .map(|chunk| {
                let logits = self.net.logits(&flatten(chunk))?;
                Ok(logits
                    .chunks_exact(k)
                    .map(|row| row.iter().map(|&v| v as f64).collect())
                    .collect())
            })
            .collect();
        let mut out = Vec::with_capacity(examples.len());
        for c in chunks {
            out.extend(c?);
        }
        Ok(out)
    }

    fn embed(&self, examples: &[&LabeledExample], eval_batch_size: usize) -> Result<Vec<Vec<f32>>> {
        let chunks: Vec<Result<Vec<Vec<f32>>>> = examples
            .par_chunks(eval_batch_size.max(1))
            .map(|chunk| crate::strategies::embed(&self.net, &flatten(chunk)))
            .collect();
        let mut out = Vec::with_capacity(examples.len());
        for c in chunks {
            out.extend(c?);
        }
        Ok(out)
    }

    fn optimizer_steps(&self) -> u64 {
        self.adam.t
    }

    fn checkpoint(&self) -> Option<Checkpoint<f32>> {
        Some(Checkpoint {
            spec: self.net.spec().clone(),
            params: self.net.params().clone(),
            adam: Some(self.adam.clone()),
        })
    }

    fn network_mut(&mut self) -> Option<&mut Network<f32>> {
        Some(&mut self.net)
    }
}

/// Untrained stand-in for dry runs: logits are a seeded hash of the pixels
/// and training only advances the step counter.
pub struct StubLearner {
    seed: u64,
    num_classes: usize,
    steps: u64,
}

impl StubLearner {
    pub fn new(seed: u64, num_classes: usize) -> Self {
        Self {
            seed,
            num_classes,
            steps: 0,
        }
    }

    fn mix(mut z: u64) -> u64 {
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
}

impl Learner for StubLearner {
    fn train_epochs(
        &mut self,
        _pool: &[LabeledExample],
        labeled: &[usize],
        epochs: usize,
        ctx: &TrainContext,
    ) -> Result<TrainStats> {
        if epochs > 0 && labeled.is_empty() {
            return Err(Error::structural("training on an empty labeled set"));
        }
        let per_epoch = labeled.len().div_ceil(ctx.minibatch_size) as u64;
        let n = per_epoch * epochs as u64;
        self.steps += n;
        Ok(TrainStats {
            optimizer_steps: n,
            last_epoch_loss: 0.0,
        })
    }

    fn logits(&self, examples: &[&LabeledExample], _eval_batch_size: usize) -> Result<Vec<Vec<f64>>> {
        Ok(examples
            .iter()
            .map(|ex| {
                let h = ex
                    .pixels
                    .iter()
                    .fold(Self::mix(self.seed), |h, p| Self::mix(h ^ p.to_bits() as u64));
                (0..self.num_classes)
                    .map(|c| {
                        let v = Self::mix(h.wrapping_add(c as u64));
                        (v >> 11) as f64 / (1u64 << 53) as f64 * 4.0 - 2.0
                    })
                    .collect()
            })
            .collect())
    }

    fn embed(&self, examples: &[&LabeledExample], _eval_batch_size: usize) -> Result<Vec<Vec<f32>>> {
        Ok(examples.iter().map(|e| e.pixels.clone()).collect())
    }

    fn optimizer_steps(&self) -> u64 {
        self.steps
    }

    fn checkpoint(&self) -> Option<Checkpoint<f32>> {
        None
    }

    fn network_mut(&mut self) -> Option<&mut Network<f32>> {
        None
    }
}
