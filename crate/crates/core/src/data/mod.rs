//! Datasets: CIFAR-10 ingestion, synthetic fixtures, deterministic splits and
//! training-time augmentation.

mod augment;
mod cifar;
mod synth;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub use augment::{augment, augment_with, AugmentConfig};
pub use cifar::{
    load_cifar10_dir, parse_cifar10_file, serialize_cifar10, CIFAR_BATCH_FILES, CIFAR_CLASSES,
    CIFAR_RECORD_BYTES, CIFAR_SHAPE,
};
pub use synth::{synth_placeholder, synth_source_class, synth_two_class, SYNTH_SHAPE};

/// Channel-major image geometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ImageShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ImageShape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    pub const fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl std::fmt::Display for ImageShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

/// One image with pixels in `[0, 1]`, stored channel-major, and its class.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledExample {
    pub pixels: Vec<f32>,
    pub label: usize,
}

impl LabeledExample {
    pub fn new(pixels: Vec<f32>, label: usize) -> Self {
        Self { pixels, label }
    }

    pub fn validate(&self, shape: ImageShape, num_classes: usize) -> Result<()> {
        if self.pixels.len() != shape.len() {
            return Err(Error::structural(format!(
                "example has {} pixels, expected {} for shape {shape}",
                self.pixels.len(),
                shape.len()
            )));
        }
        if self.label >= num_classes {
            return Err(Error::structural(format!(
                "label {} outside 0..{num_classes}",
                self.label
            )));
        }
        Ok(())
    }
}

/// A collection of examples sharing one geometry and label space.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub shape: ImageShape,
    pub num_classes: usize,
    pub examples: Vec<LabeledExample>,
}

impl Dataset {
    pub fn new(shape: ImageShape, num_classes: usize, examples: Vec<LabeledExample>) -> Result<Self> {
        for ex in &examples {
            ex.validate(shape, num_classes)?;
        }
        Ok(Self {
            shape,
            num_classes,
            examples,
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// Requested cardinalities of the three partitions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitSizes {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

impl SplitSizes {
    pub const fn new(train: usize, validation: usize, test: usize) -> Self {
        Self {
            train,
            validation,
            test,
        }
    }

    pub const fn total(&self) -> usize {
        self.train + self.validation + self.test
    }
}

impl Default for SplitSizes {
    fn default() -> Self {
        Self::new(48_000, 2_000, 10_000)
    }
}

/// Train pool, validation and test partitions. The `*_origin` vectors hold
/// the position of every example in the dataset the split was drawn from.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub shape: ImageShape,
    pub num_classes: usize,
    pub train_pool: Vec<LabeledExample>,
    pub validation: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
    pub train_origin: Vec<usize>,
    pub validation_origin: Vec<usize>,
    pub test_origin: Vec<usize>,
}

/// Shuffles the dataset under `seed` and partitions the permutation in
/// order: train pool first, then validation, then test.
pub fn split_dataset(dataset: &Dataset, sizes: SplitSizes, seed: u64) -> Result<DatasetSplit> {
    if sizes.total() > dataset.len() {
        return Err(Error::config(format!(
            "split sizes {}+{}+{} exceed the {} available examples",
            sizes.train,
            sizes.validation,
            sizes.test,
            dataset.len()
        )));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let (train_origin, rest) = order.split_at(sizes.train);
    let (validation_origin, rest) = rest.split_at(sizes.validation);
    let test_origin = &rest[..sizes.test];

    let take = |idx: &[usize]| -> Vec<LabeledExample> {
        idx.iter().map(|&i| dataset.examples[i].clone()).collect()
    };
    Ok(DatasetSplit {
        shape: dataset.shape,
        num_classes: dataset.num_classes,
        train_pool: take(train_origin),
        validation: take(validation_origin),
        test: take(test_origin),
        train_origin: train_origin.to_vec(),
        validation_origin: validation_origin.to_vec(),
        test_origin: test_origin.to_vec(),
    })
}

/// Per-channel standardization using train-pool statistics. Leaves pixels
/// outside `[0, 1]`, so it is opt-in.
pub fn standardize(split: &mut DatasetSplit) {
    let plane = split.shape.height * split.shape.width;
    let channels = split.shape.channels;
    let mut mean = vec![0f64; channels];
    let mut sq = vec![0f64; channels];
    let count = (split.train_pool.len() * plane).max(1) as f64;
    for ex in &split.train_pool {
        for c in 0..channels {
            for &p in &ex.pixels[c * plane..(c + 1) * plane] {
                mean[c] += p as f64;
                sq[c] += (p as f64) * (p as f64);
            }
        }
    }
    let stats: Vec<(f32, f32)> = (0..channels)
        .map(|c| {
            let m = mean[c] / count;
            let var = (sq[c] / count - m * m).max(0.0);
            (m as f32, var.sqrt().max(1e-6) as f32)
        })
        .collect();
    let apply = |examples: &mut Vec<LabeledExample>| {
        for ex in examples {
            for (c, &(m, s)) in stats.iter().enumerate() {
                for p in &mut ex.pixels[c * plane..(c + 1) * plane] {
                    *p = (*p - m) / s;
                }
            }
        }
    };
    apply(&mut split.train_pool);
    apply(&mut split.validation);
    apply(&mut split.test);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize) -> Dataset {
        let shape = ImageShape::new(1, 1, 1);
        let examples = (0..n)
            .map(|i| LabeledExample::new(vec![i as f32 / n as f32], i % 3))
            .collect();
        Dataset::new(shape, 3, examples).unwrap()
    }

    #[test]
    fn split_has_requested_cardinalities() {
        let ds = toy(600);
        let split = split_dataset(&ds, SplitSizes::new(480, 20, 100), 7).unwrap();
        assert_eq!(split.train_pool.len(), 480);
        assert_eq!(split.validation.len(), 20);
        assert_eq!(split.test.len(), 100);
    }

    #[test]
    fn paper_split_of_sixty_thousand() {
        let shape = ImageShape::new(1, 1, 1);
        let examples = (0..60_000).map(|i| LabeledExample::new(vec![0.0], i % 10)).collect();
        let ds = Dataset::new(shape, 10, examples).unwrap();
        let split = split_dataset(&ds, SplitSizes::default(), 7).unwrap();
        assert_eq!(split.train_pool.len(), 48_000);
        assert_eq!(split.validation.len(), 2_000);
        assert_eq!(split.test.len(), 10_000);
    }

    #[test]
    fn empty_split() {
        let split = split_dataset(&toy(5), SplitSizes::new(0, 0, 0), 1).unwrap();
        assert!(split.train_pool.is_empty() && split.validation.is_empty() && split.test.is_empty());
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let ds = toy(100);
        let a = split_dataset(&ds, SplitSizes::new(50, 10, 30), 3).unwrap();
        let b = split_dataset(&ds, SplitSizes::new(50, 10, 30), 3).unwrap();
        assert_eq!(a, b);
        let mut all: Vec<usize> = a
            .train_origin
            .iter()
            .chain(&a.validation_origin)
            .chain(&a.test_origin)
            .copied()
            .collect();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 90);
        let c = split_dataset(&ds, SplitSizes::new(50, 10, 30), 4).unwrap();
        assert_ne!(a.train_origin, c.train_origin);
    }

    #[test]
    fn oversized_split_is_rejected() {
        let err = split_dataset(&toy(10), SplitSizes::new(5, 5, 1), 0).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn standardize_centers_train_channels() {
        let ds = toy(50);
        let mut split = split_dataset(&ds, SplitSizes::new(40, 5, 5), 0).unwrap();
        standardize(&mut split);
        let mean: f32 = split.train_pool.iter().map(|e| e.pixels[0]).sum::<f32>() / 40.0;
        assert!(mean.abs() < 1e-5);
    }
}
