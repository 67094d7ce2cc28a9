//! Synthetic fixtures. The two-class set has an easy class A and a hard
//! class B whose examples are noisy and partially mislabeled.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ImageShape, LabeledExample};
use crate::error::{Error, Result};

pub const SYNTH_SHAPE: ImageShape = ImageShape::new(3, 8, 8);

const CLASS_A: usize = 0;
const CLASS_B: usize = 1;
const A_JITTER: f32 = 0.02;
const B_JITTER: f32 = 0.3;

/// Template intensity: class A is bright on the top half, class B on the
/// bottom half. Horizontal flips leave both templates unchanged.
fn template(class: usize, y: usize) -> f32 {
    let top = y < SYNTH_SHAPE.height / 2;
    if top == (class == CLASS_A) {
        0.7
    } else {
        0.3
    }
}

fn draw(class: usize, jitter: f32, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let mut pixels = Vec::with_capacity(SYNTH_SHAPE.len());
    for _c in 0..SYNTH_SHAPE.channels {
        for y in 0..SYNTH_SHAPE.height {
            for _x in 0..SYNTH_SHAPE.width {
                let noise = rng.random_range(-jitter..=jitter);
                pixels.push((template(class, y) + noise).clamp(0.0, 1.0));
            }
        }
    }
    pixels
}

/// `n_per_class` class-A examples followed by `n_per_class` class-B
/// examples, of which exactly `floor(noise_rate_b * n_per_class)` carry the
/// class-A label.
pub fn synth_two_class(n_per_class: usize, noise_rate_b: f64, seed: u64) -> Result<Vec<LabeledExample>> {
    if !(0.0..=0.5).contains(&noise_rate_b) {
        return Err(Error::config(format!(
            "noise rate {noise_rate_b} outside [0, 0.5]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(2 * n_per_class);
    for _ in 0..n_per_class {
        out.push(LabeledExample::new(draw(CLASS_A, A_JITTER, &mut rng), CLASS_A));
    }
    for _ in 0..n_per_class {
        out.push(LabeledExample::new(draw(CLASS_B, B_JITTER, &mut rng), CLASS_B));
    }
    let flips = (noise_rate_b * n_per_class as f64).floor() as usize;
    for i in index::sample(&mut rng, n_per_class, flips) {
        out[n_per_class + i].label = CLASS_A;
    }
    Ok(out)
}

/// Generating class (before label noise) of the example at `origin` in the
/// output of [`synth_two_class`].
pub fn synth_source_class(origin: usize, n_per_class: usize) -> usize {
    if origin < n_per_class {
        CLASS_A
    } else {
        CLASS_B
    }
}

/// Uniform random pixels with uniformly drawn labels. Used where only the
/// bookkeeping of a run matters, not what the models learn.
pub fn synth_placeholder(count: usize, num_classes: usize, shape: ImageShape, seed: u64) -> Vec<LabeledExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let pixels = (0..shape.len()).map(|_| rng.random::<f32>()).collect();
            LabeledExample::new(pixels, rng.random_range(0..num_classes))
        })
        .collect()
}
