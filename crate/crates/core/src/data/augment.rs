use rand::Rng;

use super::{ImageShape, LabeledExample};
use crate::error::{Error, Result};

/// Random crop from a zero-padded image followed by a random horizontal flip.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentConfig {
    /// Zero padding added on every side before cropping.
    pub pad: usize,
    pub crop_size: usize,
    pub flip_prob: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            pad: 4,
            crop_size: 32,
            flip_prob: 0.5,
        }
    }
}

impl AugmentConfig {
    /// No padding, no flip: augmentation becomes the identity.
    pub fn disabled(size: usize) -> Self {
        Self {
            pad: 0,
            crop_size: size,
            flip_prob: 0.0,
        }
    }

    /// Checks the config against an image geometry. The crop must reproduce
    /// the input geometry so augmented images stay valid model inputs.
    pub fn validate(&self, shape: ImageShape) -> Result<()> {
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::config(format!(
                "flip probability {} outside [0, 1]",
                self.flip_prob
            )));
        }
        let padded_h = shape.height + 2 * self.pad;
        let padded_w = shape.width + 2 * self.pad;
        if self.crop_size > padded_h || self.crop_size > padded_w {
            return Err(Error::config(format!(
                "crop size {} exceeds padded size {padded_h}x{padded_w}",
                self.crop_size
            )));
        }
        if self.crop_size != shape.height || self.crop_size != shape.width {
            return Err(Error::config(format!(
                "crop size {} must match the image size {}x{}",
                self.crop_size, shape.height, shape.width
            )));
        }
        Ok(())
    }

    fn max_offset(&self, shape: ImageShape) -> (usize, usize) {
        (
            shape.height + 2 * self.pad - self.crop_size,
            shape.width + 2 * self.pad - self.crop_size,
        )
    }
}

/// Draws a crop offset uniformly over all valid offsets and a flip with
/// probability `flip_prob`, then applies them. `cfg` must have been
/// validated against `shape`.
pub fn augment<R: Rng + ?Sized>(
    example: &LabeledExample,
    shape: ImageShape,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> LabeledExample {
    let (max_y, max_x) = cfg.max_offset(shape);
    let dy = rng.random_range(0..=max_y);
    let dx = rng.random_range(0..=max_x);
    let flip = rng.random::<f64>() < cfg.flip_prob;
    augment_with(example, shape, cfg, (dy, dx), flip)
}

/// Deterministic core of [`augment`]: crop at `offset` within the padded
/// image, then mirror columns if `flip`.
pub fn augment_with(
    example: &LabeledExample,
    shape: ImageShape,
    cfg: &AugmentConfig,
    offset: (usize, usize),
    flip: bool,
) -> LabeledExample {
    let crop = cfg.crop_size;
    let (h, w) = (shape.height as isize, shape.width as isize);
    let pad = cfg.pad as isize;
    let mut out = vec![0f32; shape.channels * crop * crop];
    for c in 0..shape.channels {
        let src = &example.pixels[c * shape.height * shape.width..(c + 1) * shape.height * shape.width];
        let dst = &mut out[c * crop * crop..(c + 1) * crop * crop];
        for y in 0..crop {
            let sy = (y + offset.0) as isize - pad;
            if sy < 0 || sy >= h {
                continue;
            }
            for x in 0..crop {
                let sx = (x + offset.1) as isize - pad;
                if sx < 0 || sx >= w {
                    continue;
                }
                let tx = if flip { crop - 1 - x } else { x };
                dst[y * crop + tx] = src[(sy * w + sx) as usize];
            }
        }
    }
    LabeledExample::new(out, example.label)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const SHAPE: ImageShape = ImageShape::new(2, 6, 6);

    fn ramp() -> LabeledExample {
        let pixels = (0..SHAPE.len()).map(|i| i as f32 / SHAPE.len() as f32).collect();
        LabeledExample::new(pixels, 4)
    }

    fn cfg() -> AugmentConfig {
        AugmentConfig {
            pad: 4,
            crop_size: 6,
            flip_prob: 0.5,
        }
    }

    #[test]
    fn flip_twice_is_identity() {
        let ex = ramp();
        let c = AugmentConfig { pad: 0, ..cfg() };
        let once = augment_with(&ex, SHAPE, &c, (0, 0), true);
        assert_ne!(once, ex);
        assert_eq!(augment_with(&once, SHAPE, &c, (0, 0), true), ex);
    }

    #[test]
    fn center_offset_is_identity() {
        let ex = ramp();
        assert_eq!(augment_with(&ex, SHAPE, &cfg(), (4, 4), false), ex);
    }

    #[test]
    fn corner_offset_shifts_by_pad() {
        let mut pixels = vec![0f32; SHAPE.len()];
        pixels[0] = 1.0;
        let ex = LabeledExample::new(pixels, 0);
        let out = augment_with(&ex, SHAPE, &cfg(), (0, 0), false);
        // padded (4,4) holds the original (0,0); crop from (0,0) keeps it there
        assert_eq!(out.pixels[4 * 6 + 4], 1.0);
        assert_eq!(out.pixels.iter().filter(|&&p| p != 0.0).count(), 1);
    }

    #[test]
    fn validate_rejects_bad_configs() {
        assert!(cfg().validate(SHAPE).is_ok());
        assert!(AugmentConfig { flip_prob: 1.5, ..cfg() }.validate(SHAPE).is_err());
        assert!(AugmentConfig { crop_size: 20, ..cfg() }.validate(SHAPE).is_err());
        assert!(AugmentConfig { crop_size: 5, ..cfg() }.validate(SHAPE).is_err());
    }

    #[test]
    fn flip_probability_is_respected() {
        let ex = ramp();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let always = AugmentConfig { pad: 0, crop_size: 6, flip_prob: 1.0 };
        let flipped = augment_with(&ex, SHAPE, &always, (0, 0), true);
        for _ in 0..10 {
            assert_eq!(augment(&ex, SHAPE, &always, &mut rng), flipped);
        }
        let never = AugmentConfig { flip_prob: 0.0, ..always };
        assert_eq!(augment(&ex, SHAPE, &never, &mut rng), ex);
    }

    proptest! {
        #[test]
        fn augment_preserves_label_shape_and_range(seed in any::<u64>(), pad in 0usize..5) {
            let ex = ramp();
            let c = AugmentConfig { pad, ..cfg() };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let out = augment(&ex, SHAPE, &c, &mut rng);
            prop_assert_eq!(out.label, ex.label);
            prop_assert_eq!(out.pixels.len(), ex.pixels.len());
            prop_assert!(out.pixels.iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }
}
