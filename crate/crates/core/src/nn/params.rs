use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{ModelSpec, Real};
use crate::error::{Error, Result};

/// Location of one layer's weights and biases inside the flat vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSlot {
    pub offset: usize,
    pub weights: usize,
    pub biases: usize,
}

impl LayerSlot {
    pub fn weight_range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.weights
    }

    pub fn bias_range(&self) -> std::ops::Range<usize> {
        self.offset + self.weights..self.offset + self.weights + self.biases
    }
}

/// Flat parameter storage plus the per-layer slot table. Dense weights are
/// `[output][input]`, conv weights `[out_ch][in_ch][ky][kx]`; biases follow
/// the weights of their layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Params<T> {
    pub values: Vec<T>,
    pub slots: Vec<Option<LayerSlot>>,
}

impl<T: Real> Params<T> {
    pub fn zeros(spec: &ModelSpec) -> Self {
        let mut offset = 0;
        let slots = spec
            .layers
            .iter()
            .map(|layer| {
                if layer.param_count() == 0 {
                    return None;
                }
                let slot = LayerSlot {
                    offset,
                    weights: layer.weight_count(),
                    biases: layer.bias_count(),
                };
                offset += layer.param_count();
                Some(slot)
            })
            .collect();
        Self {
            values: vec![T::zero(); offset],
            slots,
        }
    }

    /// Wraps an existing flat vector, checking it against the spec.
    pub fn from_values(spec: &ModelSpec, values: Vec<T>) -> Result<Self> {
        let mut params = Self::zeros(spec);
        if values.len() != params.values.len() {
            return Err(Error::structural(format!(
                "{} parameter values for a spec with {} parameters",
                values.len(),
                params.values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::structural("non-finite parameter value"));
        }
        params.values = values;
        Ok(params)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// He-normal weights (std `sqrt(2 / fan_in)`) and zero biases.
pub fn init_params<T: Real>(spec: &ModelSpec, seed: u64) -> Params<T> {
    let mut params = Params::<T>::zeros(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (layer, slot) in spec.layers.iter().zip(&params.slots.clone()) {
        let Some(slot) = slot else { continue };
        let std = (2.0 / layer.fan_in() as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        for w in &mut params.values[slot.weight_range()] {
            *w = T::from_f64_lossy(normal.sample(&mut rng));
        }
    }
    params
}
