//! A minimal trainable classifier: dense and convolutional layers, relu,
//! inverted dropout, softmax cross-entropy, manual backpropagation and Adam.

mod adam;
mod checkpoint;
mod gradcheck;
mod loss;
mod network;
mod params;
mod spec;

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use loss::{argmax, cross_entropy_loss, softmax, softmax_rows, PROB_FLOOR};
pub use network::{ForwardTrace, Mode, Network};
pub use params::{init_params, LayerSlot, Params};
pub use spec::{Activation, ConvGeometry, Layer, ModelSpec, PRESET_NAMES};

/// Floating-point element type of a network.
pub trait Real: Float + FromPrimitive + Sum + Send + Sync + Debug + Default + 'static {
    /// Byte width of the little-endian encoding.
    const WIDTH: u8;

    fn from_f64_lossy(v: f64) -> Self;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Real for f32 {
    const WIDTH: u8 = 4;

    fn from_f64_lossy(v: f64) -> Self {
        v as f32
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().expect("4 bytes"))
    }
}

impl Real for f64 {
    const WIDTH: u8 = 8;

    fn from_f64_lossy(v: f64) -> Self {
        v
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"))
    }
}
