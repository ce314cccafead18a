//! Minimal dense compute kernel with reverse-mode differentiation.
//!
//! All models in this crate are built from the ops on [`Tape`]; parameters
//! live in a [`ParameterStore`] and persist via the MIML weight file format.

mod optim;
mod tape;
mod tensor;
mod weights;

pub use optim::{adam_step, AdamConfig};
pub use tape::{sigmoid, Gradients, NodeId, Tape};
pub use tensor::{AdamState, ParameterStore, Tensor};
pub use weights::{crc32, load_weights, save_weights};

const BCE_CLIP: f64 = 1e-7;

/// Binary cross entropy on a probability, clipped away from {0, 1}.
pub fn bce_loss(p: f64, y: f64) -> f64 {
    let p = p.clamp(BCE_CLIP, 1.0 - BCE_CLIP);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}
