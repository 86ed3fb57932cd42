//! Minimal differentiable network engine.
//!
//! Tensors are f64, layers carry analytic backward passes, and
//! [`gradcheck`] verifies them against central finite differences.

mod adam;
mod checkpoint;
pub mod gradcheck;
mod layers;
mod network;
mod tensor;

pub use adam::{adam_step, AdamParams, AdamState, StepOutcome};
pub use checkpoint::{load_checkpoint, save_checkpoint, WOCK_MAGIC, WOCK_VERSION};
pub(crate) use layers::dot;
pub use layers::{Layer, LayerCache, LayerSpec, NORM_GUARD};
pub use network::{DeskScale, Forward, Gradients, Network, NetworkSpec};
pub use tensor::Tensor;
