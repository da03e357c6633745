//! Toy transformer encoder classifier with analytic gradients.
//!
//! Architecture per layer: pre-norm multi-head self-attention with a
//! residual, then a pre-norm ReLU feed-forward block with a residual.
//! Frame features are mean-pooled and a linear head maps to the two class
//! logits. No dropout, no positional encoding; temporal structure enters
//! through the synthetic data itself.

mod backward;
mod checkpoint;
mod forward;
mod params;
mod store;

pub use backward::{backward, GradientSet};
pub use checkpoint::{
    apply_delta, read_base, read_delta, write_base, write_delta, DeltaCheckpoint,
};
pub use forward::{attention, cross_entropy, forward};
pub use params::{names, ModelConfig, ModelParams, INIT_STD, LN_EPS};
pub use store::{NamedTensor, TensorStore};
