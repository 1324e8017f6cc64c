//! Minimal feed-forward network with exact reverse-mode gradients.
//!
//! The same [`MlpParams`] type backs the ε-prediction denoiser and the
//! compensation module. Gradients are returned in an `MlpParams`-shaped value
//! so Adam and checkpointing can walk parameters and moments in one layout.

mod adam;
mod checkpoint;
mod embedding;
mod mlp;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{
    load_checkpoint, load_checkpoint_expecting, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use embedding::TimeEmbedding;
pub use mlp::{mlp_forward, mlp_grad, mlp_init, Activation, Loss, MlpParams};
