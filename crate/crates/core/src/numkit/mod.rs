//! Dense matrices, a tanh feedforward network with reverse-mode gradients,
//! Adam, and the parameter checkpoint format.

mod adam;
mod checkpoint;
mod matrix;
mod net;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{decode_net, encode_net, load_net, save_net, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use matrix::{gemm, Matrix};
pub use net::{FeedForwardNet, GradientTape};
