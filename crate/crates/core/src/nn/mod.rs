//! Dense networks with exact reverse-mode gradients, Adam, and checkpointing.

pub mod checkpoint;
mod dense;
mod optim;

pub use dense::{
    glorot_bound, linear_specs, mlp_specs, Activation, DenseLayer, DenseNetwork, Gradients,
    LayerSpec, Tape, DEFAULT_LEAKY_ALPHA,
};
pub use optim::{cosine_lr, AdamConfig, AdamState};

/// Mirror-symmetric decoder widths for an encoder with the given widths.
///
/// An encoder `D -> [256, 64, 16, 2]` yields decoder widths `[16, 64, 256, D]`.
pub fn mirrored_widths(input_dim: usize, encoder_widths: &[usize]) -> Vec<usize> {
    let mut widths: Vec<usize> = encoder_widths.iter().rev().skip(1).copied().collect();
    widths.push(input_dim);
    widths
}
