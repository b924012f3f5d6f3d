//! Minimal differentiable building blocks for the critic.
//!
//! Reverse-mode derivatives are written out by hand for the one architecture family
//! used here: token embedding, gated recurrent encoder per text field, concatenation,
//! and two affine layers. Everything runs in `f64`.

mod adam;
mod checkpoint;
mod gradcheck;
mod gru;
mod head;
mod linear;
mod network;
mod tensor;
mod tokenize;

use serde::{Deserialize, Serialize};

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{Checkpoint, CheckpointHeader, TensorRecord, CHECKPOINT_FORMAT_VERSION};
pub use gradcheck::{finite_diff_check, GradCheckReport, RELATIVE_ERROR_FLOOR};
pub use gru::GruEncoder;
pub use head::Head;
pub use linear::{LinearModel, LinearSample};
pub use network::{FieldNetwork, NetTrace};
pub use tensor::{GradTensor, Tensor};
pub use tokenize::{fnv1a, tokenize};

use crate::error::Result;

pub const DEFAULT_VOCAB_SIZE: usize = 8192;
pub const DEFAULT_EMBED_DIM: usize = 64;
pub const DEFAULT_HIDDEN_DIM: usize = 128;

/// Encoder dimensions shared by every field network of a critic.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            vocab_size: DEFAULT_VOCAB_SIZE,
            embed_dim: DEFAULT_EMBED_DIM,
            hidden_dim: DEFAULT_HIDDEN_DIM,
        }
    }
}

/// A model whose trainable state is an ordered list of named tensors.
///
/// Gradients, optimizer moments and checkpoints all follow this order.
pub trait Parameterized {
    fn named_tensors(&self) -> Vec<(String, &Tensor)>;
    fn tensors_mut(&mut self) -> Vec<&mut Tensor>;

    fn num_params(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }
}

/// A scalar loss over a batch together with its exact gradient.
pub trait Objective<B: ?Sized>: Parameterized {
    fn loss(&self, batch: &B) -> Result<f64>;

    /// Loss and reverse-mode derivatives, aligned with [`Parameterized::named_tensors`].
    fn compute_gradients(&self, batch: &B) -> Result<(f64, Vec<GradTensor>)>;
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}
