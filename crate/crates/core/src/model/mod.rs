//! Next-token policies, losses and optimization.
//!
//! [`Transformer`] is the trainable model. [`TabularPolicy`] replays trie
//! targets exactly and serves as a reference policy in tests and probes.

mod checkpoint;
mod loss;
mod optim;
mod tabular;
mod transformer;

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use loss::{hard_loss, hard_loss_accumulate, soft_loss, soft_loss_accumulate, soft_loss_value, PROB_FLOOR};
pub use optim::OptimizerState;
pub use tabular::{TabularPolicy, TabularSession};
pub use transformer::{Layout, ModelConfig, Transformer, TransformerSession};

use crate::error::ModelError;
use crate::vocab::TokenId;

/// Incremental decoding state after a prompt and zero or more tokens.
pub trait DecodeSession: Clone + Send {
    /// Log-probabilities of the next token.
    fn log_probs(&self) -> Vec<f64>;
    fn push(&mut self, tok: TokenId) -> Result<(), ModelError>;
    /// Number of tokens consumed so far, prompt included.
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Anything that assigns next-token distributions to token prefixes.
pub trait Policy: Sync {
    type Session<'a>: DecodeSession
    where
        Self: 'a;

    fn vocab_size(&self) -> usize;

    /// Next-token log-probabilities after `prompt ++ completion[..k]` for
    /// k = 0..=completion.len().
    fn completion_log_probs(
        &self,
        prompt: &[TokenId],
        completion: &[TokenId],
    ) -> Result<Vec<Vec<f64>>, ModelError>;

    fn start(&self, prompt: &[TokenId]) -> Result<Self::Session<'_>, ModelError>;
}

/// Numerically stable log-softmax.
pub fn log_softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    z.iter().map(|x| x - lse).collect()
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    log_softmax(z).into_iter().map(f64::exp).collect()
}
