//! Trie-KL soft loss and completion cross-entropy hard loss.

use super::{Policy, Transformer};
use crate::error::ModelError;
use crate::trie::TokenTrie;
use crate::vocab::TokenId;

/// Probabilities are floored at this value inside logarithms.
pub const PROB_FLOOR: f64 = 1e-30;

fn floored(lp: f64) -> f64 {
    lp.max(PROB_FLOOR.ln())
}

/// KL(q || pi) summed over the listed children only; pi is the full softmax.
fn child_kl(targets: &[(TokenId, f64)], log_probs: &[f64]) -> f64 {
    targets
        .iter()
        .filter(|(_, q)| *q > 0.0)
        .map(|&(tok, q)| q * (q.ln() - floored(log_probs[tok as usize])))
        .sum()
}

/// Mean over the prefixes of an EOS-terminated trie path of the per-prefix
/// child KL, for any policy.
pub fn soft_loss_value<P: Policy>(
    policy: &P,
    prompt: &[TokenId],
    trie: &TokenTrie,
    path: &[TokenId],
) -> Result<f64, ModelError> {
    let targets = trie.targets_along(path)?;
    let rows = policy.completion_log_probs(prompt, &path[..path.len() - 1])?;
    let total: f64 = targets.iter().zip(&rows).map(|(t, lp)| child_kl(t, lp)).sum();
    Ok(total / targets.len() as f64)
}

/// Soft loss with its gradient w.r.t. every model parameter.
pub fn soft_loss(
    model: &Transformer,
    prompt: &[TokenId],
    trie: &TokenTrie,
    path: &[TokenId],
) -> Result<(f64, Vec<f64>), ModelError> {
    let mut grads = vec![0.0; model.num_params()];
    let loss = soft_loss_accumulate(model, prompt, trie, path, 1.0, &mut grads)?;
    Ok((loss, grads))
}

/// Adds `weight` times the soft-loss gradient into `grads`; returns the loss.
pub fn soft_loss_accumulate(
    model: &Transformer,
    prompt: &[TokenId],
    trie: &TokenTrie,
    path: &[TokenId],
    weight: f64,
    grads: &mut [f64],
) -> Result<f64, ModelError> {
    let targets = trie.targets_along(path)?;
    let mut tokens = prompt.to_vec();
    tokens.extend_from_slice(&path[..path.len() - 1]);
    let cache = model.forward_train(&tokens)?;
    let v = model.config().vocab_size;
    let tau = model.temperature();
    let n = targets.len() as f64;
    let mut dlogits = vec![0.0; tokens.len() * v];
    let mut total = 0.0;
    for (k, t) in targets.iter().enumerate() {
        let pos = prompt.len() - 1 + k;
        let lp = model.log_probs_from_logits(&cache.logits[pos * v..][..v]);
        total += child_kl(t, &lp);
        let row = &mut dlogits[pos * v..][..v];
        for (r, l) in row.iter_mut().zip(&lp) {
            *r = l.exp();
        }
        for &(tok, q) in t {
            row[tok as usize] -= q;
        }
        let scale = weight / (n * tau);
        for r in row.iter_mut() {
            *r *= scale;
        }
    }
    model.backward(&cache, &dlogits, grads);
    Ok(total / n)
}

/// Mean negative log-likelihood of the completion tokens given the prompt,
/// with its gradient. Prompt positions carry no loss.
pub fn hard_loss(
    model: &Transformer,
    prompt: &[TokenId],
    completion: &[TokenId],
) -> Result<(f64, Vec<f64>), ModelError> {
    let mut grads = vec![0.0; model.num_params()];
    let loss = hard_loss_accumulate(model, prompt, completion, 1.0, &mut grads)?;
    Ok((loss, grads))
}

pub fn hard_loss_accumulate(
    model: &Transformer,
    prompt: &[TokenId],
    completion: &[TokenId],
    weight: f64,
    grads: &mut [f64],
) -> Result<f64, ModelError> {
    let mut tokens = prompt.to_vec();
    tokens.extend_from_slice(&completion[..completion.len() - 1]);
    let cache = model.forward_train(&tokens)?;
    let v = model.config().vocab_size;
    let tau = model.temperature();
    let n = completion.len() as f64;
    let mut dlogits = vec![0.0; tokens.len() * v];
    let mut total = 0.0;
    for (k, &target) in completion.iter().enumerate() {
        if target as usize >= v {
            return Err(ModelError::Token(target));
        }
        let pos = prompt.len() - 1 + k;
        let lp = model.log_probs_from_logits(&cache.logits[pos * v..][..v]);
        total -= floored(lp[target as usize]);
        let scale = weight / (n * tau);
        let row = &mut dlogits[pos * v..][..v];
        for (r, l) in row.iter_mut().zip(&lp) {
            *r = l.exp() * scale;
        }
        row[target as usize] -= scale;
    }
    model.backward(&cache, &dlogits, grads);
    Ok(total / n)
}
