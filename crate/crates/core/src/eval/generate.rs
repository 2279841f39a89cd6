//! Ancestral sampling and logit-KL probes for any [`Policy`].

use rand::RngCore;

use crate::error::ModelError;
use crate::model::{soft_loss_value, DecodeSession, Policy};
use crate::rng::open_unit;
use crate::trie::TokenTrie;
use crate::vocab::{TokenId, Vocabulary};

/// Appended to generations that hit the token limit before EOS, so they
/// never parse.
pub const OVERLONG_MARKER: &str = "<overlong>";

fn sample_token(log_probs: &[f64], u: f64) -> TokenId {
    let probs: Vec<f64> = log_probs.iter().map(|l| l.exp()).collect();
    let target = u * probs.iter().sum::<f64>();
    let mut cum = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last = i;
        }
        cum += p;
        if cum > target && p > 0.0 {
            return i as TokenId;
        }
    }
    last as TokenId
}

fn argmax(log_probs: &[f64]) -> TokenId {
    let mut best = 0;
    for (i, &l) in log_probs.iter().enumerate() {
        if l > log_probs[best] {
            best = i;
        }
    }
    best as TokenId
}

fn decode<S: DecodeSession>(
    mut session: S,
    vocab: &Vocabulary,
    max_tokens: usize,
    mut pick: impl FnMut(&[f64]) -> TokenId,
) -> String {
    let mut out = Vec::new();
    for _ in 0..max_tokens {
        let tok = pick(&session.log_probs());
        if tok == Vocabulary::EOS {
            return vocab.detokenize(&out);
        }
        out.push(tok);
        if session.push(tok).is_err() {
            break;
        }
    }
    vocab.detokenize(&out) + OVERLONG_MARKER
}

/// `n` independent generations at temperature 1 with no truncation of the
/// next-token distribution, each cut at EOS or `max_tokens`.
pub fn sample_from_model<P: Policy, R: RngCore + ?Sized>(
    policy: &P,
    prompt: &[TokenId],
    n: usize,
    rng: &mut R,
    max_tokens: usize,
    vocab: &Vocabulary,
) -> Result<Vec<String>, ModelError> {
    let start = policy.start(prompt)?;
    Ok((0..n)
        .map(|_| decode(start.clone(), vocab, max_tokens, |lp| sample_token(lp, open_unit(rng))))
        .collect())
}

/// Argmax decoding; ties go to the lowest token id.
pub fn greedy_from_model<P: Policy>(
    policy: &P,
    prompt: &[TokenId],
    max_tokens: usize,
    vocab: &Vocabulary,
) -> Result<String, ModelError> {
    Ok(decode(policy.start(prompt)?, vocab, max_tokens, argmax))
}

/// Next-token distribution right after the prompt.
pub fn first_token_probs<P: Policy>(policy: &P, prompt: &[TokenId]) -> Result<Vec<f64>, ModelError> {
    Ok(policy.start(prompt)?.log_probs().into_iter().map(f64::exp).collect())
}

/// Walks the trie from the root drawing each child with probability q.
pub fn sample_trie_path<R: RngCore + ?Sized>(trie: &TokenTrie, rng: &mut R) -> Vec<TokenId> {
    let mut node = TokenTrie::ROOT;
    let mut path = Vec::new();
    loop {
        let children = &trie.node(node).children;
        if children.is_empty() {
            return path;
        }
        let target = open_unit(rng) * trie.node(node).mass;
        let mut cum = 0.0;
        let mut chosen = *children.last().unwrap();
        for &(tok, child) in children {
            cum += trie.node(child).mass;
            if cum > target {
                chosen = (tok, child);
                break;
            }
        }
        path.push(chosen.0);
        node = chosen.1;
    }
}

/// Mean over `n_paths` sampled trie paths of the per-path mean child KL.
pub fn logit_kl<P: Policy, R: RngCore + ?Sized>(
    policy: &P,
    prompt: &[TokenId],
    trie: &TokenTrie,
    n_paths: usize,
    rng: &mut R,
) -> Result<f64, ModelError> {
    let mut total = 0.0;
    for _ in 0..n_paths {
        let path = sample_trie_path(trie, rng);
        total += soft_loss_value(policy, prompt, trie, &path)?;
    }
    Ok(total / n_paths as f64)
}
