use std::collections::HashMap;
use std::sync::Arc;

use super::{DecodeSession, Policy};
use crate::error::ModelError;
use crate::trie::TokenTrie;
use crate::vocab::TokenId;

/// Policy that emits the trie target q(.|prefix) exactly for known prompts.
///
/// Off-trie tokens get probability zero. Unknown prompts and prefixes that
/// leave the trie fall back to the uniform distribution.
#[derive(Debug, Clone, Default)]
pub struct TabularPolicy {
    vocab_size: usize,
    tries: HashMap<Vec<TokenId>, Arc<TokenTrie>>,
}

impl TabularPolicy {
    pub fn new(vocab_size: usize) -> Self {
        TabularPolicy {
            vocab_size,
            tries: HashMap::new(),
        }
    }

    pub fn insert(&mut self, prompt: Vec<TokenId>, trie: Arc<TokenTrie>) {
        self.tries.insert(prompt, trie);
    }

    fn row(&self, trie: Option<&TokenTrie>, node: Option<usize>) -> Vec<f64> {
        match (trie, node) {
            (Some(t), Some(n)) if !t.node(n).children.is_empty() => {
                let mut lp = vec![f64::NEG_INFINITY; self.vocab_size];
                for (tok, q) in t.targets_at(n) {
                    lp[tok as usize] = q.ln();
                }
                lp
            }
            _ => vec![-(self.vocab_size as f64).ln(); self.vocab_size],
        }
    }
}

#[derive(Debug, Clone)]
pub struct TabularSession<'a> {
    policy: &'a TabularPolicy,
    trie: Option<&'a TokenTrie>,
    node: Option<usize>,
    len: usize,
}

impl DecodeSession for TabularSession<'_> {
    fn log_probs(&self) -> Vec<f64> {
        self.policy.row(self.trie, self.node)
    }

    fn push(&mut self, tok: TokenId) -> Result<(), ModelError> {
        if tok as usize >= self.policy.vocab_size {
            return Err(ModelError::Token(tok));
        }
        self.node = match (self.trie, self.node) {
            (Some(t), Some(n)) => t.child(n, tok),
            _ => None,
        };
        self.len += 1;
        Ok(())
    }

    fn len(&self) -> usize {
        self.len
    }
}

impl Policy for TabularPolicy {
    type Session<'a> = TabularSession<'a>;

    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn completion_log_probs(
        &self,
        prompt: &[TokenId],
        completion: &[TokenId],
    ) -> Result<Vec<Vec<f64>>, ModelError> {
        let mut s = self.start(prompt)?;
        let mut out = Vec::with_capacity(completion.len() + 1);
        out.push(s.log_probs());
        for &t in completion {
            s.push(t)?;
            out.push(s.log_probs());
        }
        Ok(out)
    }

    fn start(&self, prompt: &[TokenId]) -> Result<TabularSession<'_>, ModelError> {
        let trie = self.tries.get(prompt).map(|t| t.as_ref());
        Ok(TabularSession {
            policy: self,
            trie,
            node: trie.map(|_| TokenTrie::ROOT),
            len: prompt.len(),
        })
    }
}
