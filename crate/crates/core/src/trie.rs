//! Prefix trie over tokenized canonical outputs.
//!
//! Each node stores the total mass of the outputs whose token sequence passes
//! through it. The next-token target at a prefix is the child mass divided by
//! the node mass.

use serde_json::{json, Map, Value};

use crate::discretize::OutputSpace;
use crate::error::{TrieError, VocabError};
use crate::vocab::{TokenId, Vocabulary};

#[derive(Debug, Clone, PartialEq)]
pub struct TrieNode {
    pub mass: f64,
    /// Sorted by token id.
    pub children: Vec<(TokenId, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenTrie {
    nodes: Vec<TrieNode>,
}

impl TokenTrie {
    pub const ROOT: usize = 0;

    /// Inserts every positive-mass entry of `space`, terminated by EOS.
    pub fn build(space: &OutputSpace, vocab: &Vocabulary) -> Result<Self, VocabError> {
        let mut trie = TokenTrie {
            nodes: vec![TrieNode {
                mass: 0.0,
                children: Vec::new(),
            }],
        };
        for entry in space.entries() {
            if entry.mass <= 0.0 {
                continue;
            }
            let tokens = vocab.tokenize_output(&entry.canonical)?;
            trie.insert(&tokens, entry.mass);
        }
        Ok(trie)
    }

    fn insert(&mut self, tokens: &[TokenId], mass: f64) {
        let mut node = Self::ROOT;
        self.nodes[node].mass += mass;
        for &tok in tokens {
            let next = match self.nodes[node].children.binary_search_by_key(&tok, |c| c.0) {
                Ok(pos) => self.nodes[node].children[pos].1,
                Err(pos) => {
                    let id = self.nodes.len();
                    self.nodes.push(TrieNode {
                        mass: 0.0,
                        children: Vec::new(),
                    });
                    self.nodes[node].children.insert(pos, (tok, id));
                    id
                }
            };
            node = next;
            self.nodes[node].mass += mass;
        }
    }

    pub fn node(&self, idx: usize) -> &TrieNode {
        &self.nodes[idx]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.len() <= 1
    }

    pub fn root_mass(&self) -> f64 {
        self.nodes[Self::ROOT].mass
    }

    pub fn child(&self, node: usize, tok: TokenId) -> Option<usize> {
        let children = &self.nodes[node].children;
        children
            .binary_search_by_key(&tok, |c| c.0)
            .ok()
            .map(|pos| children[pos].1)
    }

    /// Node reached by following `prefix` from the root.
    pub fn walk(&self, prefix: &[TokenId]) -> Result<usize, TrieError> {
        prefix.iter().try_fold(Self::ROOT, |node, &tok| {
            self.child(node, tok)
                .ok_or_else(|| TrieError::Path(prefix.to_vec()))
        })
    }

    /// q(v | node) over the node's children, in token order.
    pub fn targets_at(&self, node: usize) -> Vec<(TokenId, f64)> {
        let n = &self.nodes[node];
        n.children
            .iter()
            .map(|&(tok, child)| (tok, self.nodes[child].mass / n.mass))
            .collect()
    }

    /// Next-token target distribution after `prefix`.
    pub fn next_token_target(&self, prefix: &[TokenId]) -> Result<Vec<(TokenId, f64)>, TrieError> {
        let node = self.walk(prefix)?;
        if self.nodes[node].children.is_empty() {
            return Err(TrieError::Path(prefix.to_vec()));
        }
        Ok(self.targets_at(node))
    }

    /// Soft targets along a full EOS-terminated path: one distribution per
    /// prefix `t_1..t_k`, k = 0..len-1.
    pub fn targets_along(&self, path: &[TokenId]) -> Result<Vec<Vec<(TokenId, f64)>>, TrieError> {
        let mut node = Self::ROOT;
        let mut out = Vec::with_capacity(path.len());
        for &tok in path {
            if self.nodes[node].children.is_empty() {
                return Err(TrieError::Path(path.to_vec()));
            }
            out.push(self.targets_at(node));
            node = self
                .child(node, tok)
                .ok_or_else(|| TrieError::Path(path.to_vec()))?;
        }
        if !self.nodes[node].children.is_empty() {
            // path stops before EOS
            return Err(TrieError::Path(path.to_vec()));
        }
        Ok(out)
    }

    /// Every root-to-leaf token sequence with its leaf mass.
    pub fn paths(&self) -> Vec<(Vec<TokenId>, f64)> {
        let mut out = Vec::new();
        let mut stack = vec![(Self::ROOT, Vec::new())];
        while let Some((node, prefix)) = stack.pop() {
            let n = &self.nodes[node];
            if n.children.is_empty() {
                out.push((prefix, n.mass));
                continue;
            }
            for &(tok, child) in n.children.iter().rev() {
                let mut p = prefix.clone();
                p.push(tok);
                stack.push((child, p));
            }
        }
        out
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.children.is_empty()).count()
    }

    /// Nested JSON: `{"mass": "<12 significant digits>", "children": {token: node}}`.
    pub fn to_nested_json(&self, vocab: &Vocabulary) -> Value {
        self.node_json(Self::ROOT, vocab)
    }

    fn node_json(&self, idx: usize, vocab: &Vocabulary) -> Value {
        let n = &self.nodes[idx];
        let mut children = Map::new();
        for &(tok, child) in &n.children {
            children.insert(
                vocab.token(tok).unwrap_or("<?>").to_string(),
                self.node_json(child, vocab),
            );
        }
        json!({ "mass": format!("{:.11e}", n.mass), "children": children })
    }
}
