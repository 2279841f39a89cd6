//! Character-level vocabulary for canonical outputs and structured prompts.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::discretize::format_fixed;
use crate::dist::{DistributionSpec, Family};
use crate::error::VocabError;

pub type TokenId = u32;

/// Fractional digits used when encoding parameter values into prompts.
pub const PROMPT_DECIMALS: u32 = 5;

const CHARS: [char; 12] = ['0', '1', '2', '3', '4', '5', '6', '7', '8', '9', '.', '-'];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as TokenId))
            .collect();
        Vocabulary { tokens, index }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::standard()
    }
}

impl Vocabulary {
    pub const EOS: TokenId = 12;
    pub const BOS: TokenId = 13;
    pub const SEP: TokenId = 14;

    /// Digits, '.', '-', the three reserved markers, one tag per family and
    /// one tag per parameter name.
    pub fn standard() -> Self {
        let mut tokens: Vec<String> = CHARS.iter().map(|c| c.to_string()).collect();
        tokens.extend(["<eos>", "<bos>", "<sep>"].map(String::from));
        tokens.extend(Family::ALL.iter().map(|f| format!("<fam:{}>", f.scipy_name())));
        tokens.extend(Family::all_param_names().iter().map(|p| format!("<par:{p}>")));
        tokens.into()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: TokenId) -> Result<&str, VocabError> {
        self.tokens
            .get(id as usize)
            .map(String::as_str)
            .ok_or(VocabError::UnknownId(id))
    }

    pub fn char_id(&self, c: char) -> Result<TokenId, VocabError> {
        CHARS
            .iter()
            .position(|&x| x == c)
            .map(|i| i as TokenId)
            .ok_or(VocabError::UnknownChar(c))
    }

    pub fn family_id(&self, family: Family) -> Result<TokenId, VocabError> {
        self.index
            .get(&format!("<fam:{}>", family.scipy_name()))
            .copied()
            .ok_or_else(|| VocabError::UnknownFamily(family.scipy_name().into()))
    }

    pub fn param_id(&self, name: &str) -> Result<TokenId, VocabError> {
        self.index
            .get(&format!("<par:{name}>"))
            .copied()
            .ok_or_else(|| VocabError::UnknownParam(name.into()))
    }

    /// Character tokens of a canonical string followed by EOS.
    pub fn tokenize_output(&self, canonical: &str) -> Result<Vec<TokenId>, VocabError> {
        let mut out = canonical
            .chars()
            .map(|c| self.char_id(c))
            .collect::<Result<Vec<_>, _>>()?;
        out.push(Self::EOS);
        Ok(out)
    }

    /// Inverse of [`tokenize_output`](Self::tokenize_output); stops at the first EOS.
    /// Non-character tokens are rendered by name, so the result fails to parse.
    pub fn detokenize(&self, tokens: &[TokenId]) -> String {
        tokens
            .iter()
            .take_while(|&&t| t != Self::EOS)
            .map(|&t| self.token(t).unwrap_or("<?>"))
            .collect()
    }

    /// `[BOS, family, (param, digits...)*, SEP]` with parameters in canonical
    /// order and values at fixed precision.
    pub fn encode_prompt(&self, spec: &DistributionSpec) -> Result<Vec<TokenId>, VocabError> {
        let mut out = vec![Self::BOS, self.family_id(spec.family)?];
        for (name, value) in spec.ordered_params() {
            if !value.is_finite() {
                return Err(VocabError::UnknownParam(name.into()));
            }
            out.push(self.param_id(name)?);
            let units = (value * 10f64.powi(PROMPT_DECIMALS as i32)).round() as i64;
            for c in format_fixed(units, PROMPT_DECIMALS).chars() {
                out.push(self.char_id(c)?);
            }
        }
        out.push(Self::SEP);
        Ok(out)
    }
}
