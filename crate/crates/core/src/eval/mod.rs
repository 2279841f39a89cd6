//! Structured-sampling and stochastic-behavior metrics.

mod generate;
mod metrics;
mod report;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use generate::{
    first_token_probs, greedy_from_model, logit_kl, sample_from_model, sample_trie_path, OVERLONG_MARKER,
};
pub use metrics::{
    normalized_w1, parse_numeric, support_size_top_mass, tv_uniform, unique_fraction, valid_rate,
    wasserstein_w1,
};
pub use report::{aggregate, align_table, fmt_opt, median_if_all, EvalReport, FamilyAggregate, PromptRecord, UNDEFINED};

use crate::discretize::build_output_space;
use crate::dist::{support, DistributionSpec, Law, SupportInfo};
use crate::error::{ModelError, TrainError};
use crate::exec::Exec;
use crate::model::Policy;
use crate::rng::stream;
use crate::trie::TokenTrie;
use crate::vocab::{TokenId, Vocabulary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSettings {
    pub samples_per_prompt: usize,
    pub n_paths: usize,
    /// Resolution of the shared reference output space.
    pub decimals: u32,
    pub max_bins: usize,
    pub max_tokens: usize,
    pub seed: u64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            samples_per_prompt: 1000,
            n_paths: 4,
            decimals: 5,
            max_bins: 16384,
            max_tokens: 24,
            seed: 0,
        }
    }
}

/// One prompt configuration prepared for evaluation.
#[derive(Debug, Clone)]
pub struct EvalTarget {
    pub id: String,
    pub spec: DistributionSpec,
    pub law: Law,
    pub support: SupportInfo,
    pub prompt: Vec<TokenId>,
    pub trie: Arc<TokenTrie>,
}

impl EvalTarget {
    pub fn new(
        id: impl Into<String>,
        spec: &DistributionSpec,
        vocab: &Vocabulary,
        settings: &EvalSettings,
    ) -> Result<Self, TrainError> {
        let space = build_output_space(spec, settings.decimals, settings.max_bins)?;
        Ok(EvalTarget {
            id: id.into(),
            spec: spec.clone(),
            law: spec.law().map_err(crate::error::DiscretizeError::from)?,
            support: support(spec).map_err(crate::error::DiscretizeError::from)?,
            prompt: vocab.encode_prompt(spec)?,
            trie: Arc::new(TokenTrie::build(&space, vocab)?),
        })
    }

    pub fn prepare(
        configs: &[(String, DistributionSpec)],
        vocab: &Vocabulary,
        settings: &EvalSettings,
        exec: Exec,
    ) -> Result<Vec<Self>, TrainError> {
        exec.map(configs, |(id, spec)| EvalTarget::new(id.clone(), spec, vocab, settings))
            .into_iter()
            .collect()
    }
}

/// Samples, KL probe and first-token support for one prompt. Randomness is
/// drawn from streams keyed by the config id, so results do not depend on
/// evaluation order.
pub fn evaluate_prompt<P: Policy>(
    policy: &P,
    target: &EvalTarget,
    settings: &EvalSettings,
    vocab: &Vocabulary,
) -> Result<PromptRecord, ModelError> {
    let mut rng = stream(settings.seed, &format!("eval-samples/{}", target.id));
    let generations = sample_from_model(
        policy,
        &target.prompt,
        settings.samples_per_prompt,
        &mut rng,
        settings.max_tokens,
        vocab,
    )?;
    let values: Vec<f64> = generations
        .iter()
        .filter_map(|g| parse_numeric(g))
        .filter(|&x| target.support.contains(x))
        .collect();
    let w1 = wasserstein_w1(&values, &target.law);
    let mut kl_rng = stream(settings.seed, &format!("eval-kl/{}", target.id));
    let kl = logit_kl(policy, &target.prompt, &target.trie, settings.n_paths, &mut kl_rng)?;
    Ok(PromptRecord {
        config_id: target.id.clone(),
        family: target.spec.family,
        samples: generations.len(),
        valid: values.len(),
        valid_rate: valid_rate(&generations, &target.support),
        w1,
        normalized_w1: w1.and_then(|w| normalized_w1(w, &target.law)),
        logit_kl: kl,
        unique_fraction: unique_fraction(&generations),
        first_token_support: support_size_top_mass(&first_token_probs(policy, &target.prompt)?, 0.9),
    })
}

/// Evaluates every target, in parallel when `exec` allows; records come back
/// in target order.
pub fn evaluate<P: Policy>(
    policy: &P,
    targets: &[EvalTarget],
    settings: &EvalSettings,
    vocab: &Vocabulary,
    exec: Exec,
) -> Result<Vec<PromptRecord>, ModelError> {
    exec.map(targets, |t| evaluate_prompt(policy, t, settings, vocab))
        .into_iter()
        .collect()
}
