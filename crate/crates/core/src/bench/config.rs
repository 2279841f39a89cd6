//! Declarative run configuration.
//!
//! A run file is TOML with a `schema_version`; every section is optional and
//! overlays the built-in defaults. Command-line overrides are applied last.
//! The resolved [`RunConfig`] is what gets hashed and recorded.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::grid::{generate_benchmark, GridResolution, PromptConfig, Split};
use crate::dist::{DistributionSpec, Family};
use crate::eval::EvalSettings;
use crate::exec::Exec;
use crate::model::ModelConfig;
use crate::train::{Method, TrainingConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomConfig {
    pub family: Family,
    pub split: Split,
    pub params: BTreeMap<String, f64>,
}

/// Either the benchmark table (optionally restricted to some families) or an
/// explicit configuration list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub resolution: GridResolution,
    pub families: Vec<Family>,
    pub configs: Vec<CustomConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelShape {
    pub context_length: usize,
    pub width: usize,
    pub heads: usize,
    pub layers: usize,
    pub ff_width: usize,
    pub temperature: f64,
}

impl Default for ModelShape {
    fn default() -> Self {
        let c = ModelConfig::new(0);
        ModelShape {
            context_length: c.context_length,
            width: c.width,
            heads: c.heads,
            layers: c.layers,
            ff_width: c.ff_width,
            temperature: c.temperature,
        }
    }
}

impl ModelShape {
    pub fn config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            context_length: self.context_length,
            width: self.width,
            heads: self.heads,
            layers: self.layers,
            ff_width: self.ff_width,
            temperature: self.temperature,
        }
    }
}

/// Fully resolved run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub exec: Exec,
    pub methods: Vec<Method>,
    pub grid: GridSpec,
    pub model: ModelShape,
    pub soft: TrainingConfig,
    pub hard: TrainingConfig,
    pub eval: EvalSettings,
    pub eval_splits: Vec<Split>,
}

// ---- file format ----

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridFile {
    resolution: Option<usize>,
    #[serde(default)]
    per_family: BTreeMap<Family, usize>,
    #[serde(default)]
    families: Vec<Family>,
    #[serde(default)]
    configs: Vec<CustomConfig>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    context_length: Option<usize>,
    width: Option<usize>,
    heads: Option<usize>,
    layers: Option<usize>,
    ff_width: Option<usize>,
    temperature: Option<f64>,
}

/// Optional training fields; also used for command-line overrides.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOverrides {
    pub decimals: Option<u32>,
    pub max_bins: Option<usize>,
    pub epochs: Option<usize>,
    pub samples_per_prompt: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub weight_decay: Option<f64>,
}

impl TrainOverrides {
    pub fn apply(&self, t: &mut TrainingConfig) {
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { t.$f = v; } )* };
        }
        set!(decimals, max_bins, epochs, samples_per_prompt, batch_size, learning_rate, weight_decay);
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvalFile {
    samples_per_prompt: Option<usize>,
    n_paths: Option<usize>,
    decimals: Option<u32>,
    max_bins: Option<usize>,
    max_tokens: Option<usize>,
    splits: Option<Vec<Split>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunFile {
    schema_version: u32,
    seed: Option<u64>,
    exec: Option<Exec>,
    methods: Option<Vec<Method>>,
    #[serde(default)]
    grid: GridFile,
    #[serde(default)]
    model: ModelFile,
    #[serde(default)]
    soft: TrainOverrides,
    #[serde(default)]
    hard: TrainOverrides,
    #[serde(default)]
    eval: EvalFile,
}

/// Command-line overrides applied after the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub methods: Option<Vec<Method>>,
    pub exec: Option<Exec>,
    /// Applied to both methods; `samples_per_prompt` only affects hard.
    pub train: TrainOverrides,
    pub samples_per_prompt: Option<usize>,
    pub n_paths: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            exec: Exec::Parallel,
            methods: vec![Method::Soft, Method::Hard],
            grid: GridSpec {
                resolution: GridResolution::default(),
                families: Vec::new(),
                configs: Vec::new(),
            },
            model: ModelShape::default(),
            soft: TrainingConfig::soft(),
            hard: TrainingConfig::hard(),
            eval: EvalSettings::default(),
            eval_splits: vec![Split::OodTest, Split::UnseenParamTest],
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        let file: RunFile = toml::from_str(text).map_err(|e| e.to_string())?;
        if file.schema_version != SCHEMA_VERSION {
            return Err(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                file.schema_version
            ));
        }
        let mut c = RunConfig::default();
        if let Some(s) = file.seed {
            c.seed = s;
        }
        if let Some(e) = file.exec {
            c.exec = e;
        }
        if let Some(m) = file.methods {
            c.methods = m;
        }
        if let Some(r) = file.grid.resolution {
            c.grid.resolution.default = r;
        }
        c.grid.resolution.per_family = file.grid.per_family;
        c.grid.families = file.grid.families;
        c.grid.configs = file.grid.configs;
        let m = &mut c.model;
        macro_rules! set {
            ($src:expr, $dst:expr, $($f:ident),*) => { $( if let Some(v) = $src.$f { $dst.$f = v; } )* };
        }
        set!(file.model, m, context_length, width, heads, layers, ff_width, temperature);
        file.soft.apply(&mut c.soft);
        file.hard.apply(&mut c.hard);
        set!(file.eval, c.eval, samples_per_prompt, n_paths, decimals, max_bins, max_tokens);
        if let Some(s) = file.eval.splits {
            c.eval_splits = s;
        }
        c.sync_seeds();
        c.validate()?;
        Ok(c)
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), String> {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(m) = &o.methods {
            self.methods = m.clone();
        }
        if let Some(e) = o.exec {
            self.exec = e;
        }
        // Both methods, whichever are selected, so the hash does not depend on
        // the selection. Soft always draws one path per prompt, so R is hard-only.
        let soft_only = TrainOverrides {
            samples_per_prompt: None,
            ..o.train.clone()
        };
        soft_only.apply(&mut self.soft);
        o.train.apply(&mut self.hard);
        if let Some(n) = o.samples_per_prompt {
            self.eval.samples_per_prompt = n;
        }
        if let Some(n) = o.n_paths {
            self.eval.n_paths = n;
        }
        self.sync_seeds();
        self.validate()
    }

    fn sync_seeds(&mut self) {
        self.soft.seed = self.seed;
        self.hard.seed = self.seed;
        self.eval.seed = self.seed;
    }

    pub fn training(&self, m: Method) -> &TrainingConfig {
        match m {
            Method::Soft => &self.soft,
            Method::Hard => &self.hard,
        }
    }

    pub fn training_mut(&mut self, m: Method) -> &mut TrainingConfig {
        match m {
            Method::Soft => &mut self.soft,
            Method::Hard => &mut self.hard,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        for m in &self.methods {
            self.training(*m).validate().map_err(|e| format!("[{m}] {e}"))?;
        }
        if self.grid.resolution.default == 0 || self.grid.resolution.per_family.values().any(|&r| r == 0) {
            return Err("grid resolution must be positive".into());
        }
        if self.model.width == 0 || self.model.heads == 0 || !self.model.width.is_multiple_of(self.model.heads) {
            return Err("model width must be a positive multiple of heads".into());
        }
        if !(self.model.temperature > 0.0 && self.model.temperature.is_finite()) {
            return Err("model temperature must be positive".into());
        }
        if self.eval.samples_per_prompt == 0 || self.eval.n_paths == 0 || self.eval.max_tokens == 0 {
            return Err("evaluation counts must be positive".into());
        }
        for c in &self.grid.configs {
            let spec = DistributionSpec {
                family: c.family,
                params: c.params.clone(),
            };
            spec.law().map_err(|e| format!("grid config: {e}"))?;
        }
        Ok(())
    }

    /// Every prompt configuration of the run, in a fixed order.
    pub fn prompt_configs(&self) -> Vec<PromptConfig> {
        if self.grid.configs.is_empty() {
            return generate_benchmark(&self.grid.resolution, &self.grid.families);
        }
        let mut counters: BTreeMap<(Split, Family), usize> = BTreeMap::new();
        self.grid
            .configs
            .iter()
            .map(|c| {
                let n = counters.entry((c.split, c.family)).or_default();
                let id = format!("{}/{}/{:04}", c.split.name(), c.family.scipy_name(), n);
                *n += 1;
                PromptConfig::new(
                    id,
                    c.split,
                    DistributionSpec {
                        family: c.family,
                        params: c.params.clone(),
                    },
                )
            })
            .collect()
    }

    /// SHA-256 of the canonical JSON form, excluding the execution mode and
    /// the method selection (neither changes any individual result, so
    /// separate `train --method` invocations share one run directory).
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(o) = v.as_object_mut() {
            o.remove("exec");
            o.remove("methods");
        }
        hex::encode(Sha256::digest(v.to_string().as_bytes()))
    }

    /// Three-family profile for quick end-to-end runs: 20 training prompts,
    /// 200 optimizer steps per method, 100 samples per prompt.
    pub fn smoke() -> Self {
        Self::from_toml(SMOKE_PROFILE).expect("built-in smoke profile is valid")
    }
}

pub const SMOKE_PROFILE: &str = include_str!("smoke.toml");
