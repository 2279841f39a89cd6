//! Generate, train, evaluate and report stages over one output directory.
//!
//! Layout under the run directory:
//!
//! ```text
//! configs.json          prompt configurations
//! prompts.txt           rendered prompts, one per line
//! <method>/loss.csv     per-step loss trace
//! <method>/model.ckpt   checkpoint, rewritten at every epoch end
//! <method>/summary.json step count and final loss
//! eval-<condition>.json per-split evaluation reports
//! report.json           combined report
//! report.txt            aligned text tables
//! ```

use std::fmt;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::config::{RunConfig, SCHEMA_VERSION};
use super::grid::{PromptConfig, Split};
use crate::error::{ModelError, TrainError};
use crate::eval::{aggregate, align_table, evaluate, fmt_opt, EvalReport, EvalTarget};
use crate::model::{Checkpoint, OptimizerState, Transformer};
use crate::train::{train, CsvTrace, Method, TrainObserver, TrainTarget};
use crate::vocab::Vocabulary;

/// Environment variable naming the root under which run directories are
/// created when no explicit directory is given.
pub const OUTPUT_ROOT_ENV: &str = "CALFT_OUTPUT_ROOT";
pub const DEFAULT_OUTPUT_ROOT: &str = "calft-runs";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("[{stage}] config error: {msg}")]
    Config { stage: String, msg: String },
    #[error("[{stage}] {source}")]
    Diverged { stage: String, source: TrainError },
    #[error("[{stage}] evaluation failed: {msg}")]
    Eval { stage: String, msg: String },
    #[error("[{stage}] {msg}")]
    Io { stage: String, msg: String },
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config { .. } => 2,
            PipelineError::Diverged { .. } => 3,
            PipelineError::Eval { .. } => 4,
            PipelineError::Io { .. } => 1,
        }
    }

    pub fn config(stage: &str, msg: impl fmt::Display) -> Self {
        PipelineError::Config {
            stage: stage.into(),
            msg: msg.to_string(),
        }
    }

    fn io(stage: &str, msg: impl fmt::Display) -> Self {
        PipelineError::Io {
            stage: stage.into(),
            msg: msg.to_string(),
        }
    }

    fn eval(stage: &str, msg: impl fmt::Display) -> Self {
        PipelineError::Eval {
            stage: stage.into(),
            msg: msg.to_string(),
        }
    }

    fn train(stage: &str, e: TrainError) -> Self {
        match e {
            TrainError::Diverged { .. } => PipelineError::Diverged {
                stage: stage.into(),
                source: e,
            },
            TrainError::Model(ModelError::Io(io)) => Self::io(stage, io),
            other => Self::config(stage, other),
        }
    }
}

/// Model condition being evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Condition {
    Base,
    Soft,
    Hard,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::Base, Condition::Soft, Condition::Hard];

    pub fn method(self) -> Option<Method> {
        match self {
            Condition::Base => None,
            Condition::Soft => Some(Method::Soft),
            Condition::Hard => Some(Method::Hard),
        }
    }

    fn file_stem(self) -> &'static str {
        match self {
            Condition::Base => "base",
            Condition::Soft => "soft",
            Condition::Hard => "hard",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl std::str::FromStr for Condition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "base" => Ok(Condition::Base),
            "soft" => Ok(Condition::Soft),
            "hard" => Ok(Condition::Hard),
            _ => Err(format!("unknown condition `{s}` (expected base, soft or hard)")),
        }
    }
}

impl From<Method> for Condition {
    fn from(m: Method) -> Self {
        match m {
            Method::Soft => Condition::Soft,
            Method::Hard => Condition::Hard,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub config_hash: String,
    pub seed: u64,
    pub method: Method,
    pub prompts: usize,
    pub steps: usize,
    pub first_loss: Option<f64>,
    pub final_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub config_hash: String,
    pub seed: u64,
    pub condition: Condition,
    pub splits: Vec<EvalReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub training: Vec<TrainSummary>,
    pub conditions: Vec<ConditionReport>,
}

#[derive(Serialize)]
struct ConfigsFile<'a> {
    config_hash: &'a str,
    seed: u64,
    configs: &'a [PromptConfig],
}

/// Saves a checkpoint at every epoch end while forwarding steps to a trace.
struct EpochCheckpoints<'a, T> {
    trace: T,
    path: PathBuf,
    vocab: &'a Vocabulary,
    config_hash: &'a str,
    seed: u64,
}

impl<T: TrainObserver> TrainObserver for EpochCheckpoints<'_, T> {
    fn on_step(&mut self, r: &crate::train::StepRecord) -> std::io::Result<()> {
        self.trace.on_step(r)
    }

    fn on_epoch_end(&mut self, _epoch: usize, model: &Transformer, opt: &OptimizerState) -> Result<(), ModelError> {
        Checkpoint {
            vocab: self.vocab.clone(),
            model: model.clone(),
            optimizer: Some(opt.clone()),
            config_hash: self.config_hash.to_string(),
            seed: self.seed,
        }
        .save(&self.path)
    }
}

pub struct Pipeline {
    config: RunConfig,
    hash: String,
    out: PathBuf,
    vocab: Vocabulary,
}

fn write_json<T: Serialize>(path: &Path, value: &T, stage: &str) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| PipelineError::io(stage, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| PipelineError::io(stage, format!("{}: {e}", path.display())))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, stage: &str) -> Result<T, PipelineError> {
    let text =
        fs::read_to_string(path).map_err(|e| PipelineError::io(stage, format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::io(stage, format!("{}: {e}", path.display())))
}

/// Run directory for a config: `root/<first 12 hex digits of the hash>`,
/// where root comes from the environment or a default.
pub fn default_run_dir(config: &RunConfig) -> PathBuf {
    let root = std::env::var_os(OUTPUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT));
    root.join(&config.hash()[..12])
}

impl Pipeline {
    pub fn new(config: RunConfig, out: impl Into<PathBuf>) -> Result<Self, PipelineError> {
        config.validate().map_err(|e| PipelineError::config("config", e))?;
        let out = out.into();
        fs::create_dir_all(&out).map_err(|e| PipelineError::io("config", format!("{}: {e}", out.display())))?;
        Ok(Pipeline {
            hash: config.hash(),
            config,
            out,
            vocab: Vocabulary::standard(),
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    fn specs(configs: &[PromptConfig], split: Split) -> Vec<(String, crate::dist::DistributionSpec)> {
        configs
            .iter()
            .filter(|c| c.split == split)
            .map(|c| (c.id.clone(), c.spec.clone()))
            .collect()
    }

    fn method_dir(&self, m: Method) -> PathBuf {
        self.out.join(m.to_string())
    }

    pub fn checkpoint_path(&self, m: Method) -> PathBuf {
        self.method_dir(m).join("model.ckpt")
    }

    pub fn report_paths(&self) -> (PathBuf, PathBuf) {
        (self.out.join("report.json"), self.out.join("report.txt"))
    }

    /// Writes `configs.json` and `prompts.txt`.
    pub fn generate(&self) -> Result<Vec<PromptConfig>, PipelineError> {
        let configs = self.config.prompt_configs();
        if configs.is_empty() {
            return Err(PipelineError::config("generate", "the grid selects no configurations"));
        }
        write_json(
            &self.out.join("configs.json"),
            &ConfigsFile {
                config_hash: &self.hash,
                seed: self.config.seed,
                configs: &configs,
            },
            "generate",
        )?;
        let mut text = format!("# config_hash={} seed={}\n", self.hash, self.config.seed);
        for c in &configs {
            text.push_str(&format!("{}\t{}\n", c.id, c.prompt));
        }
        fs::write(self.out.join("prompts.txt"), text).map_err(|e| PipelineError::io("generate", e))?;
        Ok(configs)
    }

    fn fresh_model(&self) -> Transformer {
        Transformer::new(self.config.model.config(self.vocab.len()), self.config.seed)
    }

    pub fn train(&self, method: Method) -> Result<TrainSummary, PipelineError> {
        let stage = format!("train/{method}");
        let cfg = self.config.training(method).clone();
        let configs = self.config.prompt_configs();
        let specs = Self::specs(&configs, Split::Train);
        if specs.is_empty() {
            return Err(PipelineError::config(&stage, "no training configurations"));
        }
        let targets = TrainTarget::prepare(&specs, &self.vocab, &cfg, self.config.exec)
            .map_err(|e| PipelineError::train(&stage, e))?;
        let mut model = self.fresh_model();
        let mut opt = cfg.optimizer(model.num_params(), targets.len());
        let dir = self.method_dir(method);
        fs::create_dir_all(&dir).map_err(|e| PipelineError::io(&stage, e))?;
        let file = fs::File::create(dir.join("loss.csv")).map_err(|e| PipelineError::io(&stage, e))?;
        let trace = CsvTrace::new(BufWriter::new(file), self.hash.clone(), self.config.seed)
            .map_err(|e| PipelineError::io(&stage, e))?;
        let mut observer = EpochCheckpoints {
            trace,
            path: self.checkpoint_path(method),
            vocab: &self.vocab,
            config_hash: &self.hash,
            seed: self.config.seed,
        };
        let records = train(&targets, &mut model, &mut opt, &cfg, self.config.exec, &mut observer)
            .map_err(|e| PipelineError::train(&stage, e))?;
        if cfg.epochs == 0 {
            // still leave a loadable checkpoint behind
            observer
                .on_epoch_end(0, &model, &opt)
                .map_err(|e| PipelineError::io(&stage, e))?;
        }
        let summary = TrainSummary {
            config_hash: self.hash.clone(),
            seed: self.config.seed,
            method,
            prompts: targets.len(),
            steps: records.len(),
            first_loss: records.first().map(|r| r.loss),
            final_loss: records.last().map(|r| r.loss),
        };
        write_json(&dir.join("summary.json"), &summary, &stage)?;
        Ok(summary)
    }

    fn load_model(&self, condition: Condition, stage: &str) -> Result<Transformer, PipelineError> {
        let Some(method) = condition.method() else {
            return Ok(self.fresh_model());
        };
        let path = self.checkpoint_path(method);
        let ck = Checkpoint::load(&path)
            .map_err(|e| PipelineError::eval(stage, format!("{}: {e} (train {method} first)", path.display())))?;
        if ck.config_hash != self.hash {
            return Err(PipelineError::eval(
                stage,
                format!("{} was trained under config {}, not {}", path.display(), ck.config_hash, self.hash),
            ));
        }
        Ok(ck.model)
    }

    /// Evaluates one condition on every configured split and writes
    /// `eval-<condition>.json`.
    pub fn eval(&self, condition: Condition) -> Result<ConditionReport, PipelineError> {
        let stage = format!("eval/{}", condition.file_stem());
        let model = self.load_model(condition, &stage)?;
        let configs = self.config.prompt_configs();
        let mut splits = Vec::new();
        for &split in &self.config.eval_splits {
            let specs = Self::specs(&configs, split);
            if specs.is_empty() {
                continue;
            }
            let targets = EvalTarget::prepare(&specs, &self.vocab, &self.config.eval, self.config.exec)
                .map_err(|e| PipelineError::eval(&stage, e))?;
            let records = evaluate(&model, &targets, &self.config.eval, &self.vocab, self.config.exec)
                .map_err(|e| PipelineError::eval(&stage, e))?;
            splits.push(aggregate(&condition.to_string(), split.name(), records));
        }
        if splits.is_empty() {
            return Err(PipelineError::config(&stage, "no configurations in the evaluation splits"));
        }
        let report = ConditionReport {
            config_hash: self.hash.clone(),
            seed: self.config.seed,
            condition,
            splits,
        };
        write_json(&self.out.join(format!("eval-{}.json", condition.file_stem())), &report, &stage)?;
        Ok(report)
    }

    /// Combines whatever training summaries and evaluations exist for this
    /// config into `report.json` and `report.txt`.
    pub fn report(&self) -> Result<RunReport, PipelineError> {
        let stage = "report";
        let mut training = Vec::new();
        for m in [Method::Soft, Method::Hard] {
            let p = self.method_dir(m).join("summary.json");
            if p.exists() {
                let s: TrainSummary = read_json(&p, stage)?;
                if s.config_hash == self.hash {
                    training.push(s);
                }
            }
        }
        let mut conditions = Vec::new();
        for c in Condition::ALL {
            let p = self.out.join(format!("eval-{}.json", c.file_stem()));
            if p.exists() {
                let r: ConditionReport = read_json(&p, stage)?;
                if r.config_hash == self.hash {
                    conditions.push(r);
                }
            }
        }
        if conditions.is_empty() {
            return Err(PipelineError::eval(stage, "no evaluation results found (run eval first)"));
        }
        let report = RunReport {
            schema_version: SCHEMA_VERSION,
            config_hash: self.hash.clone(),
            seed: self.config.seed,
            training,
            conditions,
        };
        let (json, txt) = self.report_paths();
        write_json(&json, &report, stage)?;
        fs::write(&txt, report.to_text()).map_err(|e| PipelineError::io(stage, e))?;
        Ok(report)
    }

    /// generate, train every configured method, evaluate Base plus each
    /// trained condition, report.
    pub fn run_all(&self) -> Result<RunReport, PipelineError> {
        self.generate()?;
        for &m in &self.config.methods {
            self.train(m)?;
        }
        self.eval(Condition::Base)?;
        for &m in &self.config.methods {
            self.eval(m.into())?;
        }
        self.report()
    }
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// Summary table (one column per condition) followed by per-family
    /// tables for every condition and split.
    pub fn to_text(&self) -> String {
        let mut out = format!("config_hash {}\nseed {}\n\n", self.config_hash, self.seed);
        for t in &self.training {
            out.push_str(&format!(
                "trained {}: {} prompts, {} steps, final loss {}\n",
                t.method,
                t.prompts,
                t.steps,
                fmt_opt(t.final_loss, 4)
            ));
        }
        if !self.training.is_empty() {
            out.push('\n');
        }
        let mut header = vec!["split / metric".to_string()];
        header.extend(self.conditions.iter().map(|c| c.condition.to_string()));
        let mut split_names: Vec<&str> = Vec::new();
        for c in &self.conditions {
            for s in &c.splits {
                if !split_names.contains(&s.split.as_str()) {
                    split_names.push(&s.split);
                }
            }
        }
        let mut rows = Vec::new();
        for split in &split_names {
            type Metric = fn(&EvalReport) -> String;
            let metrics: [(&str, Metric); 3] = [
                ("median nW1", |r| fmt_opt(r.median_normalized_w1, 4)),
                ("median logit KL", |r| fmt_opt(r.median_logit_kl, 4)),
                ("mean valid rate", |r| fmt_opt(r.mean_valid_rate, 3)),
            ];
            for (name, f) in metrics {
                let mut row = vec![format!("{split} {name}")];
                for c in &self.conditions {
                    row.push(
                        c.splits
                            .iter()
                            .find(|s| s.split == *split)
                            .map(f)
                            .unwrap_or_else(|| crate::eval::UNDEFINED.to_string()),
                    );
                }
                rows.push(row);
            }
        }
        out.push_str(&align_table(&header, &rows));
        for c in &self.conditions {
            for s in &c.splits {
                out.push('\n');
                out.push_str(&s.to_text());
            }
        }
        out
    }
}
