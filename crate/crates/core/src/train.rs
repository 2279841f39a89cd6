//! Soft-target and hard-target training loops.

use std::io::Write;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::discretize::{build_output_space, OutputSpace};
use crate::dist::{DistributionSpec, Family};
use crate::error::{ModelError, TrainError};
use crate::exec::Exec;
use crate::model::{hard_loss_accumulate, soft_loss_accumulate, OptimizerState, Transformer};
use crate::rng::{open_unit, stream};
use crate::trie::TokenTrie;
use crate::vocab::{TokenId, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Soft,
    Hard,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Soft => "soft",
            Method::Hard => "hard",
        })
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "soft" => Ok(Method::Soft),
            "hard" => Ok(Method::Hard),
            _ => Err(format!("unknown method `{s}` (expected soft or hard)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub method: Method,
    pub decimals: u32,
    pub max_bins: usize,
    pub epochs: usize,
    pub samples_per_prompt: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl TrainingConfig {
    pub fn soft() -> Self {
        TrainingConfig {
            method: Method::Soft,
            decimals: 5,
            max_bins: 1001,
            epochs: 3,
            samples_per_prompt: 1,
            batch_size: 8,
            learning_rate: 2e-4,
            weight_decay: 0.01,
            seed: 0,
        }
    }

    pub fn hard() -> Self {
        TrainingConfig {
            method: Method::Hard,
            max_bins: 16384,
            epochs: 2,
            samples_per_prompt: 16,
            ..Self::soft()
        }
    }

    pub fn for_method(method: Method) -> Self {
        match method {
            Method::Soft => Self::soft(),
            Method::Hard => Self::hard(),
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: &str| Err(TrainError::Config(m.into()));
        if self.samples_per_prompt == 0 {
            return fail("samples_per_prompt must be at least 1");
        }
        if self.method == Method::Soft && self.samples_per_prompt != 1 {
            return fail("soft training samples exactly one path per prompt per epoch");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return fail("learning_rate must be finite and nonnegative");
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return fail("weight_decay must be finite and nonnegative");
        }
        if self.decimals > crate::discretize::MAX_DECIMALS {
            return fail("decimals must be at most 6");
        }
        if self.max_bins < 2 {
            return fail("max_bins must be at least 2");
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, n_configs: usize) -> usize {
        (n_configs * self.samples_per_prompt).div_ceil(self.batch_size)
    }

    /// Optimizer steps over the whole run.
    pub fn total_steps(&self, n_configs: usize) -> usize {
        self.steps_per_epoch(n_configs) * self.epochs
    }

    pub fn optimizer(&self, num_params: usize, n_configs: usize) -> OptimizerState {
        OptimizerState::new(num_params, self.learning_rate, self.weight_decay, self.total_steps(n_configs))
    }
}

/// One prompt configuration prepared for training.
#[derive(Debug, Clone)]
pub struct TrainTarget {
    pub id: String,
    pub family: Family,
    pub prompt: Vec<TokenId>,
    pub space: Arc<OutputSpace>,
    /// Token sequence (EOS-terminated) of every space entry, in entry order.
    pub paths: Vec<Vec<TokenId>>,
    /// Present for soft training.
    pub trie: Option<Arc<TokenTrie>>,
}

impl TrainTarget {
    pub fn new(
        id: impl Into<String>,
        spec: &DistributionSpec,
        vocab: &Vocabulary,
        decimals: u32,
        max_bins: usize,
        with_trie: bool,
    ) -> Result<Self, TrainError> {
        let space = build_output_space(spec, decimals, max_bins)?;
        let paths = space
            .entries()
            .iter()
            .map(|e| vocab.tokenize_output(&e.canonical))
            .collect::<Result<Vec<_>, _>>()?;
        let trie = if with_trie {
            Some(Arc::new(TokenTrie::build(&space, vocab)?))
        } else {
            None
        };
        Ok(TrainTarget {
            id: id.into(),
            family: spec.family,
            prompt: vocab.encode_prompt(spec)?,
            space: Arc::new(space),
            paths,
            trie,
        })
    }

    /// Builds targets for every config at the resolution `cfg` asks for.
    pub fn prepare(
        configs: &[(String, DistributionSpec)],
        vocab: &Vocabulary,
        cfg: &TrainingConfig,
        exec: Exec,
    ) -> Result<Vec<Self>, TrainError> {
        let with_trie = cfg.method == Method::Soft;
        exec.map(configs, |(id, spec)| {
            TrainTarget::new(id.clone(), spec, vocab, cfg.decimals, cfg.max_bins, with_trie)
        })
        .into_iter()
        .collect()
    }

    /// Draws one canonical output y ~ P_Y and returns its token path.
    pub fn sample_path<R: RngCore + ?Sized>(&self, rng: &mut R) -> &[TokenId] {
        &self.paths[self.space.index_for_uniform(open_unit(rng))]
    }
}

/// Shuffled round-robin over families.
///
/// Each family's queue is shuffled and the family rotation order is drawn
/// once; rounds then take the next item from every non-empty queue in that
/// order. Returns a permutation of `0..families.len()`.
pub fn family_balanced_order<R: RngCore + ?Sized>(families: &[Family], rng: &mut R) -> Vec<usize> {
    let mut queues: Vec<(Family, Vec<usize>)> = Vec::new();
    for (i, &f) in families.iter().enumerate() {
        match queues.iter_mut().find(|(g, _)| *g == f) {
            Some((_, q)) => q.push(i),
            None => queues.push((f, vec![i])),
        }
    }
    queues.sort_by_key(|(f, _)| *f as usize);
    for (_, q) in &mut queues {
        q.shuffle(rng);
    }
    queues.shuffle(rng);
    let mut out = Vec::with_capacity(families.len());
    let mut round = 0;
    while out.len() < families.len() {
        for (_, q) in &queues {
            if let Some(&i) = q.get(round) {
                out.push(i);
            }
        }
        round += 1;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
}

/// Hooks invoked as training progresses.
pub trait TrainObserver {
    fn on_step(&mut self, _record: &StepRecord) -> std::io::Result<()> {
        Ok(())
    }

    fn on_epoch_end(
        &mut self,
        _epoch: usize,
        _model: &Transformer,
        _opt: &OptimizerState,
    ) -> Result<(), ModelError> {
        Ok(())
    }
}

impl TrainObserver for () {}

/// Append-only CSV loss trace. Every row carries the config hash and seed.
pub struct CsvTrace<W: Write> {
    out: W,
    config_hash: String,
    seed: u64,
}

impl<W: Write> CsvTrace<W> {
    pub const HEADER: &'static str = "step,epoch,loss,lr,config_hash,seed";

    pub fn new(mut out: W, config_hash: impl Into<String>, seed: u64) -> std::io::Result<Self> {
        writeln!(out, "{}", Self::HEADER)?;
        Ok(CsvTrace {
            out,
            config_hash: config_hash.into(),
            seed,
        })
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

impl<W: Write> TrainObserver for CsvTrace<W> {
    fn on_step(&mut self, r: &StepRecord) -> std::io::Result<()> {
        writeln!(
            self.out,
            "{},{},{:e},{:e},{},{}",
            r.step, r.epoch, r.loss, r.lr, self.config_hash, self.seed
        )?;
        self.out.flush()
    }
}

struct Job<'a> {
    target: &'a TrainTarget,
    path: &'a [TokenId],
}

fn diverged(step: usize, reason: impl Into<String>) -> TrainError {
    TrainError::Diverged {
        step,
        reason: reason.into(),
    }
}

/// Shared minibatch loop: averages per-example losses and gradients within
/// each batch (reduced in batch order, so the result does not depend on
/// `exec`) and applies one AdamW step per batch.
#[allow(clippy::too_many_arguments)]
fn run_batches(
    jobs: &[Job<'_>],
    method: Method,
    batch_size: usize,
    epoch: usize,
    model: &mut Transformer,
    opt: &mut OptimizerState,
    exec: Exec,
    trace: &mut Vec<StepRecord>,
    observer: &mut dyn TrainObserver,
) -> Result<(), TrainError> {
    for batch in jobs.chunks(batch_size) {
        let weight = 1.0 / batch.len() as f64;
        let m: &Transformer = model;
        let results = exec.map(batch, |job| {
            let mut g = vec![0.0; m.num_params()];
            let loss = match method {
                Method::Soft => {
                    let trie = job.target.trie.as_deref().expect("soft target without trie");
                    soft_loss_accumulate(m, &job.target.prompt, trie, job.path, weight, &mut g)
                }
                Method::Hard => hard_loss_accumulate(m, &job.target.prompt, job.path, weight, &mut g),
            };
            loss.map(|l| (l, g))
        });
        let mut grads = vec![0.0; model.num_params()];
        let mut loss = 0.0;
        for r in results {
            let (l, g) = r?;
            loss += l * weight;
            for (a, b) in grads.iter_mut().zip(&g) {
                *a += b;
            }
        }
        let step = opt.step;
        if !loss.is_finite() {
            return Err(diverged(step, format!("loss {loss}")));
        }
        let lr = opt.schedule(step);
        opt.adamw_step(model.params_mut(), &grads).map_err(|e| match e {
            ModelError::Diverged(i) => diverged(step, format!("non-finite gradient at parameter {i}")),
            other => other.into(),
        })?;
        let rec = StepRecord { step, epoch, loss, lr };
        observer.on_step(&rec).map_err(ModelError::from)?;
        trace.push(rec);
    }
    Ok(())
}

/// Soft-target training: each epoch visits every prompt once in
/// family-balanced order, samples one path y ~ P_Y and minimizes the trie KL.
pub fn train_soft(
    targets: &[TrainTarget],
    model: &mut Transformer,
    opt: &mut OptimizerState,
    cfg: &TrainingConfig,
    exec: Exec,
    observer: &mut dyn TrainObserver,
) -> Result<Vec<StepRecord>, TrainError> {
    cfg.validate()?;
    if cfg.method != Method::Soft {
        return Err(TrainError::Config("train_soft needs method = soft".into()));
    }
    if targets.iter().any(|t| t.trie.is_none()) {
        return Err(TrainError::Config("soft training targets need tries".into()));
    }
    let families: Vec<Family> = targets.iter().map(|t| t.family).collect();
    let mut rng = stream(cfg.seed, "train-soft");
    let mut trace = Vec::with_capacity(cfg.total_steps(targets.len()));
    for epoch in 0..cfg.epochs {
        let order = family_balanced_order(&families, &mut rng);
        let jobs: Vec<Job> = order
            .iter()
            .map(|&i| Job {
                target: &targets[i],
                path: targets[i].sample_path(&mut rng),
            })
            .collect();
        run_batches(&jobs, Method::Soft, cfg.batch_size, epoch, model, opt, exec, &mut trace, observer)?;
        observer.on_epoch_end(epoch, model, opt)?;
    }
    Ok(trace)
}

/// Hard-target training: each epoch repeats every prompt R times, orders the
/// multiset family-balanced, samples a fresh completion per item and
/// minimizes completion cross-entropy.
pub fn train_hard(
    targets: &[TrainTarget],
    model: &mut Transformer,
    opt: &mut OptimizerState,
    cfg: &TrainingConfig,
    exec: Exec,
    observer: &mut dyn TrainObserver,
) -> Result<Vec<StepRecord>, TrainError> {
    cfg.validate()?;
    if cfg.method != Method::Hard {
        return Err(TrainError::Config("train_hard needs method = hard".into()));
    }
    let r = cfg.samples_per_prompt;
    let multiset: Vec<usize> = (0..targets.len()).flat_map(|i| std::iter::repeat_n(i, r)).collect();
    let families: Vec<Family> = multiset.iter().map(|&i| targets[i].family).collect();
    let mut rng = stream(cfg.seed, "train-hard");
    let mut trace = Vec::with_capacity(cfg.total_steps(targets.len()));
    for epoch in 0..cfg.epochs {
        let order = family_balanced_order(&families, &mut rng);
        let jobs: Vec<Job> = order
            .iter()
            .map(|&k| {
                let t = &targets[multiset[k]];
                Job {
                    target: t,
                    path: t.sample_path(&mut rng),
                }
            })
            .collect();
        run_batches(&jobs, Method::Hard, cfg.batch_size, epoch, model, opt, exec, &mut trace, observer)?;
        observer.on_epoch_end(epoch, model, opt)?;
    }
    Ok(trace)
}

/// Dispatches on `cfg.method`.
pub fn train(
    targets: &[TrainTarget],
    model: &mut Transformer,
    opt: &mut OptimizerState,
    cfg: &TrainingConfig,
    exec: Exec,
    observer: &mut dyn TrainObserver,
) -> Result<Vec<StepRecord>, TrainError> {
    match cfg.method {
        Method::Soft => train_soft(targets, model, opt, cfg, exec, observer),
        Method::Hard => train_hard(targets, model, opt, cfg, exec, observer),
    }
}
