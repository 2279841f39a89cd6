use std::path::PathBuf;
use std::process::ExitCode;

use calft_core::bench::{
    Condition, Overrides, Pipeline, PipelineError, RunConfig, TrainOverrides, DEFAULT_OUTPUT_ROOT,
    OUTPUT_ROOT_ENV,
};
use calft_core::exec::{configure_workers, Exec};
use calft_core::train::Method;
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Calibration fine-tuning experiments: benchmark generation, soft and hard
/// training, evaluation and reporting.
#[derive(Parser)]
#[command(name = "calft", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Opts,
}

#[derive(Subcommand)]
enum Command {
    /// Enumerate prompt configurations and write configs.json / prompts.txt.
    Generate,
    /// Train the selected methods from a fresh model.
    Train,
    /// Evaluate conditions (default: base plus every selected method).
    Eval {
        #[arg(long = "condition", value_delimiter = ',')]
        conditions: Vec<Condition>,
    },
    /// Combine training summaries and evaluations into report.json / report.txt.
    Report,
    /// generate, train, eval and report in one go.
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExecArg {
    Sequential,
    Parallel,
}

#[derive(Args)]
struct Opts {
    /// Run configuration (TOML). Without it the full default benchmark is used.
    #[arg(long, global = true, conflicts_with = "smoke")]
    config: Option<PathBuf>,
    /// Use the built-in three-family smoke profile.
    #[arg(long, global = true)]
    smoke: bool,
    /// Run directory; defaults to <output-root>/<config hash prefix>.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, env = OUTPUT_ROOT_ENV, default_value = DEFAULT_OUTPUT_ROOT)]
    output_root: PathBuf,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Training method(s): soft, hard, or both comma-separated.
    #[arg(long = "method", global = true, value_delimiter = ',')]
    methods: Vec<Method>,
    /// Decimal places of the training discretization.
    #[arg(short = 'd', long, global = true)]
    decimals: Option<u32>,
    #[arg(long, global = true)]
    max_bins: Option<usize>,
    /// Sampled completions per prompt for hard training (soft always uses one).
    #[arg(short = 'R', long = "train-samples", global = true)]
    train_samples: Option<usize>,
    #[arg(short = 'E', long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    #[arg(long = "lr", global = true)]
    learning_rate: Option<f64>,
    #[arg(long, global = true)]
    weight_decay: Option<f64>,
    /// Generations per prompt during evaluation.
    #[arg(long, global = true)]
    samples_per_prompt: Option<usize>,
    /// Trie paths per prompt for the logit KL.
    #[arg(long, global = true)]
    n_paths: Option<usize>,
    #[arg(long, global = true, value_enum)]
    exec: Option<ExecArg>,
    /// Worker threads for parallel execution.
    #[arg(long, global = true)]
    workers: Option<usize>,
}

impl Opts {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            methods: (!self.methods.is_empty()).then(|| self.methods.clone()),
            exec: self.exec.map(|e| match e {
                ExecArg::Sequential => Exec::Sequential,
                ExecArg::Parallel => Exec::Parallel,
            }),
            train: TrainOverrides {
                decimals: self.decimals,
                max_bins: self.max_bins,
                epochs: self.epochs,
                samples_per_prompt: self.train_samples,
                batch_size: self.batch_size,
                learning_rate: self.learning_rate,
                weight_decay: self.weight_decay,
            },
            samples_per_prompt: self.samples_per_prompt,
            n_paths: self.n_paths,
        }
    }

    fn resolve(&self) -> Result<RunConfig, PipelineError> {
        let mut cfg = if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| PipelineError::config("config", format!("{}: {e}", path.display())))?;
            RunConfig::from_toml(&text)
                .map_err(|e| PipelineError::config("config", format!("{}: {e}", path.display())))?
        } else if self.smoke {
            RunConfig::smoke()
        } else {
            RunConfig::default()
        };
        cfg.apply(&self.overrides())
            .map_err(|e| PipelineError::config("config", e))?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let opts = &cli.opts;
    if let Some(n) = opts.workers {
        if n == 0 {
            return Err(PipelineError::config("config", "--workers must be positive"));
        }
        configure_workers(n).map_err(|e| PipelineError::config("config", e))?;
    }
    let cfg = opts.resolve()?;
    let out = opts
        .out
        .clone()
        .unwrap_or_else(|| opts.output_root.join(&cfg.hash()[..12]));
    let methods = cfg.methods.clone();
    let pipeline = Pipeline::new(cfg, out)?;
    eprintln!(
        "run directory {} (config {})",
        pipeline.out_dir().display(),
        &pipeline.config_hash()[..12]
    );
    match cli.command {
        Command::Generate => {
            let configs = pipeline.generate()?;
            eprintln!("generated {} prompt configurations", configs.len());
        }
        Command::Train => {
            for m in methods {
                let s = pipeline.train(m)?;
                eprintln!("trained {m}: {} steps over {} prompts", s.steps, s.prompts);
            }
        }
        Command::Eval { conditions } => {
            let conditions = if conditions.is_empty() {
                std::iter::once(Condition::Base)
                    .chain(methods.into_iter().map(Condition::from))
                    .collect()
            } else {
                conditions
            };
            for c in conditions {
                pipeline.eval(c)?;
                eprintln!("evaluated {c}");
            }
        }
        Command::Report => print!("{}", pipeline.report()?.to_text()),
        Command::All => print!("{}", pipeline.run_all()?.to_text()),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("calft: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
