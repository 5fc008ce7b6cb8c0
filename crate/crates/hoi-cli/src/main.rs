//! Command-line driver: data generation, tokenizer and model training,
//! encoding/decoding, task execution, evaluation, and the end-to-end report.

mod artifacts;
mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    MissingArtifact(String),
    Internal(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "code=ConfigError detail={m}"),
            CliError::MissingArtifact(m) => write!(f, "code=MissingArtifact detail={m}"),
            CliError::Internal(m) => write!(f, "code=Internal detail={m}"),
        }
    }
}

impl std::error::Error for CliError {}

#[derive(Parser)]
#[command(name = "hoi", about = "Hand-object interaction motion tokenization and sequence modeling", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Global seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Worker count bound for intra-command parallelism.
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset (sequences, object models, split).
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Train the motion tokenizer on the train split.
    TrainTokenizer {
        #[command(flatten)]
        common: Common,
        /// Dataset directory produced by gen-data.
        #[arg(long)]
        data: PathBuf,
    },
    /// Encode every sequence into token streams.
    Encode {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Tokenizer artifact directory.
        #[arg(long)]
        tokenizer: PathBuf,
    },
    /// Decode token streams back to sequences, reporting round-trip error.
    Decode {
        #[command(flatten)]
        common: Common,
        /// Directory produced by encode.
        #[arg(long)]
        codes: PathBuf,
        #[arg(long)]
        tokenizer: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Train the contrastive motion/text matcher.
    TrainMatcher {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
    },
    /// Stage-1 span-corruption pretraining of the language model.
    PretrainLm {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        tokenizer: PathBuf,
    },
    /// Stage-2 instruction tuning over the five tasks.
    TuneLm {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        tokenizer: PathBuf,
        /// Pretrained language-model checkpoint directory.
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Run one task (text-to-motion, motion-to-text, prediction,
    /// interpolation, object-conditioned) on a dataset sequence.
    RunTask {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        task: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        tokenizer: PathBuf,
        /// Tuned language-model directory.
        #[arg(long)]
        lm: PathBuf,
        /// Input sequence index within the dataset.
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Caption override (text-to-motion).
        #[arg(long)]
        caption: Option<String>,
        /// Window mask ratio for interpolation.
        #[arg(long, default_value_t = 0.5)]
        mask_ratio: f64,
    },
    /// Compute the metric suite on held-out prompts.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        tokenizer: PathBuf,
        #[arg(long)]
        lm: PathBuf,
        #[arg(long)]
        matcher: PathBuf,
    },
    /// Print codebook usage histograms and validate token streams.
    Inspect {
        /// Tokenizer artifact directory.
        #[arg(long)]
        tokenizer: PathBuf,
        /// Optional token-stream text file to validate.
        #[arg(long)]
        streams: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the full desk-scale experiment end to end.
    MakeReport {
        #[command(flatten)]
        common: Common,
    },
}

fn load_config(path: &Option<PathBuf>, seed: Option<u64>) -> Result<RunConfig, CliError> {
    let mut cfg = match path {
        Some(p) => RunConfig::from_path(p).map_err(CliError::Config)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn init_workers(workers: usize) {
    // The pool may already be set when commands run in-process (make-report
    // invokes several commands); ignore the second initialization.
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build_global();
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData { common } => {
            let cfg = load_config(&common.config, common.seed)?;
            init_workers(common.workers);
            commands::gen_data(&cfg, &common.out, common.workers)
        }
        Command::TrainTokenizer { common, data } => {
            let cfg = load_config(&common.config, common.seed)?;
            init_workers(common.workers);
            commands::train_tokenizer_cmd(&cfg, &data, &common.out, common.workers)
        }
        Command::Encode {
            common,
            data,
            tokenizer,
        } => {
            let cfg = load_config(&common.config, common.seed)?;
            commands::encode_cmd(&cfg, &data, &tokenizer, &common.out, common.workers)
        }
        Command::Decode {
            common,
            codes,
            tokenizer,
            data,
        } => {
            let cfg = load_config(&common.config, common.seed)?;
            commands::decode_cmd(&cfg, &codes, &tokenizer, &data, &common.out, common.workers)
        }
        Command::TrainMatcher { common, data } => {
            let cfg = load_config(&common.config, common.seed)?;
            commands::train_matcher_cmd(&cfg, &data, &common.out, common.workers)
        }
        Command::PretrainLm {
            common,
            data,
            tokenizer,
        } => {
            let cfg = load_config(&common.config, common.seed)?;
            commands::pretrain_lm_cmd(&cfg, &data, &tokenizer, &common.out, common.workers)
        }
        Command::TuneLm {
            common,
            data,
            tokenizer,
            checkpoint,
        } => {
            let cfg = load_config(&common.config, common.seed)?;
            commands::tune_lm_cmd(&cfg, &data, &tokenizer, &checkpoint, &common.out, common.workers)
        }
        Command::RunTask {
            common,
            task,
            data,
            tokenizer,
            lm,
            index,
            caption,
            mask_ratio,
        } => {
            let cfg = load_config(&common.config, common.seed)?;
            commands::run_task_cmd(
                &cfg,
                &task,
                &data,
                &tokenizer,
                &lm,
                index,
                caption.as_deref(),
                mask_ratio,
                &common.out,
                common.workers,
            )
        }
        Command::Eval {
            common,
            data,
            tokenizer,
            lm,
            matcher,
        } => {
            let cfg = load_config(&common.config, common.seed)?;
            commands::eval_cmd(&cfg, &data, &tokenizer, &lm, &matcher, &common.out, common.workers)
        }
        Command::Inspect {
            tokenizer,
            streams,
            config,
        } => {
            let cfg = load_config(&config, None)?;
            commands::inspect_cmd(&cfg, &tokenizer, streams.as_deref())
        }
        Command::MakeReport { common } => {
            let cfg = load_config(&common.config, common.seed)?;
            init_workers(common.workers);
            commands::make_report(&cfg, &common.out, common.workers)
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = dispatch(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
