//! The `domgen` command-line driver.
//!
//! Every subcommand reads an optional JSON config, writes its artifacts
//! into `--out` under names that embed a config digest and the seed, and
//! finishes with `manifest-<command>.json` recording the resolved config,
//! input paths, output paths and seed. Feeding a manifest's `config` back
//! through `--config` regenerates the same artifacts.

mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::Result;
use crate::evalharness::ProtoSource;

pub use config::{
    load_config, AblateConfig, ConsistencyConfig, EvalCmdConfig, GenConfig, RunHeader, TrainCmdConfig,
    TrainProtoConfig, CONFIG_FORMAT,
};

pub const MANIFEST_FORMAT: &str = "domgen-manifest-v1";

#[derive(Debug, Parser)]
#[command(name = "domgen", version, about = "Adaptive domain generalization with domain prototypes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// JSON config for this command; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Run seed; every random stream derives from it.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for independent sweep cells.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Leave the creation time out of the manifest.
    #[arg(long)]
    pub no_timestamp: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a long-tailed multi-domain benchmark.
    Gen {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Train the prototypical embedding network and archive the
    /// training-domain prototypes.
    TrainProto {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        data: PathBuf,
    },
    /// Train the prototype-conditioned classifier.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        data: PathBuf,
        /// Embedding checkpoint from `train-proto`.
        #[arg(long)]
        proto: Option<PathBuf>,
    },
    /// Score a trained model on every labeled split of a dataset.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Points used for held-out prototypes; overrides the config.
        #[arg(long, value_enum)]
        proto_source: Option<ProtoSourceArg>,
    },
    /// Run one ablation sweep.
    Ablate {
        #[arg(value_enum)]
        kind: AblateKind,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Measure how prototype error shrinks with the number of points.
    Consistency {
        #[command(flatten)]
        common: CommonArgs,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AblateKind {
    DomainCount,
    TailIndex,
    EmbeddingVariant,
    PrototypeCount,
    AdaptivityGap,
    Lodo,
}

impl AblateKind {
    pub fn name(self) -> &'static str {
        match self {
            AblateKind::DomainCount => "domain-count",
            AblateKind::TailIndex => "tail-index",
            AblateKind::EmbeddingVariant => "embedding-variant",
            AblateKind::PrototypeCount => "prototype-count",
            AblateKind::AdaptivityGap => "adaptivity-gap",
            AblateKind::Lodo => "lodo",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProtoSourceArg {
    Pool,
    Inputs,
}

impl From<ProtoSourceArg> for ProtoSource {
    fn from(a: ProtoSourceArg) -> Self {
        match a {
            ProtoSourceArg::Pool => ProtoSource::Pool,
            ProtoSourceArg::Inputs => ProtoSource::Inputs,
        }
    }
}

/// Execute a parsed command line, returning the paths written.
pub fn execute(cli: Cli) -> Result<Vec<PathBuf>> {
    match cli.command {
        Command::Gen { common } => commands::gen(&common),
        Command::TrainProto { common, data } => commands::train_proto(&common, &data),
        Command::Train { common, data, proto } => commands::train(&common, &data, proto.as_deref()),
        Command::Eval {
            common,
            model,
            data,
            proto_source,
        } => commands::eval(&common, &model, &data, proto_source.map(Into::into)),
        Command::Ablate { kind, common } => commands::ablate(&common, kind),
        Command::Consistency { common } => commands::consistency(&common),
    }
}

/// Parse `args`, run, report, and return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
