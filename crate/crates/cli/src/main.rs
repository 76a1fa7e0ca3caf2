//! `tdr`: synthesize a corpus, extract features, train, index and query.

mod config;
mod corpus;
mod error;
mod io;
mod retrieve;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use tdr_core::data::Split;
use tdr_core::FusionMode;

use config::{Overrides, RunConfig};
use error::{CliError, Result, EXIT_USAGE};

#[derive(Parser)]
#[command(name = "tdr", version, about = "Text-to-dance retrieval")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for every random choice of the run.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Fusion {
    Full,
    Add,
    Mul,
}

impl From<Fusion> for FusionMode {
    fn from(f: Fusion) -> Self {
        match f {
            Fusion::Full => FusionMode::Full,
            Fusion::Add => FusionMode::Add,
            Fusion::Mul => FusionMode::Mul,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus with a split manifest.
    Synth {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Extract and cache music features; fit standardization statistics.
    Features {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write checkpoints and a JSON-lines log.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, value_enum)]
        fusion: Option<Fusion>,
        #[arg(long)]
        force: bool,
    },
    /// Embed the dances of a manifest split as gallery records.
    Embed {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum)]
        split: Option<SplitArg>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Validate gallery records and write a searchable index.
    Index {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank the gallery for a text query.
    Query {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        text: String,
        /// Caption id, needed by the file-backed text provider.
        #[arg(long)]
        caption_id: Option<String>,
        #[arg(long, default_value_t = 10)]
        k: usize,
    },
    /// Text-to-dance retrieval metrics for a model or for precomputed embeddings.
    Eval {
        #[arg(long, required_unless_present = "gallery", requires = "manifest")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Gallery records (JSON lines) instead of a model.
        #[arg(long, conflicts_with = "checkpoint", requires = "queries")]
        gallery: Option<PathBuf>,
        /// Query records (JSON lines): positive id, genre, embedding.
        #[arg(long)]
        queries: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
}

fn resolve(args: &ConfigArgs, epochs: Option<usize>, fusion: Option<Fusion>) -> Result<RunConfig> {
    let flags = Overrides { seed: args.seed, epochs, fusion: fusion.map(Into::into) };
    RunConfig::load(args.config.as_deref())?.resolve(&flags, args.config.as_deref())
}

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string(value).expect("output serializes"));
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { cfg, out, force } => {
            let cfg = resolve(&cfg, None, None)?;
            print_json(&corpus::synth(&cfg, &out, force)?);
        }
        Command::Features { manifest, out } => print_json(&corpus::features(&manifest, &out)?),
        Command::Train { cfg, manifest, out, epochs, fusion, force } => {
            let cfg = resolve(&cfg, epochs, fusion)?;
            print_json(&run::train(&cfg, &manifest, &out, force)?);
        }
        Command::Embed { checkpoint, manifest, split, out } => {
            let n = retrieve::embed(&checkpoint, &manifest, split.map(Into::into), &out)?;
            print_json(&serde_json::json!({ "embedded": n, "out": out }));
        }
        Command::Index { embeddings, out } => {
            let n = retrieve::index(&embeddings, &out)?;
            print_json(&serde_json::json!({ "indexed": n, "out": out }));
        }
        Command::Query { checkpoint, index, text, caption_id, k } => {
            for hit in retrieve::query(&checkpoint, &index, &text, caption_id.as_deref(), k)? {
                print_json(&hit);
            }
        }
        Command::Eval { checkpoint, manifest, split, gallery, queries, format } => {
            let (report, method) = match (checkpoint, manifest, gallery, queries) {
                (Some(c), Some(m), None, _) => retrieve::eval_model(&c, &m, split.into())?,
                (None, _, Some(g), Some(q)) => (retrieve::eval_embeddings(&g, &q)?, "embeddings".to_string()),
                _ => return Err(CliError::Usage("eval needs --checkpoint with --manifest, or --gallery with --queries".into())),
            };
            match format {
                Format::Json => println!("{}", report.to_json()),
                Format::Csv => print!("{}", report.to_csv(&method)),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp(None).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
