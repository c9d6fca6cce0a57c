//! `uslink` command-line entry points.

mod batch;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use uslink_core::abstraction::abstract_gui;
use uslink_core::gold::{self, DEFAULT_FEWSHOT_GUIS, DEFAULT_SEED};
use uslink_core::model::{parse_prototype, PrototypeStore};
use uslink_core::rico::ingest_rico;
use uslink_core::synth::{self, SynthConfig};

/// Exit status classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok = 0,
    Schema = 1,
    Backend = 2,
    Partial = 3,
}

#[derive(Debug)]
pub struct Failure {
    pub status: Status,
    pub error: anyhow::Error,
}

pub type CliResult<T = Status> = Result<T, Failure>;

pub trait Classify<T> {
    fn schema(self) -> CliResult<T>;
    fn backend(self) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn schema(self) -> CliResult<T> {
        self.map_err(|e| Failure {
            status: Status::Schema,
            error: e.into(),
        })
    }

    fn backend(self) -> CliResult<T> {
        self.map_err(|e| Failure {
            status: Status::Backend,
            error: e.into(),
        })
    }
}

#[derive(Debug, Parser)]
#[command(name = "uslink", version, about = "Interlink user stories with GUI prototypes")]
struct Cli {
    /// Log verbosity (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "warn")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the textual abstraction of a prototype.
    Abstract {
        prototype: PathBuf,
        /// Prefix every component line with its identifier.
        #[arg(long)]
        ids: bool,
    },
    /// Convert a Rico view hierarchy plus semantic annotations.
    IngestRico {
        hierarchy: PathBuf,
        semantics: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// Defaults to the hierarchy file stem.
        #[arg(long)]
        gui_id: Option<String>,
        #[arg(long, default_value = "")]
        domain: String,
    },
    /// Build a gold standard from annotated story/GUI pairs.
    BuildGold {
        pairs: PathBuf,
        #[arg(long)]
        prototypes: PathBuf,
        #[arg(long, default_value_t = DEFAULT_FEWSHOT_GUIS)]
        fewshot_guis: usize,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Generate a synthetic dataset (prototypes/ and pairs.jsonl).
    Synth {
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, default_value_t = 60)]
        guis: usize,
        #[arg(long, default_value_t = 231)]
        pairs: usize,
        #[arg(long, default_value_t = synth::DEFAULT_SEED)]
        seed: u64,
    },
    /// Decide whether each story is implemented by its prototype.
    Detect(batch::BatchArgs),
    /// Extract the components fulfilling each story.
    Match(batch::BatchArgs),
    /// Propose markup for each story.
    Recommend {
        #[command(flatten)]
        batch: batch::BatchArgs,
        /// Candidates per story.
        #[arg(short, default_value_t = uslink_core::recommendation::DEFAULT_K)]
        k: usize,
        /// Also write one HTML preview per candidate here.
        #[arg(long)]
        previews: Option<PathBuf>,
    },
    /// Run a full experiment over a gold standard.
    Evaluate(EvaluateArgs),
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Question {
    Rq1,
    Rq2,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(value_enum)]
    question: Question,
    gold: PathBuf,
    #[arg(long)]
    prototypes: PathBuf,
    /// Comma-separated prompt kinds, e.g. `zs,fs5,cot-t1`, or `all`.
    #[arg(long, default_value = "all")]
    prompts: String,
    #[arg(long, default_value = "oracle-mock")]
    backend: String,
    #[arg(long, default_value_t = 4)]
    parallel: usize,
    /// Evaluate only this many records, evenly spaced over the gold file.
    #[arg(long)]
    sample: Option<usize>,
    /// Keep items already present in the report directory.
    #[arg(long)]
    resume: bool,
    #[arg(short, long)]
    out: PathBuf,
}

fn load_store(dir: &Path) -> CliResult<PrototypeStore> {
    PrototypeStore::load_dir(dir)
        .with_context(|| format!("loading prototypes from {}", dir.display()))
        .schema()
}

fn read(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .schema()
}

fn write(path: &Path, text: &str) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .with_context(|| format!("creating {}", parent.display()))
            .schema()?;
    }
    std::fs::write(path, text)
        .with_context(|| format!("writing {}", path.display()))
        .schema()
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Abstract { prototype, ids } => {
            let proto = parse_prototype(&read(&prototype)?)
                .with_context(|| prototype.display().to_string())
                .schema()?;
            print!("{}", abstract_gui(&proto, ids).rendered);
            Ok(Status::Ok)
        }
        Command::IngestRico {
            hierarchy,
            semantics,
            out,
            gui_id,
            domain,
        } => {
            let parse = |p: &Path| -> CliResult<serde_json::Value> {
                serde_json::from_str(&read(p)?)
                    .with_context(|| p.display().to_string())
                    .schema()
            };
            let gui_id = gui_id.unwrap_or_else(|| {
                hierarchy
                    .file_stem()
                    .map_or("gui".into(), |s| s.to_string_lossy().into_owned())
            });
            let output = ingest_rico(&gui_id, &domain, &parse(&hierarchy)?, &parse(&semantics)?).schema()?;
            for w in &output.warnings {
                log::warn!("{gui_id}: {w:?}");
            }
            if !output.skipped.is_empty() {
                log::info!("{gui_id}: skipped {} decorative leaves", output.skipped.len());
            }
            write(&out, &output.prototype.to_json())?;
            eprintln!(
                "{}: {} components in {} groups",
                gui_id,
                output.prototype.component_count(),
                output.prototype.groups.len()
            );
            Ok(Status::Ok)
        }
        Command::BuildGold {
            pairs,
            prototypes,
            fewshot_guis,
            seed,
            out,
        } => {
            let store = load_store(&prototypes)?;
            let pairs = gold::parse_pairs(&read(&pairs)?).schema()?;
            let g = gold::build(&pairs, &store, fewshot_guis, seed).schema()?;
            write(&out, &g.emit())?;
            eprintln!(
                "{} records ({} implemented, {} not implemented), {} few-shot pairs, {} excluded",
                g.records.len(),
                g.count_class(1),
                g.count_class(0),
                g.fewshot_pairs.len(),
                g.excluded.len()
            );
            Ok(Status::Ok)
        }
        Command::Synth {
            out,
            guis,
            pairs,
            seed,
        } => {
            let data = synth::dataset(&SynthConfig::small(guis, pairs), seed);
            data.store
                .write_dir(&out.join("prototypes"))
                .context("writing prototypes")
                .schema()?;
            write(&out.join("pairs.jsonl"), &gold::pairs_to_jsonl(&data.pairs))?;
            eprintln!("{} prototypes, {} pairs", data.store.len(), data.pairs.len());
            Ok(Status::Ok)
        }
        Command::Detect(args) => batch::run_batch(batch::Step::Detect, &args),
        Command::Match(args) => batch::run_batch(batch::Step::Match, &args),
        Command::Recommend { batch: args, k, previews } => {
            batch::run_batch(batch::Step::Recommend { k, previews }, &args)
        }
        Command::Evaluate(args) => batch::run_evaluate(
            match args.question {
                Question::Rq1 => uslink_core::eval::Question::Rq1,
                Question::Rq2 => uslink_core::eval::Question::Rq2,
            },
            &args.gold,
            &args.prototypes,
            &args.prompts,
            &args.backend,
            args.parallel,
            args.sample,
            args.resume,
            &args.out,
        ),
        Command::Serve { config } => {
            let cfg = uslink_service::ServiceConfig::load(config.as_deref()).schema()?;
            let runtime = tokio::runtime::Runtime::new().schema()?;
            runtime.block_on(uslink_service::serve(cfg)).backend()?;
            Ok(Status::Ok)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .parse_filters(&std::env::var("RUST_LOG").unwrap_or_else(|_| cli.log.clone()))
        .init();
    match run(cli) {
        Ok(status) => ExitCode::from(status as u8),
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.status as u8)
        }
    }
}
