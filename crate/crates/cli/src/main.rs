//! `attrsv <command> --config <path> [key=value ...]`

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use attrsv_core::config::{Preset, RunConfig};
use attrsv_core::explain::{render_explanation, ExplanationFormat};
use attrsv_core::pipeline::{self, ExplainRequest, TrialSelector, Workspace};
use attrsv_core::similarity::SimilarityMode;
use attrsv_core::{Error, ErrorCategory, Result};
use clap::{Args, Parser, Subcommand};

const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERIC: u8 = 4;

#[derive(Parser)]
#[command(name = "attrsv", version, about = "Attribute-based explainable speaker verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run config (TOML). Relative paths inside it resolve against its directory.
    #[arg(long, short)]
    config: PathBuf,
    /// Config override, e.g. `--set stage2.forest.n_trees=50`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Worker threads for extraction, training and scoring (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Re-run even if the stamp says the outputs are current.
    #[arg(long)]
    force: bool,
    /// Trailing `key=value` overrides, same as `--set`.
    #[arg(value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    fn workspace(&self) -> Result<Workspace> {
        if let Some(n) = self.workers {
            if n == 0 {
                return Err(Error::Config("--workers must be at least 1".into()));
            }
            // Fails only if a pool already exists, which cannot happen here.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
        let overrides: Vec<String> = self.set.iter().chain(&self.overrides).cloned().collect();
        if !self.config.exists() {
            return Err(Error::Config(format!(
                "config {} does not exist (create one with `attrsv init --config {}`)",
                self.config.display(),
                self.config.display()
            )));
        }
        let mut ws = Workspace::open(&self.config, &overrides)?;
        ws.force = self.force;
        Ok(ws)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a config file with every default spelled out.
    Init {
        #[arg(long, short)]
        config: PathBuf,
        /// desk, quick or full.
        #[arg(long, default_value = "desk")]
        preset: String,
        /// Overwrite an existing file.
        #[arg(long)]
        force: bool,
    },
    /// Render the synthetic train and test corpora.
    Synth(Common),
    /// MFCC caches and embedding tables.
    Extract(Common),
    /// Train the stage-1 attribute classifiers.
    TrainAttr(Common),
    /// Sample target and non-target trial lists.
    MakeTrials(Common),
    /// Similarity vectors and stage-2 verifiers.
    TrainSv(Common),
    /// Score the test trials and write the report.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Refit on these similarity components only (comma separated).
        #[arg(long, value_delimiter = ',')]
        attributes: Option<Vec<String>>,
    },
    /// Explain one test trial.
    Explain {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "ac")]
        route: String,
        #[arg(long, default_value = "softmax")]
        mode: String,
        #[arg(long, default_value = "logreg")]
        kind: String,
        /// Index into the test trial list.
        #[arg(long, conflicts_with = "pair")]
        trial: Option<usize>,
        /// Two clip ids.
        #[arg(long, num_args = 2, value_names = ["CLIP_A", "CLIP_B"])]
        pair: Option<Vec<String>>,
        /// text or json.
        #[arg(long, default_value = "text")]
        format: String,
    },
    /// synth, extract, train-attr, make-trials, train-sv and eval in order.
    Run(Common),
}

fn init(path: &Path, preset: &str, force: bool) -> Result<()> {
    let preset = Preset::parse(preset)?;
    if path.exists() && !force {
        return Err(Error::Config(format!(
            "{} already exists; pass --force to overwrite",
            path.display()
        )));
    }
    let text = RunConfig::preset(preset).to_toml()?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Init { config, preset, force } => init(&config, &preset, force),
        Command::Synth(c) => pipeline::synth(&c.workspace()?),
        Command::Extract(c) => pipeline::extract(&c.workspace()?),
        Command::TrainAttr(c) => pipeline::train_attr(&c.workspace()?),
        Command::MakeTrials(c) => pipeline::make_trials(&c.workspace()?),
        Command::TrainSv(c) => pipeline::train_sv(&c.workspace()?),
        Command::Eval { common, attributes } => {
            let ws = common.workspace()?;
            let report = pipeline::eval(&ws, attributes.as_deref())?;
            print!("{}", report.grid_csv());
            Ok(())
        }
        Command::Run(c) => {
            let report = pipeline::run_all(&c.workspace()?)?;
            print!("{}", report.grid_csv());
            Ok(())
        }
        Command::Explain {
            common,
            route,
            mode,
            kind,
            trial,
            pair,
            format,
        } => {
            let format = ExplanationFormat::parse(&format)?;
            let trial = match (trial, pair) {
                (_, Some(p)) => TrialSelector::Pair(p[0].clone(), p[1].clone()),
                (Some(i), None) => TrialSelector::Index(i),
                (None, None) => TrialSelector::Index(0),
            };
            let ws = common.workspace()?;
            let req = ExplainRequest {
                route,
                mode: SimilarityMode::parse(&mode)?,
                kind,
                trial,
            };
            let e = pipeline::explain_trial(&ws, &req)?;
            println!("{}", render_explanation(&e, format)?.trim_end());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.category() {
                ErrorCategory::Config => EXIT_CONFIG,
                ErrorCategory::Data => EXIT_DATA,
                ErrorCategory::Numeric => EXIT_NUMERIC,
            })
        }
    }
}
