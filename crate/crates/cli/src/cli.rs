//! Argument parsing and dispatch.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::ablate::Ablation;
use crate::commands::{emit, Stage, Workspace};
use crate::config::{PipelineConfig, OUT_DIR_ENV};
use crate::error::{CliError, CliResult};
use crate::pipeline;

#[derive(Debug, Parser)]
#[command(name = "wscl", version, about = "Synthetic compositional grounding workbench")]
pub struct Cli {
    /// JSON config file; fields left out take their defaults.
    #[arg(long, global = true, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Built-in config: `default` or `small`.
    #[arg(long, global = true)]
    pub preset: Option<String>,
    /// Override a config field by dotted path, e.g. `train.epochs=10`.
    #[arg(long = "set", global = true, value_name = "PATH=VALUE")]
    pub set: Vec<String>,
    /// Labeling threshold p.
    #[arg(long, global = true)]
    pub threshold_p: Option<f64>,
    /// Output directory; takes precedence over the environment and config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Suppress progress messages.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the description corpus.
    Gen,
    /// Synthesize scenes and region features.
    Scenes,
    /// Pseudo-label scenes with the configured labeler.
    Label,
    /// Build training queries and alignment targets.
    Targets,
    /// Train the grounding model.
    Train,
    /// Evaluate on the held-out benchmark.
    Eval {
        /// Score this results JSONL instead of the trained model.
        #[arg(long)]
        results: Option<PathBuf>,
    },
    /// Run a canned sweep.
    Ablate {
        #[arg(value_enum)]
        kind: Ablation,
    },
    /// Summarize label recall, training loss and metrics.
    Report,
    /// Run every stage from gen to report.
    Run,
    /// Print the parse tree of a description.
    Parse { text: String },
    /// Print the resolved config.
    Config,
}

impl Cli {
    /// Config from file or preset, then `--set`, `--threshold-p` and the
    /// output directory override, validated.
    pub fn resolve_config(&self) -> CliResult<PipelineConfig> {
        let base = match (&self.config, &self.preset) {
            (Some(path), _) => PipelineConfig::load(path)?,
            (None, Some(name)) => PipelineConfig::preset(name)?,
            (None, None) => PipelineConfig::default(),
        };
        let mut cfg = base.with_overrides(&self.set)?;
        if let Some(p) = self.threshold_p {
            cfg.labeler.threshold_p = p;
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        } else if let Some(dir) = std::env::var_os(OUT_DIR_ENV).filter(|d| !d.is_empty()) {
            cfg.output_dir = PathBuf::from(dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn execute(cli: &Cli) -> CliResult<()> {
    let cfg = cli.resolve_config()?;
    let mut ws = Workspace::new(cfg)?;
    ws.quiet = cli.quiet;
    match &cli.command {
        Command::Gen => ws.run_stage(Stage::Gen).map(drop),
        Command::Scenes => ws.run_stage(Stage::Scenes).map(drop),
        Command::Label => ws.run_stage(Stage::Label).map(drop),
        Command::Targets => ws.run_stage(Stage::Targets).map(drop),
        Command::Train => ws.run_stage(Stage::Train).map(drop),
        Command::Eval { results: None } => ws.run_stage(Stage::Eval).map(drop),
        Command::Eval { results: Some(path) } => {
            let report = ws.eval_external(path)?;
            emit(&(serde_json::to_string_pretty(&report).map_err(|e| CliError::Core(e.into()))? + "\n"));
            Ok(())
        }
        Command::Ablate { kind } => ws.ablate(*kind).map(drop),
        Command::Report => ws.run_stage(Stage::Report).map(drop),
        Command::Run => ws.run_all().map(drop),
        Command::Parse { text } => {
            let pool = pipeline::load_pool(&ws.cfg)?;
            let tree = pipeline::parser_for(&pool).parse(text)?;
            emit(&tree.to_string());
            Ok(())
        }
        Command::Config => {
            let text = serde_json::to_string_pretty(&ws.cfg).map_err(|e| CliError::Core(e.into()))?;
            emit(&(text + "\n"));
            Ok(())
        }
    }
}

/// Parses `args` and runs; returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
