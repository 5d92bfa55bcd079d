//! `skyloop`: run the closed loop, corpus benchmarks, iteration sweeps and
//! evaluator precision benchmarks.
//!
//! Exit codes: 0 on success (for `run`, the script was accepted), 2 when
//! `run` hit the iteration cap and needs a human, 1 on any error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use skyloop::agents::PromptSections;
use skyloop::llmclient::BackendKind;
use skyloop::looprunner::EvaluatorMode;
use skyloop::semantics::ObservationMode;

#[derive(Debug, Parser)]
#[command(
    name = "skyloop",
    version,
    about = "Closed-loop LLM flight-script generation and evaluation"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub backend: Option<BackendArg>,
    /// Canned responses for the scripted backend.
    #[arg(long, global = true)]
    pub script: Option<PathBuf>,
    /// Base URL of an OpenAI-compatible API (for the http backend).
    #[arg(long, global = true)]
    pub endpoint: Option<String>,
    /// Name of the environment variable holding the API key.
    #[arg(long, global = true)]
    pub api_key_env: Option<String>,
    /// Model name for both agents.
    #[arg(long, global = true)]
    pub model: Option<String>,
    #[arg(long, global = true, value_enum)]
    pub evaluator: Option<EvaluatorArg>,
    #[arg(long, global = true, value_enum)]
    pub observation: Option<ObservationArg>,
    #[arg(long, global = true)]
    pub max_iterations: Option<u32>,
    #[arg(long, global = true)]
    pub repetitions: Option<u32>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory for transcripts and reports.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Maximum concurrent runs.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Task corpus (JSON); defaults to the bundled corpora.
    #[arg(long, global = true)]
    pub corpus: Option<PathBuf>,
    /// Log progress to standard error.
    #[arg(short, long, global = true)]
    pub verbose: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BackendArg {
    Http,
    Scripted,
}

impl From<BackendArg> for BackendKind {
    fn from(b: BackendArg) -> Self {
        match b {
            BackendArg::Http => BackendKind::Http,
            BackendArg::Scripted => BackendKind::Scripted,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum EvaluatorArg {
    External,
    #[value(name = "self")]
    SelfRefine,
    Oracle,
}

impl From<EvaluatorArg> for EvaluatorMode {
    fn from(e: EvaluatorArg) -> Self {
        match e {
            EvaluatorArg::External => EvaluatorMode::External,
            EvaluatorArg::SelfRefine => EvaluatorMode::SelfRefine,
            EvaluatorArg::Oracle => EvaluatorMode::Oracle,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ObservationArg {
    Semantic,
    Numeric,
}

impl From<ObservationArg> for ObservationMode {
    fn from(o: ObservationArg) -> Self {
        match o {
            ObservationArg::Semantic => ObservationMode::Semantic,
            ObservationArg::Numeric => ObservationMode::Numeric,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TierArg {
    Basic,
    Advanced,
    All,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SectionsArg {
    RolesOnly,
    RolesRules,
    Full,
}

impl From<SectionsArg> for PromptSections {
    fn from(s: SectionsArg) -> Self {
        match s {
            SectionsArg::RolesOnly => PromptSections::RolesOnly,
            SectionsArg::RolesRules => PromptSections::RolesRules,
            SectionsArg::Full => PromptSections::Full,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the loop on one task.
    Run {
        /// Task description.
        #[arg(long, conflicts_with = "task_id", required_unless_present = "task_id")]
        task: Option<String>,
        /// Id of a corpus task.
        #[arg(long)]
        task_id: Option<String>,
    },
    /// Run a corpus and score it.
    Bench {
        #[arg(long, value_enum, default_value = "all")]
        tier: TierArg,
    },
    /// Score a corpus at several iteration caps.
    Sweep {
        /// Iteration caps; 0 keeps the initial script unevaluated.
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4,5,6")]
        k: Vec<u32>,
        #[arg(long, value_enum, default_value = "all")]
        tier: TierArg,
    },
    /// Measure how often the evaluator classifies observations correctly.
    Precision {
        #[arg(long, value_enum, default_value = "advanced")]
        tier: TierArg,
        /// Evaluator prompt sections to include.
        #[arg(long, value_enum, default_value = "full")]
        sections: SectionsArg,
    },
    /// Check a corpus file.
    ValidateCorpus { path: PathBuf },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = if cli.global.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .init();

    match commands::dispatch(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
