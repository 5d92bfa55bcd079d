//! Task corpora, metrics, corpus runs, iteration sweeps and the evaluator
//! precision benchmark.

pub mod corpus;
pub mod metrics;
pub mod precision;
pub mod runner;

use thiserror::Error;

pub use corpus::{
    builtin_advanced, builtin_basic, load_corpus, parse_corpus, script_from_ground_truth,
    validate_corpus, TaskSpec, Tier,
};
pub use metrics::{
    completeness, correct_actions, lcs_len, matches, success, MatchConfig, Matcher, RotationMatch,
};
pub use precision::{
    build_precision_dataset, evaluator_precision, Label, LlmJudge, Mutation, OracleJudge,
    PrecisionItem, PrecisionJudge, PrecisionReport,
};
pub use runner::{
    run_corpus, sweep_iterations, write_rows_csv, write_summary, write_sweep_csv, BackendProvider,
    CorpusRun, HarnessConfig, RunRow, ScoreReport, ScriptedProvider, SharedProvider, SweepPoint,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("corpus error: {0}")]
    Corpus(String),
    #[error("invalid harness configuration: {0}")]
    Config(String),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error(transparent)]
    Llm(#[from] crate::llmclient::LlmError),
    #[error(transparent)]
    Loop(#[from] crate::looprunner::LoopError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}
