//! The closed feedback loop: generate, simulate, observe, evaluate, refine.
//!
//! The initial script is generated once; each round then simulates the
//! current script on a fresh simulator, renders the observation, asks the
//! evaluator for a verdict and stops on YES. Otherwise the generator refines
//! the script within the same conversation. When the round cap is reached
//! the last refinement is returned without evaluation and the run is flagged
//! for a human. Malformed generator output does
//! not abort the run: it becomes a synthetic NO verdict carrying the error
//! and consumes the round.

use std::path::Path;
use std::sync::Arc;

use log::info;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{
    oracle_evaluate, Conversation, EvaluationError, Evaluator, EvaluatorPrompt, Generation,
    GenerationError, GeneratorPrompt, GeneratorSession, PromptSections, Verdict, VerdictRule,
};
use crate::evalharness::MatchConfig;
use crate::flightlang::{self, ExecutionTrace, FlightScript};
use crate::llmclient::{ChatBackend, LlmError, ModelSettings};
use crate::semantics::{render, FormatConfig, ObservationMode};
use crate::sim::{SimConfig, Transition};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvaluatorMode {
    /// A separate evaluator model.
    #[default]
    External,
    /// The generator judges its own trajectory in its own conversation.
    #[serde(rename = "self")]
    SelfRefine,
    /// Deterministic ground-truth comparison.
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopConfig {
    pub max_iterations: u32,
    pub observation_mode: ObservationMode,
    pub evaluator_mode: EvaluatorMode,
    pub verdict_rule: VerdictRule,
    pub record_transcripts: bool,
    pub prompt_sections: PromptSections,
    pub sim: SimConfig,
    pub format: FormatConfig,
    pub matching: MatchConfig,
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig {
            max_iterations: 6,
            observation_mode: ObservationMode::Semantic,
            evaluator_mode: EvaluatorMode::External,
            verdict_rule: VerdictRule::Structured,
            record_transcripts: true,
            prompt_sections: PromptSections::Full,
            sim: SimConfig::default(),
            format: FormatConfig::default(),
            matching: MatchConfig::default(),
        }
    }
}

/// Models, prompts and backends for one loop run.
#[derive(Clone)]
pub struct LoopAgents {
    pub generator_backend: Arc<dyn ChatBackend>,
    /// Required for [`EvaluatorMode::External`].
    pub evaluator_backend: Option<Arc<dyn ChatBackend>>,
    pub generator_prompt: GeneratorPrompt,
    pub evaluator_prompt: EvaluatorPrompt,
    pub generator_settings: ModelSettings,
    pub evaluator_settings: ModelSettings,
}

impl LoopAgents {
    pub fn new(
        generator_backend: Arc<dyn ChatBackend>,
        evaluator_backend: Option<Arc<dyn ChatBackend>>,
    ) -> Self {
        LoopAgents {
            generator_backend,
            evaluator_backend,
            generator_prompt: GeneratorPrompt::default(),
            evaluator_prompt: EvaluatorPrompt::default(),
            generator_settings: ModelSettings::default(),
            evaluator_settings: ModelSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopTask {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub description: String,
    /// Needed only by the oracle evaluator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<Vec<Transition>>,
}

impl LoopTask {
    pub fn new(description: impl Into<String>) -> Self {
        LoopTask {
            id: None,
            description: description.into(),
            ground_truth: None,
        }
    }
}

impl From<&crate::evalharness::TaskSpec> for LoopTask {
    fn from(t: &crate::evalharness::TaskSpec) -> Self {
        LoopTask {
            id: Some(t.id.clone()),
            description: t.description.clone(),
            ground_truth: Some(t.ground_truth.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LoopOutcome {
    Accepted,
    MaxIterationsExceeded,
    Faulted,
    /// Open-loop run: the initial script was kept without evaluation.
    Unevaluated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: u32,
    /// Raw generator reply behind this round's script.
    pub response_text: Option<String>,
    pub script_text: Option<String>,
    pub generation_error: Option<String>,
    pub observation_text: String,
    /// Exact user message the evaluator received.
    pub evaluator_input: Option<String>,
    pub evaluator_response: Option<String>,
    pub verdict: Verdict,
    /// True when the verdict was produced by the loop itself from an error.
    pub synthetic: bool,
    pub trace: Option<ExecutionTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopResult {
    pub outcome: LoopOutcome,
    pub final_script: Option<FlightScript>,
    pub iterations_used: u32,
    pub per_iteration: Vec<IterationRecord>,
    pub needs_human: bool,
    pub fault: Option<String>,
    /// Generator reply to the last NO when the cap was reached; its script
    /// is `final_script` and was never evaluated.
    pub final_response: Option<String>,
    pub conversation: Conversation,
}

impl LoopResult {
    pub fn last_verdict(&self) -> Option<&Verdict> {
        self.per_iteration.last().map(|r| &r.verdict)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LoopError {
    #[error("invalid loop configuration: {0}")]
    Config(String),
}

impl LoopConfig {
    pub fn validate(&self) -> Result<(), LoopError> {
        if self.max_iterations < 1 {
            return Err(LoopError::Config(
                "max_iterations must be at least 1".into(),
            ));
        }
        self.sim.validate().map_err(LoopError::Config)
    }
}

fn check_inputs(
    task: &LoopTask,
    config: &LoopConfig,
    agents: &LoopAgents,
) -> Result<(), LoopError> {
    if task.description.trim().is_empty() {
        return Err(LoopError::Config("empty task description".into()));
    }
    match config.evaluator_mode {
        EvaluatorMode::Oracle if task.ground_truth.as_ref().is_none_or(|g| g.is_empty()) => Err(
            LoopError::Config("the oracle evaluator needs a ground truth".into()),
        ),
        EvaluatorMode::External if agents.evaluator_backend.is_none() => Err(LoopError::Config(
            "the external evaluator needs an evaluator backend".into(),
        )),
        _ => Ok(()),
    }
}

fn fatal(generation: &Generation) -> Option<&LlmError> {
    match &generation.script {
        Err(GenerationError::Llm(e)) if e.is_unrecoverable() => Some(e),
        _ => None,
    }
}

/// A single generation whose script is kept as-is (no evaluation rounds).
pub fn run_open_loop(
    task: &LoopTask,
    config: &LoopConfig,
    agents: &LoopAgents,
) -> Result<LoopResult, LoopError> {
    config.sim.validate().map_err(LoopError::Config)?;
    if task.description.trim().is_empty() {
        return Err(LoopError::Config("empty task description".into()));
    }
    let mut session = GeneratorSession::new(
        agents.generator_backend.clone(),
        &agents.generator_prompt,
        agents.generator_settings.clone(),
    );
    let generation = session.generate(&task.description);
    let fault = fatal(&generation).map(ToString::to_string);
    Ok(LoopResult {
        outcome: if fault.is_some() {
            LoopOutcome::Faulted
        } else {
            LoopOutcome::Unevaluated
        },
        final_script: generation.script.ok(),
        iterations_used: 0,
        per_iteration: Vec::new(),
        needs_human: false,
        fault,
        final_response: None,
        conversation: session.conversation().clone(),
    })
}

enum Judged {
    Verdict {
        verdict: Verdict,
        input: Option<String>,
        response: Option<String>,
        synthetic: bool,
    },
    Fault(LlmError),
}

fn judged_from(
    result: Result<crate::agents::Evaluation, (EvaluationError, Option<String>)>,
) -> Judged {
    match result {
        Ok(e) => Judged::Verdict {
            verdict: e.verdict,
            input: Some(e.request_message),
            response: Some(e.response),
            synthetic: false,
        },
        Err((EvaluationError::Llm(e), _)) if e.is_unrecoverable() => Judged::Fault(e),
        Err((err, response)) => Judged::Verdict {
            verdict: Verdict::no(format!(
                "The evaluation could not be completed ({err}). Re-check the script against the task."
            )),
            input: None,
            response,
            synthetic: true,
        },
    }
}

/// Runs the closed loop for one task.
pub fn run_loop(
    task: &LoopTask,
    config: &LoopConfig,
    agents: &LoopAgents,
) -> Result<LoopResult, LoopError> {
    config.validate()?;
    check_inputs(task, config, agents)?;

    let mut session = GeneratorSession::new(
        agents.generator_backend.clone(),
        &agents.generator_prompt,
        agents.generator_settings.clone(),
    );
    let evaluator = agents.evaluator_backend.as_ref().map(|b| {
        Evaluator::new(
            b.clone(),
            &agents.evaluator_prompt,
            config.prompt_sections,
            agents.evaluator_settings.clone(),
            config.verdict_rule,
        )
    });

    let mut records: Vec<IterationRecord> = Vec::new();
    let mut last_script: Option<FlightScript> = None;
    let mut feedback: Option<Verdict> = None;
    let mut final_generation: Option<Generation> = None;

    let faulted = |records: Vec<IterationRecord>,
                   script,
                   err: &LlmError,
                   session: &GeneratorSession| LoopResult {
        outcome: LoopOutcome::Faulted,
        final_script: script,
        iterations_used: records.len() as u32,
        per_iteration: records,
        needs_human: false,
        fault: Some(err.to_string()),
        final_response: None,
        conversation: session.conversation().clone(),
    };

    let mut generation = session.generate(&task.description);
    if let Some(err) = fatal(&generation) {
        return Ok(faulted(records, None, err, &session));
    }

    for iteration in 1..=config.max_iterations {
        let record = match generation.script {
            Ok(script) => {
                let trace = flightlang::run(&script, &config.sim);
                let observation = render(&trace, config.observation_mode, &config.format);
                let judged = match config.evaluator_mode {
                    EvaluatorMode::Oracle => Judged::Verdict {
                        verdict: oracle_evaluate(
                            &trace,
                            task.ground_truth.as_deref().unwrap_or_default(),
                            &config.matching,
                        ),
                        input: None,
                        response: None,
                        synthetic: false,
                    },
                    EvaluatorMode::External => judged_from(
                        evaluator
                            .as_ref()
                            .expect("checked above")
                            .evaluate(&task.description, &observation),
                    ),
                    EvaluatorMode::SelfRefine => judged_from(session.self_evaluate(
                        &task.description,
                        &observation,
                        &agents.evaluator_prompt,
                        config.verdict_rule,
                    )),
                };
                let (verdict, input, response, synthetic) = match judged {
                    Judged::Verdict {
                        verdict,
                        input,
                        response,
                        synthetic,
                    } => (verdict, input, response, synthetic),
                    Judged::Fault(err) => {
                        return Ok(faulted(records, Some(script), &err, &session));
                    }
                };
                let record = IterationRecord {
                    iteration,
                    response_text: generation.response,
                    script_text: Some(script.to_source()),
                    generation_error: None,
                    observation_text: observation,
                    evaluator_input: input,
                    evaluator_response: response,
                    verdict,
                    synthetic,
                    trace: Some(trace),
                };
                last_script = Some(script);
                record
            }
            Err(err) => IterationRecord {
                iteration,
                response_text: generation.response,
                script_text: None,
                generation_error: Some(err.to_string()),
                observation_text: String::new(),
                evaluator_input: None,
                evaluator_response: None,
                verdict: Verdict::no(format!(
                    "The previous response could not be executed: {err}. Answer with a valid flight script in one fenced code block."
                )),
                synthetic: true,
                trace: None,
            },
        };
        info!(
            "round {iteration}: verdict {:?}{}",
            record.verdict.decision,
            if record.synthetic { " (synthetic)" } else { "" }
        );

        let accepted = record.verdict.is_yes();
        let transport_failure = record.generation_error.is_some() && record.response_text.is_none();
        if !transport_failure || feedback.is_none() {
            feedback = Some(record.verdict.clone());
        }
        records.push(record);
        if accepted {
            return Ok(LoopResult {
                outcome: LoopOutcome::Accepted,
                final_script: last_script,
                iterations_used: iteration,
                per_iteration: records,
                needs_human: false,
                fault: None,
                final_response: None,
                conversation: session.conversation().clone(),
            });
        }
        let next = if session.has_response() {
            session.refine(feedback.as_ref().expect("set above"))
        } else {
            session.generate(&task.description)
        };
        if let Some(err) = fatal(&next) {
            return Ok(faulted(records, last_script, err, &session));
        }
        if iteration == config.max_iterations {
            final_generation = Some(next);
            break;
        }
        generation = next;
    }

    // The refinement requested after the last NO is returned unevaluated.
    let final_generation = final_generation.expect("loop ran at least once");
    Ok(LoopResult {
        outcome: LoopOutcome::MaxIterationsExceeded,
        final_script: final_generation.script.ok(),
        iterations_used: records.len() as u32,
        per_iteration: records,
        needs_human: true,
        fault: None,
        final_response: final_generation.response,
        conversation: session.conversation().clone(),
    })
}

/// Per-run record written for post-hoc inspection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub task: LoopTask,
    pub config: LoopConfig,
    pub result: LoopResult,
}

impl Transcript {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("transcript serializes") + "\n"
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.to_json())
    }

    pub fn read(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}
