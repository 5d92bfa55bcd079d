//! Evaluator precision benchmark.
//!
//! Each task contributes a Correct item (the observation of its ground-truth
//! trace) and an Incorrect item (the observation of the ground truth with one
//! step mutated). A judge is scored correct on a Correct item when it says
//! YES and on an Incorrect item when it says NO with an explanation.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{matches, script_from_ground_truth, success, HarnessError, MatchConfig, TaskSpec};
use crate::agents::{
    delta_phrase, oracle_evaluate, EvaluationError, Evaluator, EvaluatorPrompt, PromptSections,
    Verdict, VerdictRule,
};
use crate::flightlang;
use crate::llmclient::{ChatBackend, ModelSettings};
use crate::semantics::{parse_observation, transform, FormatConfig};
use crate::sim::{SimConfig, Transition};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    Correct,
    Incorrect,
}

/// The single-step change behind an Incorrect item.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mutation {
    /// A translation reversed.
    DirectionFlip { step: usize },
    /// A translation lengthened or shortened by `delta` meters.
    Magnitude { step: usize, delta: f64 },
    /// A rotation with its sense reversed.
    RotationFlip { step: usize },
}

impl Mutation {
    pub fn step(&self) -> usize {
        match *self {
            Mutation::DirectionFlip { step }
            | Mutation::Magnitude { step, .. }
            | Mutation::RotationFlip { step } => step,
        }
    }

    fn apply(&self, ground_truth: &[Transition]) -> Vec<Transition> {
        let mut out = ground_truth.to_vec();
        let t = &mut out[self.step()];
        match *self {
            Mutation::DirectionFlip { .. } => {
                *t = Transition::new(-t.d_north, -t.d_east, -t.d_down, t.d_yaw);
            }
            Mutation::Magnitude { delta, .. } => {
                let len =
                    (t.d_north * t.d_north + t.d_east * t.d_east + t.d_down * t.d_down).sqrt();
                let scale = (len + delta) / len;
                *t = Transition::new(
                    t.d_north * scale,
                    t.d_east * scale,
                    t.d_down * scale,
                    t.d_yaw,
                );
            }
            Mutation::RotationFlip { .. } => {
                t.d_yaw = -t.d_yaw;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionItem {
    pub task_id: String,
    pub task: String,
    pub observation: String,
    pub label: Label,
    pub ground_truth: Vec<Transition>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mutation: Option<Mutation>,
}

fn candidates(task: &TaskSpec, rng: &mut ChaCha8Rng) -> Vec<Mutation> {
    let mut out = Vec::new();
    for (step, t) in task.ground_truth.iter().enumerate() {
        if t.d_yaw != 0.0 {
            out.push(Mutation::RotationFlip { step });
        } else if t.has_translation() {
            out.push(Mutation::DirectionFlip { step });
            let magnitude = f64::from(rng.gen_range(1..=3u8));
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            out.push(Mutation::Magnitude {
                step,
                delta: sign * magnitude,
            });
            out.push(Mutation::Magnitude {
                step,
                delta: -sign * magnitude,
            });
        }
    }
    out.shuffle(rng);
    out
}

fn observe(
    ground_truth: &[Transition],
    sim: &SimConfig,
    fmt: &FormatConfig,
) -> Option<(String, flightlang::ExecutionTrace)> {
    let script = script_from_ground_truth(ground_truth, sim)?;
    let trace = flightlang::run(&script, sim);
    if trace.error_count() > 0 {
        return None;
    }
    Some((transform(&trace, fmt).rendered, trace))
}

/// Two items per task, Correct then Incorrect, in corpus order. The mutation
/// for each task is drawn from a ChaCha stream seeded by `seed`; candidates
/// that cannot be realized as a script are skipped.
pub fn build_precision_dataset(
    corpus: &[TaskSpec],
    seed: u64,
    sim: &SimConfig,
    fmt: &FormatConfig,
    matching: &MatchConfig,
) -> Result<Vec<PrecisionItem>, HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items = Vec::with_capacity(corpus.len() * 2);
    for task in corpus {
        let (correct_obs, correct_trace) =
            observe(&task.ground_truth, sim, fmt).ok_or_else(|| {
                HarnessError::Dataset(format!("{}: ground truth is not realizable", task.id))
            })?;
        if !oracle_evaluate(&correct_trace, &task.ground_truth, matching).is_yes() {
            return Err(HarnessError::Dataset(format!(
                "{}: ground truth fails its own check",
                task.id
            )));
        }

        let mut incorrect = None;
        for mutation in candidates(task, &mut rng) {
            let mutated = mutation.apply(&task.ground_truth);
            let Some((obs, trace)) = observe(&mutated, sim, fmt) else {
                continue;
            };
            let step = mutation.step();
            let far = !matches(
                &mutated[step],
                &task.ground_truth[step],
                &scaled(matching, 2.0),
            );
            if far && !oracle_evaluate(&trace, &task.ground_truth, matching).is_yes() {
                incorrect = Some((obs, mutation));
                break;
            }
        }
        let (incorrect_obs, mutation) = incorrect
            .ok_or_else(|| HarnessError::Dataset(format!("{}: no realizable mutation", task.id)))?;

        items.push(PrecisionItem {
            task_id: task.id.clone(),
            task: task.description.clone(),
            observation: correct_obs,
            label: Label::Correct,
            ground_truth: task.ground_truth.clone(),
            mutation: None,
        });
        items.push(PrecisionItem {
            task_id: task.id.clone(),
            task: task.description.clone(),
            observation: incorrect_obs,
            label: Label::Incorrect,
            ground_truth: task.ground_truth.clone(),
            mutation: Some(mutation),
        });
    }
    Ok(items)
}

fn scaled(m: &MatchConfig, factor: f64) -> MatchConfig {
    MatchConfig {
        position_tolerance: m.position_tolerance * factor,
        yaw_tolerance: m.yaw_tolerance * factor,
        ..*m
    }
}

/// Something that can judge an observation against its task.
pub trait PrecisionJudge: Send + Sync {
    fn judge(&self, item: &PrecisionItem) -> Result<Verdict, EvaluationError>;
}

impl<F> PrecisionJudge for F
where
    F: Fn(&PrecisionItem) -> Result<Verdict, EvaluationError> + Send + Sync,
{
    fn judge(&self, item: &PrecisionItem) -> Result<Verdict, EvaluationError> {
        self(item)
    }
}

/// Reads the transitions back out of the observation text and compares them
/// with the item's ground truth.
pub struct OracleJudge {
    pub matching: MatchConfig,
}

impl PrecisionJudge for OracleJudge {
    fn judge(&self, item: &PrecisionItem) -> Result<Verdict, EvaluationError> {
        let steps =
            parse_observation(&item.observation).map_err(|_| EvaluationError::EmptyObservation)?;
        if let Some(k) = steps.iter().position(|s| s.errored) {
            return Ok(Verdict::no(format!("Action {} failed.", k + 1)));
        }
        let executed: Vec<Transition> = steps.iter().map(|s| s.transition).collect();
        if success(&executed, &item.ground_truth, &self.matching) == 1 {
            return Ok(Verdict::yes("The trajectory matches the task."));
        }
        let explanation = match executed
            .iter()
            .zip(&item.ground_truth)
            .position(|(a, b)| !matches(a, b, &self.matching))
        {
            Some(k) => format!(
                "Action {} executed '{}' but the task requires '{}'.",
                k + 1,
                delta_phrase(&executed[k]),
                delta_phrase(&item.ground_truth[k])
            ),
            None => format!(
                "The trajectory has {} actions but the task requires {}.",
                executed.len(),
                item.ground_truth.len()
            ),
        };
        Ok(Verdict::no(explanation))
    }
}

/// An LLM evaluator behind a chat backend.
pub struct LlmJudge {
    evaluator: Evaluator,
}

impl LlmJudge {
    pub fn new(
        backend: Arc<dyn ChatBackend>,
        prompt: &EvaluatorPrompt,
        sections: PromptSections,
        settings: ModelSettings,
        rule: VerdictRule,
    ) -> Self {
        LlmJudge {
            evaluator: Evaluator::new(backend, prompt, sections, settings, rule),
        }
    }
}

impl PrecisionJudge for LlmJudge {
    fn judge(&self, item: &PrecisionItem) -> Result<Verdict, EvaluationError> {
        self.evaluator
            .evaluate(&item.task, &item.observation)
            .map(|e| e.verdict)
            .map_err(|(e, _)| e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionReport {
    pub evaluations: usize,
    pub correct_items: usize,
    pub incorrect_items: usize,
    pub precision_correct: f64,
    pub precision_incorrect: f64,
    pub precision_total: f64,
    /// Evaluations that produced no usable verdict; scored as wrong.
    pub failed_evaluations: usize,
}

impl PrecisionReport {
    pub fn table(&self) -> String {
        format!(
            "precision correct {:.1}%  incorrect {:.1}%  total {:.1}%  ({} evaluations, {} failed)\n",
            self.precision_correct * 100.0,
            self.precision_incorrect * 100.0,
            self.precision_total * 100.0,
            self.evaluations,
            self.failed_evaluations
        )
    }
}

fn ratio(hits: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

/// Judges every item `repetitions` times.
pub fn evaluator_precision(
    dataset: &[PrecisionItem],
    judge: &dyn PrecisionJudge,
    repetitions: u32,
    workers: usize,
) -> Result<PrecisionReport, HarnessError> {
    if dataset.is_empty() {
        return Err(HarnessError::Config("empty precision dataset".into()));
    }
    if repetitions < 1 || workers < 1 {
        return Err(HarnessError::Config(
            "repetitions and workers must be at least 1".into(),
        ));
    }
    let jobs: Vec<&PrecisionItem> = dataset
        .iter()
        .flat_map(|item| std::iter::repeat_n(item, repetitions as usize))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let outcomes: Vec<(Label, Option<bool>)> = pool.install(|| {
        jobs.par_iter()
            .map(|item| {
                let hit = match (item.label, judge.judge(item).ok()) {
                    (_, None) => None,
                    (Label::Correct, Some(v)) => Some(v.is_yes()),
                    (Label::Incorrect, Some(v)) => {
                        Some(!v.is_yes() && !v.explanation.trim().is_empty())
                    }
                };
                (item.label, hit)
            })
            .collect()
    });

    let count = |label: Label| outcomes.iter().filter(|(l, _)| *l == label).count();
    let hits = |label: Label| {
        outcomes
            .iter()
            .filter(|(l, h)| *l == label && *h == Some(true))
            .count()
    };
    let (nc, ni) = (count(Label::Correct), count(Label::Incorrect));
    let (hc, hi) = (hits(Label::Correct), hits(Label::Incorrect));
    Ok(PrecisionReport {
        evaluations: outcomes.len(),
        correct_items: nc,
        incorrect_items: ni,
        precision_correct: ratio(hc, nc),
        precision_incorrect: ratio(hi, ni),
        precision_total: ratio(hc + hi, nc + ni),
        failed_evaluations: outcomes.iter().filter(|(_, h)| h.is_none()).count(),
    })
}
