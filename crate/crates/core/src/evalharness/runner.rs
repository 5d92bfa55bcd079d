//! Corpus runs, scoring reports and iteration sweeps.
//!
//! # Report files
//!
//! `runs.csv` has one row per (task, repetition):
//!
//! | column | meaning |
//! |---|---|
//! | `task_id` | corpus id |
//! | `tier` | `basic` or `advanced` |
//! | `repetition` | 1-based repetition index |
//! | `outcome` | `Accepted`, `MaxIterationsExceeded`, `Faulted` or `Unevaluated` |
//! | `iterations_used` | evaluation rounds consumed (0 for open-loop runs) |
//! | `completeness` | correct actions over ground-truth length |
//! | `success` | 1 on an exact sequence match, else 0 |
//! | `faulted` | the run hit an unrecoverable backend error and was scored 0 |
//!
//! `summary.json` is a serialized [`ScoreReport`]. `sweep.csv` has one
//! [`SweepPoint`] per row.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{completeness, script_from_ground_truth, success, HarnessError, TaskSpec, Tier};
use crate::agents::{EvaluatorPrompt, GeneratorPrompt};
use crate::flightlang;
use crate::llmclient::{
    AgentRole, ChatBackend, ModelSettings, ScriptEntry, ScriptFile, ScriptedBackend,
};
use crate::looprunner::{
    run_loop, run_open_loop, EvaluatorMode, LoopAgents, LoopConfig, LoopOutcome, LoopTask,
    Transcript,
};

/// Supplies the agents for one (task, repetition) run.
pub trait BackendProvider: Send + Sync {
    fn agents_for(
        &self,
        task: &TaskSpec,
        repetition: u32,
        config: &LoopConfig,
    ) -> Result<LoopAgents, HarnessError>;
}

/// Hands every run the same backends; each run still gets its own
/// conversation.
pub struct SharedProvider {
    pub agents: LoopAgents,
}

impl BackendProvider for SharedProvider {
    fn agents_for(&self, _: &TaskSpec, _: u32, _: &LoopConfig) -> Result<LoopAgents, HarnessError> {
        Ok(self.agents.clone())
    }
}

/// Builds a fresh scripted backend per run so every run replays its
/// responses from the start.
pub struct ScriptedProvider {
    pub script: ScriptFile,
    pub generator_prompt: GeneratorPrompt,
    pub evaluator_prompt: EvaluatorPrompt,
    pub settings: ModelSettings,
}

const FALLBACK_VERDICT: &str = "VERDICT: YES\nThe trajectory matches the task.";

impl ScriptedProvider {
    pub fn new(script: ScriptFile) -> Self {
        ScriptedProvider {
            script,
            generator_prompt: GeneratorPrompt::default(),
            evaluator_prompt: EvaluatorPrompt::default(),
            settings: ModelSettings::default(),
        }
    }

    fn fallback_entries(
        task: &TaskSpec,
        config: &LoopConfig,
    ) -> Result<Vec<ScriptEntry>, HarnessError> {
        let script =
            script_from_ground_truth(&task.ground_truth, &config.sim).ok_or_else(|| {
                HarnessError::Corpus(format!(
                    "{}: ground truth is not realizable as a script",
                    task.id
                ))
            })?;
        let reply = format!("```\n{}\n```", script.to_source());
        // one extra reply covers the refinement after a final NO
        let rounds = config.max_iterations + 1;
        let mut entries = Vec::new();
        for _ in 0..rounds {
            entries.push(ScriptEntry::new(AgentRole::Generator, reply.clone()));
            match config.evaluator_mode {
                EvaluatorMode::External => {
                    entries.push(ScriptEntry::new(AgentRole::Evaluator, FALLBACK_VERDICT))
                }
                EvaluatorMode::SelfRefine => {
                    entries.push(ScriptEntry::new(AgentRole::Generator, FALLBACK_VERDICT))
                }
                EvaluatorMode::Oracle => {}
            }
        }
        Ok(entries)
    }
}

impl BackendProvider for ScriptedProvider {
    fn agents_for(
        &self,
        task: &TaskSpec,
        _: u32,
        config: &LoopConfig,
    ) -> Result<LoopAgents, HarnessError> {
        let entries = match self.script.entries_for(Some(&task.id)) {
            Some(entries) => entries.to_vec(),
            None if self.script.ground_truth_fallback => Self::fallback_entries(task, config)?,
            None => {
                return Err(HarnessError::Config(format!(
                    "no scripted responses for task {}",
                    task.id
                )))
            }
        };
        let backend: Arc<dyn ChatBackend> = Arc::new(ScriptedBackend::new(entries));
        Ok(LoopAgents {
            generator_backend: backend.clone(),
            evaluator_backend: Some(backend),
            generator_prompt: self.generator_prompt.clone(),
            evaluator_prompt: self.evaluator_prompt.clone(),
            generator_settings: self.settings.clone(),
            evaluator_settings: self.settings.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HarnessConfig {
    /// `max_iterations = 0` runs open-loop: the initial script is scored
    /// without evaluation.
    pub loop_config: LoopConfig,
    pub repetitions: u32,
    pub workers: usize,
    /// Where per-run transcripts go, if anywhere.
    pub transcript_dir: Option<PathBuf>,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        HarnessConfig {
            loop_config: LoopConfig::default(),
            repetitions: 3,
            workers: 4,
            transcript_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub task_id: String,
    pub tier: Tier,
    pub repetition: u32,
    pub outcome: LoopOutcome,
    pub iterations_used: u32,
    pub completeness: f64,
    pub success: u8,
    pub faulted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskScore {
    pub id: String,
    pub tier: Tier,
    pub repetitions: u32,
    pub completeness: Vec<f64>,
    pub success: Vec<u8>,
    pub iterations_used: Vec<u32>,
    pub faulted_runs: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierAggregate {
    pub tasks: usize,
    pub runs: usize,
    pub success_rate: f64,
    pub completeness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub tasks: usize,
    pub runs: usize,
    pub success_rate: f64,
    pub completeness: f64,
    pub mean_iterations: f64,
    pub per_tier: BTreeMap<String, TierAggregate>,
}

/// Tasks with at least one unsuccessful run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureSummary {
    pub count: usize,
    pub task_ids: Vec<String>,
    /// Mean completeness over the unsuccessful runs.
    pub mean_completeness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub per_task: Vec<TaskScore>,
    pub aggregate: Aggregate,
    pub failed_tasks: FailureSummary,
    pub faulted_runs: usize,
}

/// Mean of the values summed in sorted order, so the result does not depend
/// on the order runs finished in.
fn mean(mut values: Vec<f64>) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len() as f64;
    values.into_iter().sum::<f64>() / n
}

fn tier_aggregate<'a>(rows: impl Iterator<Item = &'a RunRow> + Clone) -> TierAggregate {
    let tasks: std::collections::BTreeSet<&str> =
        rows.clone().map(|r| r.task_id.as_str()).collect();
    TierAggregate {
        tasks: tasks.len(),
        runs: rows.clone().count(),
        success_rate: mean(rows.clone().map(|r| f64::from(r.success)).collect()),
        completeness: mean(rows.map(|r| r.completeness).collect()),
    }
}

impl ScoreReport {
    pub fn from_rows(rows: &[RunRow]) -> Self {
        let mut by_task: BTreeMap<&str, Vec<&RunRow>> = BTreeMap::new();
        for row in rows {
            by_task.entry(&row.task_id).or_default().push(row);
        }
        let per_task: Vec<TaskScore> = by_task
            .iter()
            .map(|(id, runs)| {
                let mut runs = runs.clone();
                runs.sort_by_key(|r| r.repetition);
                TaskScore {
                    id: id.to_string(),
                    tier: runs[0].tier,
                    repetitions: runs.len() as u32,
                    completeness: runs.iter().map(|r| r.completeness).collect(),
                    success: runs.iter().map(|r| r.success).collect(),
                    iterations_used: runs.iter().map(|r| r.iterations_used).collect(),
                    faulted_runs: runs.iter().filter(|r| r.faulted).count() as u32,
                }
            })
            .collect();

        let mut per_tier = BTreeMap::new();
        for tier in [Tier::Basic, Tier::Advanced] {
            let it = rows.iter().filter(move |r| r.tier == tier);
            if it.clone().next().is_some() {
                per_tier.insert(tier.as_str().to_string(), tier_aggregate(it));
            }
        }
        let overall = tier_aggregate(rows.iter());

        let failed: Vec<&RunRow> = rows.iter().filter(|r| r.success == 0).collect();
        let failed_ids: std::collections::BTreeSet<String> =
            failed.iter().map(|r| r.task_id.clone()).collect();

        ScoreReport {
            per_task,
            aggregate: Aggregate {
                tasks: overall.tasks,
                runs: overall.runs,
                success_rate: overall.success_rate,
                completeness: overall.completeness,
                mean_iterations: mean(rows.iter().map(|r| f64::from(r.iterations_used)).collect()),
                per_tier,
            },
            failed_tasks: FailureSummary {
                count: failed_ids.len(),
                task_ids: failed_ids.into_iter().collect(),
                mean_completeness: mean(failed.iter().map(|r| r.completeness).collect()),
            },
            faulted_runs: rows.iter().filter(|r| r.faulted).count(),
        }
    }

    /// Human-readable aggregate table.
    pub fn table(&self) -> String {
        let line = |name: &str, a: &TierAggregate| {
            format!(
                "{name:<9} {:>5} {:>6} {:>7.1}% {:>13.1}%\n",
                a.tasks,
                a.runs,
                a.success_rate * 100.0,
                a.completeness * 100.0
            )
        };
        let mut out = format!(
            "{:<9} {:>5} {:>6} {:>8} {:>14}\n",
            "tier", "tasks", "runs", "SR", "completeness"
        );
        for (name, agg) in &self.aggregate.per_tier {
            out.push_str(&line(name, agg));
        }
        out.push_str(&line(
            "overall",
            &TierAggregate {
                tasks: self.aggregate.tasks,
                runs: self.aggregate.runs,
                success_rate: self.aggregate.success_rate,
                completeness: self.aggregate.completeness,
            },
        ));
        out.push_str(&format!(
            "failed tasks: {} (mean completeness over failed runs {:.1}%)\n",
            self.failed_tasks.count,
            self.failed_tasks.mean_completeness * 100.0
        ));
        if self.faulted_runs > 0 {
            out.push_str(&format!("faulted runs: {}\n", self.faulted_runs));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusRun {
    pub rows: Vec<RunRow>,
    pub report: ScoreReport,
}

fn run_one(
    task: &TaskSpec,
    repetition: u32,
    config: &HarnessConfig,
    provider: &dyn BackendProvider,
) -> Result<RunRow, HarnessError> {
    let lc = &config.loop_config;
    let agents = provider.agents_for(task, repetition, lc)?;
    let loop_task = LoopTask::from(task);
    let result = if lc.max_iterations == 0 {
        run_open_loop(&loop_task, lc, &agents)?
    } else {
        run_loop(&loop_task, lc, &agents)?
    };
    let faulted = result.outcome == LoopOutcome::Faulted;
    let (c, s) = match (&result.final_script, faulted) {
        (Some(script), false) => {
            let executed = flightlang::run(script, &lc.sim).transitions();
            (
                completeness(&executed, &task.ground_truth, &lc.matching),
                success(&executed, &task.ground_truth, &lc.matching),
            )
        }
        _ => (0.0, 0),
    };
    info!(
        "{} rep {repetition}: {:?} after {} rounds, completeness {c:.3}",
        task.id, result.outcome, result.iterations_used
    );
    let row = RunRow {
        task_id: task.id.clone(),
        tier: task.tier,
        repetition,
        outcome: result.outcome,
        iterations_used: result.iterations_used,
        completeness: c,
        success: s,
        faulted,
    };
    if let Some(dir) = &config.transcript_dir {
        if lc.record_transcripts {
            let transcript = Transcript {
                task: loop_task,
                config: lc.clone(),
                result,
            };
            transcript.write(&dir.join(format!("{}_r{repetition}.json", task.id)))?;
        }
    }
    Ok(row)
}

/// Runs every task `repetitions` times and scores the final scripts.
pub fn run_corpus(
    corpus: &[TaskSpec],
    config: &HarnessConfig,
    provider: &dyn BackendProvider,
) -> Result<CorpusRun, HarnessError> {
    if config.repetitions < 1 {
        return Err(HarnessError::Config(
            "repetitions must be at least 1".into(),
        ));
    }
    if config.workers < 1 {
        return Err(HarnessError::Config("workers must be at least 1".into()));
    }
    if config.loop_config.max_iterations > 0 {
        config.loop_config.validate()?;
    }
    super::validate_corpus(corpus)?;

    let jobs: Vec<(&TaskSpec, u32)> = corpus
        .iter()
        .flat_map(|t| (1..=config.repetitions).map(move |r| (t, r)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let rows = pool.install(|| {
        jobs.par_iter()
            .map(|(task, rep)| run_one(task, *rep, config, provider))
            .collect::<Result<Vec<_>, _>>()
    })?;
    let report = ScoreReport::from_rows(&rows);
    Ok(CorpusRun { rows, report })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub k: u32,
    pub runs: usize,
    pub success_rate: f64,
    pub completeness: f64,
    pub mean_iterations: f64,
}

/// One corpus run per iteration cap `k`; `k = 0` scores the initial script
/// unevaluated.
pub fn sweep_iterations(
    corpus: &[TaskSpec],
    config: &HarnessConfig,
    provider: &dyn BackendProvider,
    k_values: &[u32],
) -> Result<Vec<SweepPoint>, HarnessError> {
    if k_values.is_empty() {
        return Err(HarnessError::Config("no iteration values to sweep".into()));
    }
    if corpus.is_empty() {
        return Ok(Vec::new());
    }
    k_values
        .iter()
        .map(|&k| {
            let mut cfg = config.clone();
            cfg.loop_config.max_iterations = k;
            if let Some(dir) = &config.transcript_dir {
                cfg.transcript_dir = Some(dir.join(format!("k{k}")));
            }
            let run = run_corpus(corpus, &cfg, provider)?;
            Ok(SweepPoint {
                k,
                runs: run.report.aggregate.runs,
                success_rate: run.report.aggregate.success_rate,
                completeness: run.report.aggregate.completeness,
                mean_iterations: run.report.aggregate.mean_iterations,
            })
        })
        .collect()
}

fn write_csv<T: Serialize>(records: &[T], path: &Path) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut writer = csv::Writer::from_path(path)?;
    for record in records {
        writer.serialize(record)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn write_rows_csv(rows: &[RunRow], path: &Path) -> Result<(), HarnessError> {
    write_csv(rows, path)
}

pub fn write_sweep_csv(points: &[SweepPoint], path: &Path) -> Result<(), HarnessError> {
    write_csv(points, path)
}

pub fn write_summary(report: &ScoreReport, path: &Path) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    std::fs::write(path, json + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::Transition;

    fn task(id: &str, gt: Vec<Transition>) -> TaskSpec {
        TaskSpec {
            id: id.into(),
            tier: Tier::Basic,
            description: format!("task {id}"),
            ground_truth: gt,
            max_actions: 8,
            reference_script: None,
        }
    }

    fn two_tasks() -> Vec<TaskSpec> {
        vec![
            task(
                "T1",
                vec![
                    Transition::new(0.0, 0.0, -5.0, 0.0),
                    Transition::new(3.0, 0.0, 0.0, 0.0),
                ],
            ),
            task(
                "T2",
                vec![
                    Transition::new(0.0, 0.0, -4.0, 0.0),
                    Transition::new(0.0, 0.0, 0.0, 90.0),
                ],
            ),
        ]
    }

    fn oracle_harness(k: u32, reps: u32) -> HarnessConfig {
        HarnessConfig {
            loop_config: LoopConfig {
                max_iterations: k,
                evaluator_mode: EvaluatorMode::Oracle,
                ..LoopConfig::default()
            },
            repetitions: reps,
            workers: 2,
            transcript_dir: None,
        }
    }

    fn gt_provider() -> ScriptedProvider {
        ScriptedProvider::new(ScriptFile {
            ground_truth_fallback: true,
            ..ScriptFile::default()
        })
    }

    #[test]
    fn ground_truth_generator_scores_perfectly() {
        let run = run_corpus(&two_tasks(), &oracle_harness(6, 1), &gt_provider()).unwrap();
        assert_eq!(run.report.aggregate.success_rate, 1.0);
        assert_eq!(run.report.aggregate.completeness, 1.0);
        assert_eq!(run.report.failed_tasks.count, 0);
    }

    #[test]
    fn one_wrong_never_refined_halves_sr() {
        let mut script = ScriptFile {
            ground_truth_fallback: true,
            ..ScriptFile::default()
        };
        script.tasks.insert(
            "T1".into(),
            vec![ScriptEntry::new(AgentRole::Generator, "```\ntakeoff(5)\nbackward(3)\n```"); 2],
        );
        let run = run_corpus(
            &two_tasks(),
            &oracle_harness(1, 1),
            &ScriptedProvider::new(script),
        )
        .unwrap();
        assert_eq!(run.report.aggregate.success_rate, 0.5);
        assert_eq!(run.report.aggregate.completeness, 0.75);
        assert_eq!(run.report.failed_tasks.task_ids, vec!["T1".to_string()]);
        assert_eq!(run.report.failed_tasks.mean_completeness, 0.5);
    }

    #[test]
    fn repetitions_produce_rows() {
        let run = run_corpus(&two_tasks(), &oracle_harness(2, 3), &gt_provider()).unwrap();
        assert_eq!(run.rows.len(), 6);
        assert_eq!(run.rows.iter().filter(|r| r.task_id == "T1").count(), 3);
        assert_eq!(run.report.per_task[0].repetitions, 3);
    }

    #[test]
    fn faulted_runs_score_zero() {
        // an entry list with no generator responses exhausts immediately
        let script = ScriptFile {
            entries: vec![ScriptEntry::new(AgentRole::Evaluator, "VERDICT: YES")],
            ..ScriptFile::default()
        };
        let run = run_corpus(
            &two_tasks(),
            &oracle_harness(2, 1),
            &ScriptedProvider::new(script),
        )
        .unwrap();
        assert!(run
            .rows
            .iter()
            .all(|r| r.faulted && r.success == 0 && r.completeness == 0.0));
        assert_eq!(run.report.faulted_runs, 2);
    }

    #[test]
    fn sweep_k0_vs_k1() {
        let mut script = ScriptFile::default();
        for t in two_tasks() {
            let good = script_from_ground_truth(&t.ground_truth, &Default::default()).unwrap();
            script.tasks.insert(
                t.id.clone(),
                vec![
                    ScriptEntry::new(AgentRole::Generator, "```\ntakeoff(5)\nleft(1)\n```"),
                    ScriptEntry::new(
                        AgentRole::Generator,
                        format!("```\n{}\n```", good.to_source()),
                    ),
                ],
            );
        }
        let provider = ScriptedProvider::new(script);
        let points = sweep_iterations(
            &two_tasks(),
            &oracle_harness(0, 1),
            &provider,
            &[0, 1, 2, 3],
        )
        .unwrap();
        let sr: Vec<f64> = points.iter().map(|p| p.success_rate).collect();
        assert_eq!(sr, vec![0.0, 1.0, 1.0, 1.0]);
        assert_eq!(points[0].mean_iterations, 0.0);
        assert!(
            sweep_iterations(&[], &oracle_harness(0, 1), &provider, &[0])
                .unwrap()
                .is_empty()
        );
        assert!(sweep_iterations(&two_tasks(), &oracle_harness(0, 1), &provider, &[]).is_err());
    }

    #[test]
    fn aggregate_ignores_row_order() {
        let run = run_corpus(&two_tasks(), &oracle_harness(1, 2), &gt_provider()).unwrap();
        let mut rows = run.rows.clone();
        rows.reverse();
        assert_eq!(ScoreReport::from_rows(&rows), run.report);
    }

    #[test]
    fn missing_script_is_config_error() {
        let err = run_corpus(
            &two_tasks(),
            &oracle_harness(1, 1),
            &ScriptedProvider::new(ScriptFile::default()),
        );
        assert!(matches!(err, Err(HarnessError::Config(_))));
    }

    #[test]
    fn table_prints_percentages() {
        let run = run_corpus(&two_tasks(), &oracle_harness(1, 1), &gt_provider()).unwrap();
        let table = run.report.table();
        assert!(table.contains("100.0%"), "{table}");
        assert!(table.lines().any(|l| l.starts_with("overall")));
    }
}
