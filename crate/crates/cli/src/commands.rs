use std::path::Path;
use std::sync::Arc;

use skyloop::agents::EvaluatorPrompt;
use skyloop::evalharness::{
    self, build_precision_dataset, evaluator_precision, run_corpus, sweep_iterations,
    write_rows_csv, write_summary, write_sweep_csv, BackendProvider, HarnessConfig, LlmJudge,
    OracleJudge, PrecisionJudge, ScriptedProvider, SharedProvider, TaskSpec, Tier,
};
use skyloop::flightlang;
use skyloop::llmclient::{build_backend, BackendKind, ChatBackend, ScriptFile, ScriptedBackend};
use skyloop::looprunner::{
    run_loop, run_open_loop, EvaluatorMode, LoopAgents, LoopOutcome, LoopResult, LoopTask,
    Transcript,
};

use crate::config::CliConfig;
use crate::{Cli, Command, SectionsArg, TierArg};

type CmdResult = Result<u8, String>;

pub fn dispatch(cli: &Cli) -> CmdResult {
    if let Command::ValidateCorpus { path } = &cli.command {
        return validate_corpus(path);
    }
    let cfg = CliConfig::load(&cli.global)?;
    match &cli.command {
        Command::Run { task, task_id } => run(&cfg, task.as_deref(), task_id.as_deref()),
        Command::Bench { tier } => bench(&cfg, *tier),
        Command::Sweep { k, tier } => sweep(&cfg, k, *tier),
        Command::Precision { tier, sections } => precision(&cfg, *tier, *sections),
        Command::ValidateCorpus { .. } => unreachable!("handled above"),
    }
}

fn tier_matches(tier: TierArg, t: Tier) -> bool {
    match tier {
        TierArg::All => true,
        TierArg::Basic => t == Tier::Basic,
        TierArg::Advanced => t == Tier::Advanced,
    }
}

fn load_tasks(cfg: &CliConfig, tier: TierArg) -> Result<Vec<TaskSpec>, String> {
    let all = match &cfg.corpus {
        Some(path) => evalharness::load_corpus(path).map_err(|e| e.to_string())?,
        None => evalharness::builtin_basic()
            .into_iter()
            .chain(evalharness::builtin_advanced())
            .collect(),
    };
    Ok(all
        .into_iter()
        .filter(|t| tier_matches(tier, t.tier))
        .collect())
}

fn prepare_out(cfg: &CliConfig) -> Result<(), String> {
    std::fs::create_dir_all(&cfg.out)
        .map_err(|e| format!("cannot create {}: {e}", cfg.out.display()))
}

fn script_file(cfg: &CliConfig) -> Result<ScriptFile, String> {
    let path = cfg
        .backend
        .script_path
        .as_deref()
        .ok_or("the scripted backend needs --script <path>")?;
    ScriptFile::load(path).map_err(|e| e.to_string())
}

fn shared_backend(cfg: &CliConfig) -> Result<Arc<dyn ChatBackend>, String> {
    build_backend(&cfg.backend).map_err(|e| e.to_string())
}

fn provider(cfg: &CliConfig) -> Result<Box<dyn BackendProvider>, String> {
    cfg.require_backend()?;
    match cfg.backend.kind {
        BackendKind::Scripted => {
            let mut p = ScriptedProvider::new(script_file(cfg)?);
            p.settings = cfg.generator.clone();
            Ok(Box::new(p))
        }
        BackendKind::Http => {
            let backend = shared_backend(cfg)?;
            let mut agents = LoopAgents::new(backend.clone(), Some(backend));
            agents.generator_settings = cfg.generator.clone();
            agents.evaluator_settings = cfg.evaluator.clone();
            Ok(Box::new(SharedProvider { agents }))
        }
    }
}

fn print_result(task: &LoopTask, result: &LoopResult) {
    println!("task: {}", task.description);
    for rec in &result.per_iteration {
        println!("\n=== iteration {} ===", rec.iteration);
        match (&rec.script_text, &rec.generation_error) {
            (Some(script), _) => println!("script:\n{script}"),
            (None, Some(err)) => println!("generation failed: {err}"),
            (None, None) => {}
        }
        if !rec.observation_text.is_empty() {
            println!("observation:\n{}", rec.observation_text);
        }
        println!(
            "verdict: {}",
            if rec.verdict.is_yes() { "YES" } else { "NO" }
        );
        if !rec.verdict.explanation.is_empty() {
            println!("{}", rec.verdict.explanation);
        }
    }
    println!();
    match result.outcome {
        LoopOutcome::Accepted => println!("accepted after {} iteration(s)", result.iterations_used),
        LoopOutcome::MaxIterationsExceeded => println!(
            "not accepted after {} iteration(s); human review needed",
            result.iterations_used
        ),
        LoopOutcome::Unevaluated => println!("initial script kept without evaluation"),
        LoopOutcome::Faulted => {}
    }
    if let Some(script) = &result.final_script {
        println!("final script:\n{}", script.to_source());
    }
}

fn run(cfg: &CliConfig, task_text: Option<&str>, task_id: Option<&str>) -> CmdResult {
    let spec = match task_id {
        Some(id) => Some(
            load_tasks(cfg, TierArg::All)?
                .into_iter()
                .find(|t| t.id == id)
                .ok_or_else(|| format!("no task with id {id}"))?,
        ),
        None => None,
    };
    let task = match (&spec, task_text) {
        (Some(s), _) => LoopTask::from(s),
        (None, Some(text)) => LoopTask::new(text),
        (None, None) => return Err("give --task or --task-id".into()),
    };
    cfg.require_backend()?;
    prepare_out(cfg)?;

    let lc = &cfg.loop_config;
    let mut agents = match (cfg.backend.kind, &spec) {
        (BackendKind::Scripted, Some(spec)) => ScriptedProvider::new(script_file(cfg)?)
            .agents_for(spec, 1, lc)
            .map_err(|e| e.to_string())?,
        (BackendKind::Scripted, None) => {
            let file = script_file(cfg)?;
            let entries = file
                .entries_for(None)
                .ok_or("the script file has no top-level entries")?;
            let backend: Arc<dyn ChatBackend> = Arc::new(ScriptedBackend::new(entries.to_vec()));
            LoopAgents::new(backend.clone(), Some(backend))
        }
        (BackendKind::Http, _) => {
            let backend = shared_backend(cfg)?;
            LoopAgents::new(backend.clone(), Some(backend))
        }
    };
    agents.generator_settings = cfg.generator.clone();
    agents.evaluator_settings = cfg.evaluator.clone();

    let result = if lc.max_iterations == 0 {
        run_open_loop(&task, lc, &agents)
    } else {
        run_loop(&task, lc, &agents)
    }
    .map_err(|e| e.to_string())?;

    print_result(&task, &result);
    let path = cfg.out.join("transcript.json");
    let outcome = result.outcome;
    let fault = result.fault.clone();
    Transcript {
        task,
        config: lc.clone(),
        result,
    }
    .write(&path)
    .map_err(|e| format!("cannot write {}: {e}", path.display()))?;
    println!("transcript: {}", path.display());

    match outcome {
        LoopOutcome::Accepted | LoopOutcome::Unevaluated => Ok(0),
        LoopOutcome::MaxIterationsExceeded => Ok(2),
        LoopOutcome::Faulted => Err(fault.unwrap_or_else(|| "backend fault".into())),
    }
}

fn harness_config(cfg: &CliConfig) -> HarnessConfig {
    HarnessConfig {
        loop_config: cfg.loop_config.clone(),
        repetitions: cfg.repetitions,
        workers: cfg.workers,
        transcript_dir: Some(cfg.out.join("transcripts")),
    }
}

fn bench(cfg: &CliConfig, tier: TierArg) -> CmdResult {
    let tasks = load_tasks(cfg, tier)?;
    let provider = provider(cfg)?;
    prepare_out(cfg)?;
    let run =
        run_corpus(&tasks, &harness_config(cfg), provider.as_ref()).map_err(|e| e.to_string())?;
    write_rows_csv(&run.rows, &cfg.out.join("runs.csv")).map_err(|e| e.to_string())?;
    write_summary(&run.report, &cfg.out.join("summary.json")).map_err(|e| e.to_string())?;
    print!("{}", run.report.table());
    Ok(0)
}

fn sweep(cfg: &CliConfig, k: &[u32], tier: TierArg) -> CmdResult {
    let tasks = load_tasks(cfg, tier)?;
    let provider = provider(cfg)?;
    prepare_out(cfg)?;
    let points = sweep_iterations(&tasks, &harness_config(cfg), provider.as_ref(), k)
        .map_err(|e| e.to_string())?;
    write_sweep_csv(&points, &cfg.out.join("sweep.csv")).map_err(|e| e.to_string())?;
    println!(
        "{:>3} {:>6} {:>8} {:>14}",
        "k", "runs", "SR", "completeness"
    );
    for p in &points {
        println!(
            "{:>3} {:>6} {:>7.1}% {:>13.1}%",
            p.k,
            p.runs,
            p.success_rate * 100.0,
            p.completeness * 100.0
        );
    }
    Ok(0)
}

fn precision(cfg: &CliConfig, tier: TierArg, sections: SectionsArg) -> CmdResult {
    let tasks = load_tasks(cfg, tier)?;
    let lc = &cfg.loop_config;
    let mut workers = cfg.workers;
    let judge: Box<dyn PrecisionJudge> = match lc.evaluator_mode {
        EvaluatorMode::Oracle => Box::new(OracleJudge {
            matching: lc.matching,
        }),
        mode => {
            cfg.require_backend()?;
            let backend: Arc<dyn ChatBackend> = match cfg.backend.kind {
                BackendKind::Scripted => {
                    // one shared queue: keep the consumption order fixed
                    workers = 1;
                    let file = script_file(cfg)?;
                    let entries = file
                        .entries_for(None)
                        .ok_or("the script file has no top-level entries")?;
                    Arc::new(ScriptedBackend::new(entries.to_vec()))
                }
                BackendKind::Http => shared_backend(cfg)?,
            };
            let settings = if mode == EvaluatorMode::SelfRefine {
                cfg.generator.clone()
            } else {
                cfg.evaluator.clone()
            };
            Box::new(LlmJudge::new(
                backend,
                &EvaluatorPrompt::default(),
                sections.into(),
                settings,
                lc.verdict_rule,
            ))
        }
    };
    prepare_out(cfg)?;
    let dataset = build_precision_dataset(&tasks, cfg.seed, &lc.sim, &lc.format, &lc.matching)
        .map_err(|e| e.to_string())?;
    let report = evaluator_precision(&dataset, judge.as_ref(), cfg.repetitions, workers)
        .map_err(|e| e.to_string())?;
    write_json(&cfg.out.join("precision_dataset.json"), &dataset)?;
    write_json(&cfg.out.join("precision.json"), &report)?;
    print!("{}", report.table());
    Ok(0)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), String> {
    let text = serde_json::to_string_pretty(value).map_err(|e| e.to_string())? + "\n";
    std::fs::write(path, text).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

fn validate_corpus(path: &Path) -> CmdResult {
    let tasks = evalharness::load_corpus(path).map_err(|e| e.to_string())?;
    let sim = Default::default();
    let mut problems = Vec::new();
    for task in &tasks {
        if evalharness::script_from_ground_truth(&task.ground_truth, &sim).is_none() {
            problems.push(format!(
                "{}: ground truth is not reachable by single commands",
                task.id
            ));
        }
        let Some(src) = &task.reference_script else {
            continue;
        };
        match flightlang::parse(src) {
            Err(e) => problems.push(format!("{}: reference script: {e}", task.id)),
            Ok(script) => {
                let got = flightlang::run(&script, &sim).transitions();
                let same = got.len() == task.ground_truth.len()
                    && got.iter().zip(&task.ground_truth).all(|(a, b)| {
                        a.to_array()
                            .iter()
                            .zip(b.to_array())
                            .all(|(x, y)| (x - y).abs() < 1e-6)
                    });
                if !same {
                    problems.push(format!(
                        "{}: reference script does not reproduce the ground truth",
                        task.id
                    ));
                }
            }
        }
    }
    let basic = tasks.iter().filter(|t| t.tier == Tier::Basic).count();
    if problems.is_empty() {
        println!(
            "{}: {} tasks ({basic} basic, {} advanced) OK",
            path.display(),
            tasks.len(),
            tasks.len() - basic
        );
        Ok(0)
    } else {
        Err(problems.join("\n"))
    }
}
