//! Configuration file plus flag overrides.
//!
//! The file is TOML; every key is optional:
//!
//! ```toml
//! corpus = "tasks.json"
//! out = "results"
//! workers = 4
//! seed = 0
//! repetitions = 3
//!
//! [backend]
//! kind = "http"
//! endpoint_url = "https://api.openai.com/v1"
//! api_key_env_var = "OPENAI_API_KEY"
//!
//! [generator]
//! model = "o3-mini"
//!
//! [evaluator]
//! model = "o3-mini"
//!
//! [loop]
//! max_iterations = 6
//! evaluator_mode = "external"
//! observation_mode = "semantic"
//! ```
//!
//! Relative paths in the file are resolved against the file's directory.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use skyloop::llmclient::{BackendConfig, BackendKind, ModelSettings};
use skyloop::looprunner::LoopConfig;

use crate::GlobalArgs;

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    backend: BackendConfig,
    generator: ModelSettings,
    evaluator: ModelSettings,
    #[serde(rename = "loop")]
    loop_config: LoopConfig,
    corpus: Option<PathBuf>,
    out: Option<PathBuf>,
    workers: Option<usize>,
    seed: Option<u64>,
    repetitions: Option<u32>,
}

#[derive(Debug, Clone)]
pub struct CliConfig {
    pub backend: BackendConfig,
    pub generator: ModelSettings,
    pub evaluator: ModelSettings,
    pub loop_config: LoopConfig,
    pub corpus: Option<PathBuf>,
    pub out: PathBuf,
    pub workers: usize,
    pub seed: u64,
    pub repetitions: u32,
}

fn resolve(base: &Path, p: PathBuf) -> PathBuf {
    if p.is_relative() {
        base.join(p)
    } else {
        p
    }
}

impl CliConfig {
    pub fn load(args: &GlobalArgs) -> Result<Self, String> {
        let mut file = FileConfig::default();
        if let Some(path) = &args.config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
            file = toml::from_str(&text)
                .map_err(|e| format!("invalid config {}: {e}", path.display()))?;
            let base = path.parent().unwrap_or(Path::new("."));
            file.corpus = file.corpus.map(|p| resolve(base, p));
            file.out = file.out.map(|p| resolve(base, p));
            file.backend.script_path = file.backend.script_path.map(|p| resolve(base, p));
        }

        let mut cfg = CliConfig {
            backend: file.backend,
            generator: file.generator,
            evaluator: file.evaluator,
            loop_config: file.loop_config,
            corpus: file.corpus,
            out: file.out.unwrap_or_else(|| PathBuf::from("skyloop-out")),
            workers: file.workers.unwrap_or(4),
            seed: file.seed.unwrap_or(0),
            repetitions: file.repetitions.unwrap_or(3),
        };

        if let Some(kind) = args.backend {
            cfg.backend.kind = kind.into();
        }
        if let Some(p) = &args.script {
            cfg.backend.script_path = Some(p.clone());
        }
        if let Some(url) = &args.endpoint {
            cfg.backend.endpoint_url = Some(url.clone());
        }
        if let Some(var) = &args.api_key_env {
            cfg.backend.api_key_env_var = Some(var.clone());
        }
        if let Some(model) = &args.model {
            cfg.generator.model = model.clone();
            cfg.evaluator.model = model.clone();
        }
        if let Some(mode) = args.evaluator {
            cfg.loop_config.evaluator_mode = mode.into();
        }
        if let Some(mode) = args.observation {
            cfg.loop_config.observation_mode = mode.into();
        }
        if let Some(k) = args.max_iterations {
            cfg.loop_config.max_iterations = k;
        }
        if let Some(n) = args.repetitions {
            cfg.repetitions = n;
        }
        if let Some(s) = args.seed {
            cfg.seed = s;
        }
        if let Some(o) = &args.out {
            cfg.out = o.clone();
        }
        if let Some(w) = args.workers {
            cfg.workers = w;
        }
        if let Some(c) = &args.corpus {
            cfg.corpus = Some(c.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Everything that can be checked without touching the network.
    fn validate(&self) -> Result<(), String> {
        if self.workers < 1 {
            return Err("--workers must be at least 1".into());
        }
        if self.repetitions < 1 {
            return Err("--repetitions must be at least 1".into());
        }
        self.loop_config.sim.validate()?;
        if let Some(c) = &self.corpus {
            if !c.is_file() {
                return Err(format!("corpus file not found: {}", c.display()));
            }
        }
        if let Some(p) = &self.backend.script_path {
            if !p.is_file() {
                return Err(format!("script file not found: {}", p.display()));
            }
        }
        Ok(())
    }

    /// Checks that a backend can be built; called only by commands that talk
    /// to a model.
    pub fn require_backend(&self) -> Result<(), String> {
        match self.backend.kind {
            BackendKind::Scripted if self.backend.script_path.is_none() => {
                Err("the scripted backend needs --script <path>".into())
            }
            BackendKind::Http if self.backend.endpoint_url.is_none() => Err(
                "the http backend needs an endpoint url (--endpoint or [backend] endpoint_url)"
                    .into(),
            ),
            _ => Ok(()),
        }
    }
}
