//! Task corpora and ground-truth utilities.
//!
//! A corpus file is a JSON array of task records:
//!
//! ```json
//! [{"id": "B01", "tier": "basic", "description": "Take off to 5 meters.",
//!   "ground_truth": [[0, 0, -5, 0]], "max_actions": 4,
//!   "reference_script": "takeoff(5)"}]
//! ```

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::flightlang::{self, Command, FlightScript, Verb};
use crate::sim::{apply, body_to_ned, compose, BodyDirection, SimConfig, Transition, UavState};

const BASIC_CORPUS: &str = include_str!("../../data/corpus/basic.json");
const ADVANCED_CORPUS: &str = include_str!("../../data/corpus/advanced.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Basic,
    Advanced,
}

impl Tier {
    pub fn as_str(self) -> &'static str {
        match self {
            Tier::Basic => "basic",
            Tier::Advanced => "advanced",
        }
    }

    /// Allowed ground-truth lengths.
    pub fn length_bounds(self) -> (usize, usize) {
        match self {
            Tier::Basic => (1, 4),
            Tier::Advanced => (6, 19),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: String,
    pub tier: Tier,
    pub description: String,
    pub ground_truth: Vec<Transition>,
    pub max_actions: usize,
    /// A script realizing the ground truth, kept for auditing the corpus.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_script: Option<String>,
}

impl TaskSpec {
    /// Goal displacement: the cumulative ground-truth transition.
    pub fn goal(&self) -> Transition {
        compose(&self.ground_truth)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.id.trim().is_empty() {
            return Err("empty task id".into());
        }
        if self.description.trim().is_empty() {
            return Err(format!("{}: empty description", self.id));
        }
        let (lo, hi) = self.tier.length_bounds();
        let n = self.ground_truth.len();
        if n < lo || n > hi {
            return Err(format!(
                "{}: {} tier needs {lo}..={hi} ground-truth actions, has {n}",
                self.id,
                self.tier.as_str()
            ));
        }
        if self.max_actions < n {
            return Err(format!(
                "{}: max_actions below ground-truth length",
                self.id
            ));
        }
        if self
            .ground_truth
            .iter()
            .any(|t| !t.to_array().iter().all(|v| v.is_finite()))
        {
            return Err(format!("{}: non-finite ground truth", self.id));
        }
        Ok(())
    }
}

pub fn parse_corpus(text: &str) -> Result<Vec<TaskSpec>, HarnessError> {
    let tasks: Vec<TaskSpec> =
        serde_json::from_str(text).map_err(|e| HarnessError::Corpus(e.to_string()))?;
    validate_corpus(&tasks)?;
    Ok(tasks)
}

pub fn load_corpus(path: &Path) -> Result<Vec<TaskSpec>, HarnessError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| HarnessError::Corpus(format!("reading {}: {e}", path.display())))?;
    parse_corpus(&text)
}

pub fn validate_corpus(tasks: &[TaskSpec]) -> Result<(), HarnessError> {
    let mut ids = BTreeSet::new();
    for task in tasks {
        task.validate().map_err(HarnessError::Corpus)?;
        if !ids.insert(task.id.as_str()) {
            return Err(HarnessError::Corpus(format!(
                "duplicate task id {}",
                task.id
            )));
        }
    }
    Ok(())
}

/// The bundled 44-task basic corpus.
pub fn builtin_basic() -> Vec<TaskSpec> {
    parse_corpus(BASIC_CORPUS).expect("bundled basic corpus is valid")
}

/// The bundled 20-task advanced corpus.
pub fn builtin_advanced() -> Vec<TaskSpec> {
    parse_corpus(ADVANCED_CORPUS).expect("bundled advanced corpus is valid")
}

const REALIZE_EPS: f64 = 1e-9;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= REALIZE_EPS
}

fn command_for(state: &UavState, t: &Transition) -> Option<Command> {
    let cmd = |verb, arg| Some(Command::new(verb, arg, 0));
    if t.has_translation() && t.d_yaw != 0.0 {
        return None;
    }
    if t.d_yaw != 0.0 {
        return if t.d_yaw > 0.0 {
            cmd(Verb::TurnCw, Some(t.d_yaw))
        } else {
            cmd(Verb::TurnCcw, Some(-t.d_yaw))
        };
    }
    let horizontal = t.d_north != 0.0 || t.d_east != 0.0;
    if horizontal && t.d_down != 0.0 {
        return None;
    }
    if !horizontal {
        if t.d_down < 0.0 && !state.airborne {
            return cmd(Verb::Takeoff, Some(-t.d_down));
        }
        if t.d_down > 0.0 && close(state.down + t.d_down, 0.0) {
            return cmd(Verb::Land, None);
        }
        if t.d_down < 0.0 {
            return cmd(Verb::Up, Some(-t.d_down));
        }
        if t.d_down > 0.0 {
            return cmd(Verb::Down, Some(t.d_down));
        }
        return None;
    }
    let distance = t.d_north.hypot(t.d_east);
    [
        BodyDirection::Forward,
        BodyDirection::Right,
        BodyDirection::Backward,
        BodyDirection::Left,
    ]
    .into_iter()
    .find(|dir| {
        let (n, e, _) = body_to_ned(state.yaw, *dir, distance);
        close(n, t.d_north) && close(e, t.d_east)
    })
    .and_then(|dir| cmd(dir.verb(), Some(distance)))
}

/// Reconstructs a script whose execution reproduces the given transitions
/// (within 1e-9), or `None` when some transition is not a single action from
/// the state reached so far.
pub fn script_from_ground_truth(
    ground_truth: &[Transition],
    config: &SimConfig,
) -> Option<FlightScript> {
    let mut state = UavState::initial();
    let mut commands = Vec::with_capacity(ground_truth.len());
    for (i, t) in ground_truth.iter().enumerate() {
        let mut command = command_for(&state, t)?;
        command.source_line = i + 1;
        let (next, got) = apply(&state, &command, config).ok()?;
        let same = got
            .to_array()
            .iter()
            .zip(t.to_array())
            .all(|(a, b)| close(*a, b));
        if !same {
            return None;
        }
        state = next;
        commands.push(command);
    }
    if commands.is_empty() {
        return None;
    }
    let source = commands
        .iter()
        .map(Command::to_string)
        .collect::<Vec<_>>()
        .join("\n");
    flightlang::parse(&source).ok()
}
