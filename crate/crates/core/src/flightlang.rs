//! The flight-command language emitted by the generator model.
//!
//! One command per line, `verb` or `verb(number)`. Blank lines and `#`
//! comments are ignored and verbs are case-insensitive:
//!
//! ```text
//! # square, 5 m sides
//! takeoff(5)
//! forward(5)
//! turn_cw(90)
//! land
//! ```
//!
//! Scripts are flat on purpose: no loops, variables or expressions.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::{ActionError, BodyDirection, SimConfig, Simulator, Transition, UavState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verb {
    Takeoff,
    Land,
    Forward,
    Backward,
    Left,
    Right,
    Up,
    Down,
    TurnCw,
    TurnCcw,
}

impl Verb {
    pub const ALL: [Verb; 10] = [
        Verb::Takeoff,
        Verb::Land,
        Verb::Forward,
        Verb::Backward,
        Verb::Left,
        Verb::Right,
        Verb::Up,
        Verb::Down,
        Verb::TurnCw,
        Verb::TurnCcw,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Verb::Takeoff => "takeoff",
            Verb::Land => "land",
            Verb::Forward => "forward",
            Verb::Backward => "backward",
            Verb::Left => "left",
            Verb::Right => "right",
            Verb::Up => "up",
            Verb::Down => "down",
            Verb::TurnCw => "turn_cw",
            Verb::TurnCcw => "turn_ccw",
        }
    }

    pub fn takes_argument(self) -> bool {
        self != Verb::Land
    }

    pub fn body_direction(self) -> Option<BodyDirection> {
        match self {
            Verb::Forward => Some(BodyDirection::Forward),
            Verb::Backward => Some(BodyDirection::Backward),
            Verb::Left => Some(BodyDirection::Left),
            Verb::Right => Some(BodyDirection::Right),
            Verb::Up => Some(BodyDirection::Up),
            Verb::Down => Some(BodyDirection::Down),
            _ => None,
        }
    }
}

impl fmt::Display for Verb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Verb {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.to_ascii_lowercase();
        Verb::ALL
            .iter()
            .copied()
            .find(|v| v.as_str() == lower)
            .ok_or(())
    }
}

/// One parsed action.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Command {
    pub verb: Verb,
    pub argument: Option<f64>,
    pub source_line: usize,
}

impl Command {
    pub fn new(verb: Verb, argument: Option<f64>, source_line: usize) -> Self {
        Command {
            verb,
            argument,
            source_line,
        }
    }

    /// `verb(arg)` with the argument at a fixed number of decimals.
    pub fn display_fixed(&self, decimals: usize) -> String {
        match self.argument {
            Some(v) => format!("{}({:.*})", self.verb, decimals, v),
            None => self.verb.to_string(),
        }
    }

    /// Verb and argument equality, ignoring the source position.
    pub fn same_action(&self, other: &Command) -> bool {
        self.verb == other.verb && self.argument == other.argument
    }
}

impl fmt::Display for Command {
    /// Canonical source form; `f64` display is shortest round-trip so this
    /// re-parses to the identical value.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.argument {
            Some(v) => write!(f, "{}({})", self.verb, v),
            None => write!(f, "{}", self.verb),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlightScript {
    pub commands: Vec<Command>,
    pub source_text: String,
}

impl FlightScript {
    pub fn len(&self) -> usize {
        self.commands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.commands.is_empty()
    }

    /// Canonical one-command-per-line rendering.
    pub fn to_source(&self) -> String {
        self.commands
            .iter()
            .map(Command::to_string)
            .collect::<Vec<_>>()
            .join("\n")
    }
}

impl fmt::Display for FlightScript {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_source())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParseErrorKind {
    UnknownVerb,
    BadArity,
    BadNumber,
    NonPositive,
    EmptyScript,
    TrailingGarbage,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("line {line}, column {column}: {kind:?}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub kind: ParseErrorKind,
    pub message: String,
}

impl ParseError {
    fn new(line: usize, column: usize, kind: ParseErrorKind, message: impl Into<String>) -> Self {
        ParseError {
            line,
            column,
            kind,
            message: message.into(),
        }
    }
}

fn skip_ws(chars: &[char], mut i: usize) -> usize {
    while i < chars.len() && chars[i].is_whitespace() {
        i += 1;
    }
    i
}

/// Validates `-?digits(.digits)?`; returns the signed value.
fn scan_number(token: &str) -> Option<f64> {
    let body = token.strip_prefix('-').unwrap_or(token);
    let (int, frac) = match body.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (body, None),
    };
    let digits = |s: &str| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit());
    if !digits(int) || frac.is_some_and(|f| !digits(f)) {
        return None;
    }
    token.parse::<f64>().ok()
}

/// Parses one source line. `Ok(None)` for blank and comment-only lines.
fn parse_line(line: &str, line_no: usize) -> Result<Option<Command>, ParseError> {
    use ParseErrorKind::*;

    let code = line.split('#').next().unwrap_or("");
    let chars: Vec<char> = code.chars().collect();
    let col = |i: usize| i + 1;

    let mut i = skip_ws(&chars, 0);
    if i == chars.len() {
        return Ok(None);
    }

    let verb_start = i;
    if !chars[i].is_ascii_alphabetic() {
        return Err(ParseError::new(
            line_no,
            col(i),
            UnknownVerb,
            format!("expected a command verb, found '{}'", chars[i]),
        ));
    }
    while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
        i += 1;
    }
    let word: String = chars[verb_start..i].iter().collect();
    let verb: Verb = word.parse().map_err(|_| {
        ParseError::new(
            line_no,
            col(verb_start),
            UnknownVerb,
            format!("unknown command '{word}'"),
        )
    })?;

    i = skip_ws(&chars, i);
    let mut argument = None;
    if i < chars.len() {
        if chars[i] != '(' {
            return Err(ParseError::new(
                line_no,
                col(i),
                TrailingGarbage,
                format!("unexpected '{}' after '{word}'", chars[i]),
            ));
        }
        i = skip_ws(&chars, i + 1);
        if i < chars.len() && chars[i] != ')' {
            let arg_start = i;
            while i < chars.len() && !chars[i].is_whitespace() && chars[i] != ')' {
                i += 1;
            }
            let token: String = chars[arg_start..i].iter().collect();
            if !verb.takes_argument() {
                return Err(ParseError::new(
                    line_no,
                    col(arg_start),
                    BadArity,
                    format!("'{verb}' takes no argument"),
                ));
            }
            let value = match scan_number(&token) {
                Some(v) if v.is_finite() => v,
                _ => {
                    return Err(ParseError::new(
                        line_no,
                        col(arg_start),
                        BadNumber,
                        format!("'{token}' is not a decimal number"),
                    ))
                }
            };
            if value <= 0.0 || token.starts_with('-') {
                return Err(ParseError::new(
                    line_no,
                    col(arg_start),
                    NonPositive,
                    format!("'{verb}' requires a positive argument, got {token}"),
                ));
            }
            argument = Some(value);
            i = skip_ws(&chars, i);
        }
        if i >= chars.len() {
            return Err(ParseError::new(
                line_no,
                col(i),
                TrailingGarbage,
                "missing ')'",
            ));
        }
        if chars[i] != ')' {
            return Err(ParseError::new(
                line_no,
                col(i),
                TrailingGarbage,
                format!("expected ')', found '{}'", chars[i]),
            ));
        }
        i = skip_ws(&chars, i + 1);
        if i < chars.len() {
            return Err(ParseError::new(
                line_no,
                col(i),
                TrailingGarbage,
                format!("unexpected '{}' after command", chars[i]),
            ));
        }
    }

    if verb.takes_argument() && argument.is_none() {
        return Err(ParseError::new(
            line_no,
            col(verb_start),
            BadArity,
            format!("'{verb}' requires one numeric argument"),
        ));
    }
    Ok(Some(Command::new(verb, argument, line_no)))
}

/// Parses a whole script, stopping at the first error.
pub fn parse(source: &str) -> Result<FlightScript, ParseError> {
    let mut commands = Vec::new();
    for (idx, line) in source.lines().enumerate() {
        if let Some(cmd) = parse_line(line, idx + 1)? {
            commands.push(cmd);
        }
    }
    if commands.is_empty() {
        return Err(ParseError::new(
            1,
            1,
            ParseErrorKind::EmptyScript,
            "script contains no commands",
        ));
    }
    Ok(FlightScript {
        commands,
        source_text: source.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("no flight script found in the response")]
pub struct ExtractionError;

fn call_shaped(line: &str) -> bool {
    let t = line.trim_start();
    let name_len = t
        .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
        .unwrap_or(t.len());
    name_len > 0
        && t.starts_with(|c: char| c.is_ascii_alphabetic() || c == '_')
        && t[name_len..].trim_start().starts_with('(')
}

/// Pulls the script out of a free-form model response.
///
/// Takes the first fenced block when there is one; otherwise keeps every line
/// that lexes as a command, comment or blank, plus lines shaped like a call
/// (`name(...`) so that malformed commands still reach the parser.
pub fn extract_script(response: &str) -> Result<String, ExtractionError> {
    let lines: Vec<&str> = response.lines().collect();
    if let Some(open) = lines.iter().position(|l| l.trim_start().starts_with("```")) {
        let body: Vec<&str> = lines[open + 1..]
            .iter()
            .take_while(|l| !l.trim_start().starts_with("```"))
            .copied()
            .collect();
        let text = body.join("\n");
        if text.trim().is_empty() {
            return Err(ExtractionError);
        }
        return Ok(text);
    }

    let mut kept: Vec<&str> = Vec::new();
    let mut has_command = false;
    for (idx, line) in lines.iter().enumerate() {
        match parse_line(line, idx + 1) {
            Ok(Some(_)) => {
                has_command = true;
                kept.push(line);
            }
            Ok(None) => kept.push(line),
            Err(_) if call_shaped(line) => {
                has_command = true;
                kept.push(line);
            }
            Err(_) => {}
        }
    }
    if !has_command {
        return Err(ExtractionError);
    }
    while kept.first().is_some_and(|l| l.trim().is_empty()) {
        kept.remove(0);
    }
    while kept.last().is_some_and(|l| l.trim().is_empty()) {
        kept.pop();
    }
    Ok(kept.join("\n"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepOutcome {
    Moved(Transition),
    Failed(ActionError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub command: Command,
    pub state_before: UavState,
    pub state_after: UavState,
    pub outcome: StepOutcome,
}

impl TraceStep {
    pub fn transition(&self) -> Option<&Transition> {
        match &self.outcome {
            StepOutcome::Moved(t) => Some(t),
            StepOutcome::Failed(_) => None,
        }
    }

    pub fn error(&self) -> Option<&ActionError> {
        match &self.outcome {
            StepOutcome::Moved(_) => None,
            StepOutcome::Failed(e) => Some(e),
        }
    }
}

/// Per-command record of a simulated script execution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub initial: UavState,
    pub steps: Vec<TraceStep>,
}

impl ExecutionTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn final_state(&self) -> UavState {
        self.steps.last().map_or(self.initial, |s| s.state_after)
    }

    /// Transitions of the steps that executed; failed actions are no-ops.
    pub fn transitions(&self) -> Vec<Transition> {
        self.steps
            .iter()
            .filter_map(|s| s.transition().copied())
            .collect()
    }

    pub fn error_count(&self) -> usize {
        self.steps.iter().filter(|s| s.error().is_some()).count()
    }
}

/// Executes a script on a fresh simulator. Failed actions leave the state
/// unchanged and execution continues.
pub fn run(script: &FlightScript, config: &SimConfig) -> ExecutionTrace {
    let mut sim = Simulator::new(*config);
    let initial = *sim.state();
    let steps = script
        .commands
        .iter()
        .map(|command| {
            let state_before = *sim.state();
            let outcome = match sim.step(command) {
                Ok(t) => StepOutcome::Moved(t),
                Err(e) => StepOutcome::Failed(e),
            };
            TraceStep {
                command: *command,
                state_before,
                state_after: *sim.state(),
                outcome,
            }
        })
        .collect();
    ExecutionTrace { initial, steps }
}
