//! The two LLM roles: the code generator and the trajectory evaluator.
//!
//! System prompts are assembled from plain-text templates with named
//! sections (see [`parse_sections`]). The defaults ship under
//! `data/prompts/` and can be swapped for user files.

use std::sync::{Arc, OnceLock};

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evalharness::{matches, success, MatchConfig};
use crate::flightlang::{self, ExecutionTrace, ExtractionError, FlightScript, ParseError};
use crate::llmclient::{
    complete, AgentRole, ChatBackend, ChatRequest, LlmError, ModelSettings, Turn,
};
use crate::semantics::fmt_num;
use crate::sim::Transition;

const DEFAULT_GENERATOR_TEMPLATE: &str = include_str!("../data/prompts/generator.txt");
const DEFAULT_EVALUATOR_TEMPLATE: &str = include_str!("../data/prompts/evaluator.txt");

/// Appended to every evaluator prompt regardless of which sections are kept,
/// so the verdict line stays machine-readable.
const VERDICT_FORMAT: &str =
    "Begin your answer with exactly one line `VERDICT: YES` or `VERDICT: NO`. \
After a NO verdict, explain every deviation, naming the action number (for example \
\"Action 12 flies West instead of East\") and what the task required instead.";

/// Fixed instruction appended to evaluator feedback during refinement.
pub const REFINE_INSTRUCTION: &str = "The trajectory deviated from the task as described above. \
Emit a corrected full script in a single fenced code block.";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("prompt template: {0}")]
pub struct TemplateError(pub String);

/// Splits `@@ name` headed sections. Text before the first header is ignored.
pub fn parse_sections(text: &str) -> Vec<(String, String)> {
    let mut sections: Vec<(String, Vec<&str>)> = Vec::new();
    for line in text.lines() {
        if let Some(name) = line.strip_prefix("@@") {
            sections.push((name.trim().to_string(), Vec::new()));
        } else if let Some((_, body)) = sections.last_mut() {
            body.push(line);
        }
    }
    sections
        .into_iter()
        .map(|(name, body)| (name, trim_blank_lines(&body)))
        .collect()
}

/// Splits `@field` headed parts of a section body. A value may start on the
/// header line itself.
fn parse_fields(body: &str) -> Vec<(String, String)> {
    let mut fields: Vec<(String, Vec<&str>)> = Vec::new();
    for line in body.lines() {
        if let Some(rest) = line.strip_prefix('@') {
            let (name, inline) = rest.split_once(char::is_whitespace).unwrap_or((rest, ""));
            let mut lines = Vec::new();
            if !inline.trim().is_empty() {
                lines.push(inline.trim());
            }
            fields.push((name.to_string(), lines));
        } else if let Some((_, lines)) = fields.last_mut() {
            lines.push(line);
        }
    }
    fields
        .into_iter()
        .map(|(name, lines)| (name, trim_blank_lines(&lines)))
        .collect()
}

fn trim_blank_lines(lines: &[&str]) -> String {
    let start = lines.iter().position(|l| !l.trim().is_empty());
    let end = lines.iter().rposition(|l| !l.trim().is_empty());
    match (start, end) {
        (Some(s), Some(e)) => lines[s..=e].join("\n"),
        _ => String::new(),
    }
}

fn single_section(sections: &[(String, String)], name: &str) -> Result<String, TemplateError> {
    let mut found = sections.iter().filter(|(n, _)| n == name);
    let (_, body) = found
        .next()
        .ok_or_else(|| TemplateError(format!("missing section '{name}'")))?;
    if found.next().is_some() {
        return Err(TemplateError(format!("section '{name}' appears twice")));
    }
    if body.trim().is_empty() {
        return Err(TemplateError(format!("section '{name}' is empty")));
    }
    Ok(body.clone())
}

fn field(fields: &[(String, String)], name: &str, section: &str) -> Result<String, TemplateError> {
    fields
        .iter()
        .find(|(n, _)| n == name)
        .map(|(_, v)| v.clone())
        .filter(|v| !v.trim().is_empty())
        .ok_or_else(|| TemplateError(format!("{section}: missing field '@{name}'")))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorExample {
    pub task: String,
    pub reasoning: String,
    pub script: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorPrompt {
    pub guidelines: String,
    pub skill_api_reference: String,
    pub constraints: String,
    pub examples: Vec<GeneratorExample>,
}

impl Default for GeneratorPrompt {
    fn default() -> Self {
        GeneratorPrompt::from_template(DEFAULT_GENERATOR_TEMPLATE)
            .expect("bundled generator template is valid")
    }
}

impl GeneratorPrompt {
    pub fn from_template(text: &str) -> Result<Self, TemplateError> {
        let sections = parse_sections(text);
        let examples = sections
            .iter()
            .filter(|(n, _)| n == "example")
            .enumerate()
            .map(|(i, (_, body))| {
                let fields = parse_fields(body);
                let name = format!("example {}", i + 1);
                Ok(GeneratorExample {
                    task: field(&fields, "task", &name)?,
                    reasoning: field(&fields, "reasoning", &name)?,
                    script: field(&fields, "script", &name)?,
                })
            })
            .collect::<Result<Vec<_>, TemplateError>>()?;
        let prompt = GeneratorPrompt {
            guidelines: single_section(&sections, "guidelines")?,
            skill_api_reference: single_section(&sections, "skill_api")?,
            constraints: single_section(&sections, "constraints")?,
            examples,
        };
        prompt.validate()?;
        Ok(prompt)
    }

    pub fn validate(&self) -> Result<(), TemplateError> {
        if self.examples.is_empty() {
            return Err(TemplateError(
                "generator prompt needs at least one example".into(),
            ));
        }
        for (i, ex) in self.examples.iter().enumerate() {
            flightlang::parse(&ex.script)
                .map_err(|e| TemplateError(format!("example {} script: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn assemble(&self) -> String {
        let mut out = String::new();
        out.push_str("# Guidelines\n");
        out.push_str(&self.guidelines);
        out.push_str("\n\n# Skill API\n");
        out.push_str(&self.skill_api_reference);
        out.push_str("\n\n# Constraints\n");
        out.push_str(&self.constraints);
        out.push_str("\n\n# Examples");
        for (i, ex) in self.examples.iter().enumerate() {
            out.push_str(&format!(
                "\n\n## Example {}\nTask: {}\nReasoning:\n{}\nScript:\n```\n{}\n```",
                i + 1,
                ex.task,
                ex.reasoning,
                ex.script
            ));
        }
        out.push('\n');
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Decision {
    Yes,
    No,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub decision: Decision,
    pub explanation: String,
}

impl Verdict {
    pub fn yes(explanation: impl Into<String>) -> Self {
        Verdict {
            decision: Decision::Yes,
            explanation: explanation.into(),
        }
    }

    /// A NO verdict; panics on an empty explanation.
    pub fn no(explanation: impl Into<String>) -> Self {
        let explanation = explanation.into();
        assert!(
            !explanation.trim().is_empty(),
            "a NO verdict must carry an explanation"
        );
        Verdict {
            decision: Decision::No,
            explanation,
        }
    }

    pub fn is_yes(&self) -> bool {
        self.decision == Decision::Yes
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluatorReference {
    pub task: String,
    pub script: String,
    pub observation: String,
    pub verdict: Decision,
    pub explanation: String,
}

/// Which evaluator prompt sections are included; used for ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptSections {
    RolesOnly,
    RolesRules,
    #[default]
    Full,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluatorPrompt {
    pub roles: String,
    pub rules: String,
    pub references: Vec<EvaluatorReference>,
}

impl Default for EvaluatorPrompt {
    fn default() -> Self {
        EvaluatorPrompt::from_template(DEFAULT_EVALUATOR_TEMPLATE)
            .expect("bundled evaluator template is valid")
    }
}

impl EvaluatorPrompt {
    pub fn from_template(text: &str) -> Result<Self, TemplateError> {
        let sections = parse_sections(text);
        let references = sections
            .iter()
            .filter(|(n, _)| n == "reference")
            .enumerate()
            .map(|(i, (_, body))| {
                let fields = parse_fields(body);
                let name = format!("reference {}", i + 1);
                let verdict = match field(&fields, "verdict", &name)?.trim() {
                    "YES" => Decision::Yes,
                    "NO" => Decision::No,
                    other => {
                        return Err(TemplateError(format!(
                            "{name}: verdict must be YES or NO, got '{other}'"
                        )))
                    }
                };
                Ok(EvaluatorReference {
                    task: field(&fields, "task", &name)?,
                    script: field(&fields, "script", &name)?,
                    observation: field(&fields, "observation", &name)?,
                    verdict,
                    explanation: field(&fields, "explanation", &name)?,
                })
            })
            .collect::<Result<Vec<_>, TemplateError>>()?;
        if references.is_empty() {
            return Err(TemplateError(
                "evaluator prompt needs at least one reference".into(),
            ));
        }
        Ok(EvaluatorPrompt {
            roles: single_section(&sections, "roles")?,
            rules: single_section(&sections, "rules")?,
            references,
        })
    }

    pub fn assemble(&self, sections: PromptSections) -> String {
        let mut out = String::new();
        out.push_str("# Role\n");
        out.push_str(&self.roles);
        if sections != PromptSections::RolesOnly {
            out.push_str("\n\n# Rules\n");
            out.push_str(&self.rules);
        }
        if sections == PromptSections::Full {
            out.push_str("\n\n# References");
            for (i, r) in self.references.iter().enumerate() {
                let verdict = match r.verdict {
                    Decision::Yes => "YES",
                    Decision::No => "NO",
                };
                out.push_str(&format!(
                    "\n\n## Reference {}\nTask: {}\nTrajectory observation:\n{}\nExpected answer:\nVERDICT: {verdict}\n{}",
                    i + 1,
                    r.task,
                    r.observation,
                    r.explanation
                ));
            }
        }
        out.push_str("\n\n# Output format\n");
        out.push_str(VERDICT_FORMAT);
        out.push('\n');
        out
    }
}

/// How a verdict is read from the evaluator's text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictRule {
    /// A `VERDICT: YES|NO` line.
    #[default]
    Structured,
    /// Any occurrence of `YES` in the response.
    Substring,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvaluationError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("evaluator response has no VERDICT line")]
    MissingVerdict,
    #[error("evaluator answered NO without an explanation")]
    MissingExplanation,
    #[error("empty observation")]
    EmptyObservation,
}

fn verdict_line() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^[\s*_#>`]*VERDICT\s*:\s*[*_`]*\s*(YES|NO)\b[*_`]*[\s.:,-]*(.*)$")
            .expect("static verdict pattern")
    })
}

/// Reads a verdict from an evaluator response.
pub fn parse_verdict(response: &str, rule: VerdictRule) -> Result<Verdict, EvaluationError> {
    let (decision, explanation) = match rule {
        VerdictRule::Structured => {
            let lines: Vec<&str> = response.lines().collect();
            let (idx, caps) = lines
                .iter()
                .enumerate()
                .find_map(|(i, l)| verdict_line().captures(l).map(|c| (i, c)))
                .ok_or(EvaluationError::MissingVerdict)?;
            let decision = if &caps[1] == "YES" {
                Decision::Yes
            } else {
                Decision::No
            };
            let mut rest: Vec<&str> = Vec::new();
            let inline = caps.get(2).map_or("", |m| m.as_str()).trim();
            rest.extend(lines[..idx].iter().copied());
            if !inline.is_empty() {
                rest.push(inline);
            }
            rest.extend(lines[idx + 1..].iter().copied());
            (decision, trim_blank_lines(&rest))
        }
        VerdictRule::Substring => {
            let decision = if response.contains("YES") {
                Decision::Yes
            } else {
                Decision::No
            };
            (decision, response.trim().to_string())
        }
    };
    match decision {
        Decision::Yes => Ok(Verdict::yes(explanation)),
        Decision::No if explanation.trim().is_empty() => Err(EvaluationError::MissingExplanation),
        Decision::No => Ok(Verdict::no(explanation)),
    }
}

/// User message carrying the task and the observation to judge.
pub fn evaluation_message(task: &str, observation: &str) -> String {
    format!("Task description:\n{task}\n\nTrajectory observation:\n{observation}")
}

/// Result of one evaluator call, with the exact texts exchanged.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evaluation {
    pub verdict: Verdict,
    pub request_message: String,
    pub response: String,
}

/// Stateless evaluator: every call is a fresh single-turn conversation.
pub struct Evaluator {
    backend: Arc<dyn ChatBackend>,
    system_prompt: String,
    settings: ModelSettings,
    rule: VerdictRule,
}

impl Evaluator {
    pub fn new(
        backend: Arc<dyn ChatBackend>,
        prompt: &EvaluatorPrompt,
        sections: PromptSections,
        settings: ModelSettings,
        rule: VerdictRule,
    ) -> Self {
        Evaluator {
            backend,
            system_prompt: prompt.assemble(sections),
            settings,
            rule,
        }
    }

    pub fn system_prompt(&self) -> &str {
        &self.system_prompt
    }

    /// Judges an observation against the task. On a parse failure the raw
    /// response is still returned alongside the error.
    pub fn evaluate(
        &self,
        task: &str,
        observation: &str,
    ) -> Result<Evaluation, (EvaluationError, Option<String>)> {
        if observation.trim().is_empty() {
            return Err((EvaluationError::EmptyObservation, None));
        }
        let message = evaluation_message(task, observation);
        let request = ChatRequest::new(
            AgentRole::Evaluator,
            self.system_prompt.clone(),
            vec![Turn::user(message.clone())],
            &self.settings,
        );
        let response = complete(self.backend.as_ref(), &request)
            .map_err(|e| (EvaluationError::Llm(e), None))?
            .content;
        match parse_verdict(&response, self.rule) {
            Ok(verdict) => Ok(Evaluation {
                verdict,
                request_message: message,
                response,
            }),
            Err(e) => Err((e, Some(response))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GenerationError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Extraction(#[from] ExtractionError),
    #[error("script parse error at {0}")]
    Parse(#[from] ParseError),
    #[error("refinement requires a prior generated response")]
    Precondition,
    #[error("empty task description")]
    EmptyTask,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conversation {
    pub system_prompt: String,
    pub turns: Vec<Turn>,
}

/// Result of one generator call: the raw reply (when the backend answered)
/// and the parsed script or the reason there is none.
#[derive(Debug, Clone)]
pub struct Generation {
    pub response: Option<String>,
    pub script: Result<FlightScript, GenerationError>,
}

/// Generator conversation for one task run. Refinements continue the same
/// conversation so the model sees its earlier scripts.
pub struct GeneratorSession {
    backend: Arc<dyn ChatBackend>,
    settings: ModelSettings,
    conversation: Conversation,
}

impl GeneratorSession {
    pub fn new(
        backend: Arc<dyn ChatBackend>,
        prompt: &GeneratorPrompt,
        settings: ModelSettings,
    ) -> Self {
        GeneratorSession {
            backend,
            settings,
            conversation: Conversation {
                system_prompt: prompt.assemble(),
                turns: Vec::new(),
            },
        }
    }

    pub fn conversation(&self) -> &Conversation {
        &self.conversation
    }

    pub fn has_response(&self) -> bool {
        self.conversation
            .turns
            .last()
            .is_some_and(|t| t.role == crate::llmclient::Role::Assistant)
    }

    /// Sends a user turn; on transport failure the turn is rolled back so the
    /// conversation keeps alternating.
    fn exchange(&mut self, message: String) -> Result<String, LlmError> {
        self.conversation.turns.push(Turn::user(message));
        let request = ChatRequest::new(
            AgentRole::Generator,
            self.conversation.system_prompt.clone(),
            self.conversation.turns.clone(),
            &self.settings,
        );
        match complete(self.backend.as_ref(), &request) {
            Ok(c) => {
                self.conversation
                    .turns
                    .push(Turn::assistant(c.content.clone()));
                Ok(c.content)
            }
            Err(e) => {
                self.conversation.turns.pop();
                Err(e)
            }
        }
    }

    fn to_generation(response: Result<String, LlmError>) -> Generation {
        match response {
            Ok(text) => {
                let script = flightlang::extract_script(&text)
                    .map_err(GenerationError::from)
                    .and_then(|src| flightlang::parse(&src).map_err(GenerationError::from));
                Generation {
                    response: Some(text),
                    script,
                }
            }
            Err(e) => Generation {
                response: None,
                script: Err(e.into()),
            },
        }
    }

    /// Initial script for a task.
    pub fn generate(&mut self, task: &str) -> Generation {
        if task.trim().is_empty() {
            return Generation {
                response: None,
                script: Err(GenerationError::EmptyTask),
            };
        }
        let message = format!(
            "Task: {task}\n\nRespond with the complete flight script in a single fenced code block."
        );
        Self::to_generation(self.exchange(message))
    }

    /// Corrected script from evaluator feedback, in the same conversation.
    pub fn refine(&mut self, feedback: &Verdict) -> Generation {
        if !self.has_response() {
            return Generation {
                response: None,
                script: Err(GenerationError::Precondition),
            };
        }
        let message = format!(
            "Evaluation feedback:\n{}\n\n{REFINE_INSTRUCTION}",
            feedback.explanation.trim()
        );
        Self::to_generation(self.exchange(message))
    }

    /// Self-refine mode: the generator judges its own trajectory inside its
    /// conversation.
    pub fn self_evaluate(
        &mut self,
        task: &str,
        observation: &str,
        evaluator_prompt: &EvaluatorPrompt,
        rule: VerdictRule,
    ) -> Result<Evaluation, (EvaluationError, Option<String>)> {
        if observation.trim().is_empty() {
            return Err((EvaluationError::EmptyObservation, None));
        }
        let evaluation = evaluation_message(task, observation);
        let message = format!(
            "Evaluate the trajectory your script produced.\n\n{}\n\n{}\n\n{VERDICT_FORMAT}",
            evaluator_prompt.rules, evaluation
        );
        let response = self
            .exchange(message)
            .map_err(|e| (EvaluationError::Llm(e), None))?;
        match parse_verdict(&response, rule) {
            Ok(verdict) => Ok(Evaluation {
                verdict,
                request_message: evaluation,
                response,
            }),
            Err(e) => Err((e, Some(response))),
        }
    }
}

/// Short imperative description of a delta, e.g. `move 3.00 meters West`.
pub fn delta_phrase(t: &Transition) -> String {
    let mut parts = Vec::new();
    if t.d_yaw != 0.0 {
        let sense = if t.d_yaw > 0.0 {
            "clockwise"
        } else {
            "counter-clockwise"
        };
        parts.push(format!(
            "rotate {} degrees {sense}",
            fmt_num(t.d_yaw.abs(), 2)
        ));
    }
    let mut moves = Vec::new();
    for (d, pos, neg) in [
        (t.d_north, "North", "South"),
        (t.d_east, "East", "West"),
        (t.d_down, "Down", "Up"),
    ] {
        if d != 0.0 {
            let dir = if d > 0.0 { pos } else { neg };
            moves.push(format!("{} meters {dir}", fmt_num(d.abs(), 2)));
        }
    }
    if !moves.is_empty() {
        parts.push(format!("move {}", moves.join(" and ")));
    }
    if parts.is_empty() {
        "stay in place".to_string()
    } else {
        parts.join(" and ")
    }
}

/// Ground-truth stand-in for the LLM evaluator.
///
/// Says YES exactly when the executed transitions are a success under the
/// matcher; otherwise names the first deviating action.
pub fn oracle_evaluate(
    trace: &ExecutionTrace,
    ground_truth: &[Transition],
    config: &MatchConfig,
) -> Verdict {
    let executed: Vec<(usize, Transition)> = trace
        .steps
        .iter()
        .enumerate()
        .filter_map(|(i, s)| s.transition().map(|t| (i + 1, *t)))
        .collect();
    let only: Vec<Transition> = executed.iter().map(|(_, t)| *t).collect();
    if !ground_truth.is_empty() && success(&only, ground_truth, config) == 1 {
        return Verdict::yes("The trajectory matches the task.");
    }
    if trace.is_empty() {
        return Verdict::no("No actions executed.");
    }

    let mut problems = Vec::new();
    for (k, step) in trace.steps.iter().enumerate() {
        if let Some(err) = step.error() {
            problems.push(format!(
                "Action {} ({}) failed with {}.",
                k + 1,
                step.command,
                err.kind_name()
            ));
        }
    }
    let mismatch = executed
        .iter()
        .zip(ground_truth)
        .find(|((_, got), want)| !matches(got, want, config));
    if let Some(((k, got), want)) = mismatch {
        problems.push(format!(
            "Action {k} does not follow the task: it executed '{}' but the task requires '{}'.",
            delta_phrase(got),
            delta_phrase(want)
        ));
    } else if executed.len() > ground_truth.len() {
        let (k, extra) = executed[ground_truth.len()];
        problems.push(format!(
            "Action {k} '{}' is extra; the task requires only {} actions.",
            delta_phrase(&extra),
            ground_truth.len()
        ));
    } else if executed.len() < ground_truth.len() {
        problems.push(format!(
            "The trajectory stops early: the next required action is '{}'.",
            delta_phrase(&ground_truth[executed.len()])
        ));
    }
    if problems.is_empty() {
        problems.push("The trajectory does not match the task.".to_string());
    }
    Verdict::no(problems.join(" "))
}
