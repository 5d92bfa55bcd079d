//! Turns numeric execution traces into step-wise natural-language
//! trajectory descriptions for the evaluator.
//!
//! Each step becomes one `Action k: ...` line. Translations name the world
//! direction (North/South/East/West/Up/Down) and the current facing, followed
//! by the absolute position; rotations name the turn direction and the new
//! facing. Failed actions are reported with their error message. The exact
//! wording is a contract with the evaluator prompt and with
//! [`parse_observation`], which inverts it.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flightlang::ExecutionTrace;
use crate::sim::{ActionError, Transition};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FormatConfig {
    pub position_epsilon: f64,
    pub yaw_epsilon: f64,
    pub decimals: usize,
}

impl Default for FormatConfig {
    fn default() -> Self {
        FormatConfig {
            position_epsilon: 1e-6,
            yaw_epsilon: 1e-6,
            decimals: 2,
        }
    }
}

/// Which observation rendering the evaluator receives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationMode {
    #[default]
    Semantic,
    Numeric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRaw {
    Transition(Transition),
    Error(ActionError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationStep {
    pub index: usize,
    pub text: String,
    pub raw: StepRaw,
    pub position_after: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryObservation {
    pub steps: Vec<ObservationStep>,
    pub rendered: String,
}

impl TrajectoryObservation {
    fn from_steps(steps: Vec<ObservationStep>) -> Self {
        let rendered = steps
            .iter()
            .map(|s| format!("Action {}: {}", s.index, s.text))
            .collect::<Vec<_>>()
            .join("\n");
        TrajectoryObservation { steps, rendered }
    }
}

/// Fixed-point formatting that never prints a negative zero.
pub fn fmt_num(value: f64, decimals: usize) -> String {
    let s = format!("{value:.decimals$}");
    match s.strip_prefix('-') {
        Some(rest) if rest.bytes().all(|b| b == b'0' || b == b'.') => rest.to_string(),
        _ => s,
    }
}

/// Cardinal name at the quadrant headings, numeric heading otherwise.
pub fn facing(yaw: f64, fmt: &FormatConfig) -> String {
    const CARDINALS: [(f64, &str); 5] = [
        (0.0, "North"),
        (90.0, "East"),
        (180.0, "South"),
        (270.0, "West"),
        (360.0, "North"),
    ];
    CARDINALS
        .iter()
        .find(|(deg, _)| (yaw - deg).abs() <= fmt.yaw_epsilon)
        .map(|(_, name)| name.to_string())
        .unwrap_or_else(|| format!("heading {} degrees", fmt_num(yaw, fmt.decimals)))
}

fn describe_transition(
    t: &Transition,
    yaw_after: f64,
    pos: [f64; 3],
    fmt: &FormatConfig,
) -> String {
    let d = fmt.decimals;
    let mut sentences = Vec::new();

    if t.d_yaw.abs() > fmt.yaw_epsilon {
        let sense = if t.d_yaw > 0.0 {
            "clockwise"
        } else {
            "counter-clockwise"
        };
        sentences.push(format!(
            "Rotate {} degrees {sense} in Yaw. The UAV now faces {}.",
            fmt_num(t.d_yaw.abs(), d),
            facing(yaw_after, fmt)
        ));
    }

    let axes = [
        (t.d_north, "North", "South"),
        (t.d_east, "East", "West"),
        // down axis: negative delta is a climb
        (t.d_down, "Down", "Up"),
    ];
    let mut moved = false;
    for (delta, positive, negative) in axes {
        if delta.abs() > fmt.position_epsilon {
            moved = true;
            let dir = if delta > 0.0 { positive } else { negative };
            sentences.push(format!(
                "Move {} meters {dir} while facing {}.",
                fmt_num(delta.abs(), d),
                facing(yaw_after, fmt)
            ));
        }
    }
    if moved {
        sentences.push(format!(
            "The UAV moves to [{}, {}, {}].",
            fmt_num(pos[0], d),
            fmt_num(pos[1], d),
            fmt_num(pos[2], d)
        ));
    }

    if sentences.is_empty() {
        "No change in state.".to_string()
    } else {
        sentences.join(" ")
    }
}

/// Natural-language trajectory observation of a trace.
pub fn transform(trace: &ExecutionTrace, fmt: &FormatConfig) -> TrajectoryObservation {
    let steps = trace
        .steps
        .iter()
        .enumerate()
        .map(|(i, step)| {
            let after = step.state_after;
            let (text, raw) = match step.error() {
                Some(err) => (
                    format!(
                        "Error in executing {} with error message {}.",
                        step.command.display_fixed(fmt.decimals),
                        err
                    ),
                    StepRaw::Error(err.clone()),
                ),
                None => {
                    let t = step.transition().copied().unwrap_or_default();
                    (
                        describe_transition(&t, after.yaw, after.position(), fmt),
                        StepRaw::Transition(t),
                    )
                }
            };
            ObservationStep {
                index: i + 1,
                text,
                raw,
                position_after: after.position(),
            }
        })
        .collect();
    TrajectoryObservation::from_steps(steps)
}

/// Raw numeric observation used by the numerical-feedback baseline.
pub fn render_numeric(trace: &ExecutionTrace) -> String {
    trace
        .steps
        .iter()
        .enumerate()
        .map(|(i, step)| match step.error() {
            Some(err) => format!("Action {}: error {}", i + 1, err.kind_name()),
            None => {
                let s = step.state_after;
                format!(
                    "Action {}: state [{}, {}, {}, {}]",
                    i + 1,
                    fmt_num(s.north, 2),
                    fmt_num(s.east, 2),
                    fmt_num(s.down, 2),
                    fmt_num(s.yaw, 2)
                )
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Observation text in the requested mode.
pub fn render(trace: &ExecutionTrace, mode: ObservationMode, fmt: &FormatConfig) -> String {
    match mode {
        ObservationMode::Semantic => transform(trace, fmt).rendered,
        ObservationMode::Numeric => render_numeric(trace),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservedStep {
    pub transition: Transition,
    pub errored: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("observation line {line}: {message}")]
pub struct ObservationParseError {
    pub line: usize,
    pub message: String,
}

struct Patterns {
    action: Regex,
    error: Regex,
    rotate: Regex,
    faces: Regex,
    mv: Regex,
    at: Regex,
}

fn patterns() -> &'static Patterns {
    static P: OnceLock<Patterns> = OnceLock::new();
    P.get_or_init(|| {
        const NUM: &str = r"\d+(?:\.\d+)?";
        const SNUM: &str = r"-?\d+(?:\.\d+)?";
        let facing = format!(r"(?:North|East|South|West|heading {NUM} degrees)");
        let re = |s: String| Regex::new(&s).expect("static observation pattern");
        Patterns {
            action: re(r"^Action (\d+): (.*)$".into()),
            error: re(r"^Error in executing (.+?) with error message (.+)\.$".into()),
            rotate: re(format!(
                r"^Rotate ({NUM}) degrees (clockwise|counter-clockwise) in Yaw\."
            )),
            faces: re(format!(r"^The UAV now faces {facing}\.")),
            mv: re(format!(
                r"^Move ({NUM}) meters (North|South|East|West|Up|Down) while facing {facing}\."
            )),
            at: re(format!(r"^The UAV moves to \[{SNUM}, {SNUM}, {SNUM}\]\.")),
        }
    })
}

fn parse_step_body(body: &str) -> Result<ObservedStep, String> {
    let p = patterns();
    if p.error.is_match(body) {
        return Ok(ObservedStep {
            transition: Transition::ZERO,
            errored: true,
        });
    }
    if body == "No change in state." {
        return Ok(ObservedStep {
            transition: Transition::ZERO,
            errored: false,
        });
    }

    let num = |s: &str| s.parse::<f64>().map_err(|e| e.to_string());
    let mut t = Transition::ZERO;
    let mut rest = body;
    let mut sentences = 0;
    while !rest.is_empty() {
        let consumed = if let Some(c) = p.rotate.captures(rest) {
            let mag = num(&c[1])?;
            t.d_yaw += if &c[2] == "clockwise" { mag } else { -mag };
            c[0].len()
        } else if let Some(m) = p.faces.find(rest) {
            m.end()
        } else if let Some(c) = p.mv.captures(rest) {
            let mag = num(&c[1])?;
            match &c[2] {
                "North" => t.d_north += mag,
                "South" => t.d_north -= mag,
                "East" => t.d_east += mag,
                "West" => t.d_east -= mag,
                "Down" => t.d_down += mag,
                _ => t.d_down -= mag,
            }
            c[0].len()
        } else if let Some(m) = p.at.find(rest) {
            m.end()
        } else {
            return Err(format!("unrecognized sentence: '{rest}'"));
        };
        sentences += 1;
        rest = &rest[consumed..];
        rest = rest.strip_prefix(' ').unwrap_or(rest);
    }
    if sentences == 0 {
        return Err("empty step description".into());
    }
    Ok(ObservedStep {
        transition: t,
        errored: false,
    })
}

/// Inverse of [`transform`]: recovers per-step transitions from rendered
/// text, to within the display rounding.
pub fn parse_observation(rendered: &str) -> Result<Vec<ObservedStep>, ObservationParseError> {
    let p = patterns();
    let mut out = Vec::new();
    for (i, line) in rendered.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| ObservationParseError {
            line: line_no,
            message,
        };
        let caps = p
            .action
            .captures(line)
            .ok_or_else(|| err("expected 'Action k: ...'".into()))?;
        let index: usize = caps[1]
            .parse()
            .map_err(|_| err("bad action index".into()))?;
        if index != out.len() + 1 {
            return Err(err(format!(
                "expected action {}, found {index}",
                out.len() + 1
            )));
        }
        out.push(parse_step_body(&caps[2]).map_err(err)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flightlang::{parse, run, Command, StepOutcome, TraceStep, Verb};
    use crate::sim::{SimConfig, UavState};

    fn single_step(t: Transition, before: UavState, after: UavState) -> ExecutionTrace {
        ExecutionTrace {
            initial: UavState::initial(),
            steps: vec![TraceStep {
                command: Command::new(Verb::Forward, Some(1.0), 1),
                state_before: before,
                state_after: after,
                outcome: StepOutcome::Moved(t),
            }],
        }
    }

    fn at(n: f64, e: f64, d: f64, yaw: f64) -> UavState {
        UavState {
            north: n,
            east: e,
            down: d,
            yaw,
            airborne: true,
        }
    }

    #[test]
    fn move_east_facing_north() {
        let trace = single_step(
            Transition::new(0.0, 5.0, 0.0, 0.0),
            at(0.0, 0.0, -5.0, 0.0),
            at(0.0, 5.0, -5.0, 0.0),
        );
        let obs = transform(&trace, &FormatConfig::default());
        assert_eq!(
            obs.steps[0].text,
            "Move 5.00 meters East while facing North. The UAV moves to [0.00, 5.00, -5.00]."
        );
        assert_eq!(obs.rendered, format!("Action 1: {}", obs.steps[0].text));
    }

    #[test]
    fn rotate_clockwise() {
        let trace = single_step(
            Transition::rotation(90.0),
            at(0.0, 0.0, -5.0, 0.0),
            at(0.0, 0.0, -5.0, 90.0),
        );
        let obs = transform(&trace, &FormatConfig::default());
        assert_eq!(
            obs.steps[0].text,
            "Rotate 90.00 degrees clockwise in Yaw. The UAV now faces East."
        );
    }

    #[test]
    fn move_south_facing_south() {
        let trace = single_step(
            Transition::new(-3.0, 0.0, 0.0, 0.0),
            at(0.0, 0.0, -5.0, 180.0),
            at(-3.0, 0.0, -5.0, 180.0),
        );
        let obs = transform(&trace, &FormatConfig::default());
        assert!(obs.steps[0]
            .text
            .starts_with("Move 3.00 meters South while facing South."));
        let back = parse_observation(&obs.rendered).unwrap();
        assert_eq!(back[0].transition, Transition::new(-3.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn error_sentence() {
        let trace = run(&parse("forward(2)").unwrap(), &SimConfig::default());
        let obs = transform(&trace, &FormatConfig::default());
        assert!(obs.steps[0]
            .text
            .starts_with("Error in executing forward(2.00) with error message NotAirborne: "));
        assert!(obs.steps[0].text.ends_with('.'));
        let back = parse_observation(&obs.rendered).unwrap();
        assert!(back[0].errored);
        assert_eq!(back[0].transition, Transition::ZERO);
    }

    #[test]
    fn zero_delta_is_suppressed() {
        // descend to the ground, then land: the land step has no delta
        let trace = run(
            &parse("takeoff(2)\ndown(2)\nland").unwrap(),
            &SimConfig::default(),
        );
        let obs = transform(&trace, &FormatConfig::default());
        assert_eq!(obs.steps[2].text, "No change in state.");
    }

    #[test]
    fn climb_and_heading_wording() {
        let trace = run(
            &parse("takeoff(3)\nturn_cw(45)\nforward(2)\nup(1.5)").unwrap(),
            &SimConfig::default(),
        );
        let obs = transform(&trace, &FormatConfig::default());
        assert_eq!(
            obs.steps[0].text,
            "Move 3.00 meters Up while facing North. The UAV moves to [0.00, 0.00, -3.00]."
        );
        assert_eq!(
            obs.steps[1].text,
            "Rotate 45.00 degrees clockwise in Yaw. The UAV now faces heading 45.00 degrees."
        );
        assert_eq!(
            obs.steps[2].text,
            "Move 1.41 meters North while facing heading 45.00 degrees. \
             Move 1.41 meters East while facing heading 45.00 degrees. \
             The UAV moves to [1.41, 1.41, -3.00]."
        );
        assert!(obs.steps[3].text.starts_with("Move 1.50 meters Up"));
    }

    #[test]
    fn no_negative_zero() {
        assert_eq!(fmt_num(-0.0, 2), "0.00");
        assert_eq!(fmt_num(-0.001, 2), "0.00");
        assert_eq!(fmt_num(-0.006, 2), "-0.01");
        assert_eq!(fmt_num(1234567.891, 2), "1234567.89");
    }

    #[test]
    fn numeric_rendering() {
        let trace = run(&parse("takeoff(5)").unwrap(), &SimConfig::default());
        assert_eq!(
            render_numeric(&trace),
            "Action 1: state [0.00, 0.00, -5.00, 0.00]"
        );
        let trace = run(
            &parse("takeoff(5)\nland\nforward(1)").unwrap(),
            &SimConfig::default(),
        );
        let text = render_numeric(&trace);
        assert_eq!(text.lines().count(), 3);
        assert_eq!(text.lines().last(), Some("Action 3: error NotAirborne"));
    }

    #[test]
    fn parse_rotation_and_rejects_tampering() {
        let back = parse_observation(
            "Action 1: Rotate 90.00 degrees clockwise in Yaw. The UAV now faces East.",
        )
        .unwrap();
        assert_eq!(back[0].transition.d_yaw, 90.0);
        let back = parse_observation(
            "Action 1: Rotate 30.00 degrees counter-clockwise in Yaw. The UAV now faces heading 330.00 degrees.",
        )
        .unwrap();
        assert_eq!(back[0].transition.d_yaw, -30.0);

        let tampered = "Action 1: Move five meters North while facing North. The UAV moves to [5.00, 0.00, -5.00].";
        assert!(parse_observation(tampered).is_err());
        assert!(parse_observation("Action 2: No change in state.").is_err());
        assert!(parse_observation("Something else").is_err());
    }
}
