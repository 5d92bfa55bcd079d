//! Deterministic kinematic UAV model in the North-East-Down frame.
//!
//! Every action teleports the vehicle to its successor state; there is no
//! continuous dynamics. Yaw is measured in degrees from North, clockwise
//! positive, and stored normalized to `[0, 360)`. The [`Transition`] produced
//! by an action keeps the commanded rotation unnormalized so that a 450° turn
//! remains distinguishable from a 90° one.

use std::ops::{Add, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flightlang::{Command, Verb};

/// Vehicle pose. `down` is negative above the ground.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UavState {
    pub north: f64,
    pub east: f64,
    pub down: f64,
    pub yaw: f64,
    pub airborne: bool,
}

impl UavState {
    /// The landed origin pose every simulation starts from.
    pub const fn initial() -> Self {
        UavState {
            north: 0.0,
            east: 0.0,
            down: 0.0,
            yaw: 0.0,
            airborne: false,
        }
    }

    pub fn position(&self) -> [f64; 3] {
        [self.north, self.east, self.down]
    }

    pub fn is_valid(&self) -> bool {
        self.north.is_finite()
            && self.east.is_finite()
            && self.down.is_finite()
            && self.yaw.is_finite()
            && (0.0..360.0).contains(&self.yaw)
            && (self.airborne || self.down == 0.0)
    }
}

/// Per-action state delta `[d_north, d_east, d_down, d_yaw]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct Transition {
    pub d_north: f64,
    pub d_east: f64,
    pub d_down: f64,
    /// Signed commanded rotation, clockwise positive, not normalized.
    pub d_yaw: f64,
}

impl Transition {
    pub const ZERO: Transition = Transition::new(0.0, 0.0, 0.0, 0.0);

    pub const fn new(d_north: f64, d_east: f64, d_down: f64, d_yaw: f64) -> Self {
        Transition {
            d_north,
            d_east,
            d_down,
            d_yaw,
        }
    }

    pub fn translation(d_north: f64, d_east: f64, d_down: f64) -> Self {
        Transition::new(d_north, d_east, d_down, 0.0)
    }

    pub fn rotation(d_yaw: f64) -> Self {
        Transition::new(0.0, 0.0, 0.0, d_yaw)
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.d_north, self.d_east, self.d_down, self.d_yaw]
    }

    pub fn has_translation(&self) -> bool {
        self.d_north != 0.0 || self.d_east != 0.0 || self.d_down != 0.0
    }

    pub fn is_zero(&self) -> bool {
        !self.has_translation() && self.d_yaw == 0.0
    }
}

impl From<[f64; 4]> for Transition {
    fn from(v: [f64; 4]) -> Self {
        Transition::new(v[0], v[1], v[2], v[3])
    }
}

impl From<Transition> for [f64; 4] {
    fn from(t: Transition) -> Self {
        t.to_array()
    }
}

impl Add for Transition {
    type Output = Transition;

    fn add(self, rhs: Transition) -> Transition {
        Transition::new(
            self.d_north + rhs.d_north,
            self.d_east + rhs.d_east,
            self.d_down + rhs.d_down,
            self.d_yaw + rhs.d_yaw,
        )
    }
}

impl Sub for Transition {
    type Output = Transition;

    fn sub(self, rhs: Transition) -> Transition {
        Transition::new(
            self.d_north - rhs.d_north,
            self.d_east - rhs.d_east,
            self.d_down - rhs.d_down,
            self.d_yaw - rhs.d_yaw,
        )
    }
}

/// Safety envelope and change-detection thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub max_altitude: f64,
    pub max_leg_distance: f64,
    pub position_epsilon: f64,
    pub yaw_epsilon: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            max_altitude: 120.0,
            max_leg_distance: 100.0,
            position_epsilon: 1e-6,
            yaw_epsilon: 1e-6,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), String> {
        let all_positive = [
            self.max_altitude,
            self.max_leg_distance,
            self.position_epsilon,
            self.yaw_epsilon,
        ]
        .iter()
        .all(|v| v.is_finite() && *v > 0.0);
        if !all_positive {
            return Err("simulator limits and epsilons must be positive and finite".into());
        }
        if self.position_epsilon >= 1.0 || self.yaw_epsilon >= 1.0 {
            return Err("simulator epsilons must be below 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
pub enum ActionError {
    #[error("NotAirborne: the UAV must take off before executing {0}")]
    NotAirborne(String),
    #[error("AlreadyAirborne: the UAV is already in the air")]
    AlreadyAirborne,
    #[error("AltitudeViolation: resulting altitude {altitude} m is outside [0, {max_altitude}] m")]
    AltitudeViolation { altitude: f64, max_altitude: f64 },
    #[error("DistanceViolation: leg of {distance} m exceeds the {max_leg_distance} m limit")]
    DistanceViolation {
        distance: f64,
        max_leg_distance: f64,
    },
    #[error("NonPositiveArgument: {0} requires a positive finite argument")]
    NonPositiveArgument(String),
}

impl ActionError {
    /// Bare error name, e.g. `NotAirborne`.
    pub fn kind_name(&self) -> &'static str {
        match self {
            ActionError::NotAirborne(_) => "NotAirborne",
            ActionError::AlreadyAirborne => "AlreadyAirborne",
            ActionError::AltitudeViolation { .. } => "AltitudeViolation",
            ActionError::DistanceViolation { .. } => "DistanceViolation",
            ActionError::NonPositiveArgument(_) => "NonPositiveArgument",
        }
    }
}

/// Body-frame movement direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BodyDirection {
    Forward,
    Backward,
    Left,
    Right,
    Up,
    Down,
}

impl BodyDirection {
    pub const ALL: [BodyDirection; 6] = [
        BodyDirection::Forward,
        BodyDirection::Backward,
        BodyDirection::Left,
        BodyDirection::Right,
        BodyDirection::Up,
        BodyDirection::Down,
    ];

    pub fn verb(self) -> Verb {
        match self {
            BodyDirection::Forward => Verb::Forward,
            BodyDirection::Backward => Verb::Backward,
            BodyDirection::Left => Verb::Left,
            BodyDirection::Right => Verb::Right,
            BodyDirection::Up => Verb::Up,
            BodyDirection::Down => Verb::Down,
        }
    }
}

/// Wraps an angle into `[0, 360)`.
pub fn normalize_yaw(deg: f64) -> f64 {
    let r = deg.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if r >= 360.0 {
        0.0
    } else {
        r
    }
}

/// `(sin, cos)` of an angle in degrees, exact at the quadrant angles.
fn sin_cos_deg(deg: f64) -> (f64, f64) {
    let a = normalize_yaw(deg);
    if a == 0.0 {
        (0.0, 1.0)
    } else if a == 90.0 {
        (1.0, 0.0)
    } else if a == 180.0 {
        (0.0, -1.0)
    } else if a == 270.0 {
        (-1.0, 0.0)
    } else {
        a.to_radians().sin_cos()
    }
}

/// Converts a body-frame displacement at the given heading to NED deltas.
pub fn body_to_ned(yaw: f64, direction: BodyDirection, distance: f64) -> (f64, f64, f64) {
    let offset = match direction {
        BodyDirection::Forward => 0.0,
        BodyDirection::Right => 90.0,
        BodyDirection::Backward => 180.0,
        BodyDirection::Left => 270.0,
        BodyDirection::Up => return (0.0, 0.0, -distance),
        BodyDirection::Down => return (0.0, 0.0, distance),
    };
    let (sin, cos) = sin_cos_deg(yaw + offset);
    (distance * cos, distance * sin, 0.0)
}

/// Component-wise sum of a sequence of transitions.
pub fn compose<'a, I>(transitions: I) -> Transition
where
    I: IntoIterator<Item = &'a Transition>,
{
    transitions
        .into_iter()
        .fold(Transition::ZERO, |acc, t| acc + *t)
}

fn positive_argument(command: &Command) -> Result<f64, ActionError> {
    match command.argument {
        Some(v) if v.is_finite() && v > 0.0 => Ok(v),
        _ => Err(ActionError::NonPositiveArgument(command.verb.to_string())),
    }
}

/// The transition function: successor state and exact delta for one action.
pub fn apply(
    state: &UavState,
    command: &Command,
    config: &SimConfig,
) -> Result<(UavState, Transition), ActionError> {
    let altitude_check = |down: f64| -> Result<(), ActionError> {
        if down > 0.0 || -down > config.max_altitude {
            Err(ActionError::AltitudeViolation {
                altitude: -down,
                max_altitude: config.max_altitude,
            })
        } else {
            Ok(())
        }
    };

    match command.verb {
        Verb::Takeoff => {
            if state.airborne {
                return Err(ActionError::AlreadyAirborne);
            }
            let height = positive_argument(command)?;
            altitude_check(-height)?;
            let next = UavState {
                down: -height,
                airborne: true,
                ..*state
            };
            Ok((next, Transition::translation(0.0, 0.0, -height)))
        }
        Verb::Land => {
            if !state.airborne {
                return Err(ActionError::NotAirborne(command.verb.to_string()));
            }
            let next = UavState {
                down: 0.0,
                airborne: false,
                ..*state
            };
            Ok((next, Transition::translation(0.0, 0.0, -state.down)))
        }
        Verb::TurnCw | Verb::TurnCcw => {
            if !state.airborne {
                return Err(ActionError::NotAirborne(command.verb.to_string()));
            }
            let angle = positive_argument(command)?;
            let d_yaw = if command.verb == Verb::TurnCw {
                angle
            } else {
                -angle
            };
            let next = UavState {
                yaw: normalize_yaw(state.yaw + d_yaw),
                ..*state
            };
            Ok((next, Transition::rotation(d_yaw)))
        }
        verb => {
            let direction = verb
                .body_direction()
                .expect("remaining verbs are body-frame movements");
            if !state.airborne {
                return Err(ActionError::NotAirborne(verb.to_string()));
            }
            let distance = positive_argument(command)?;
            if distance > config.max_leg_distance {
                return Err(ActionError::DistanceViolation {
                    distance,
                    max_leg_distance: config.max_leg_distance,
                });
            }
            let (d_north, d_east, d_down) = body_to_ned(state.yaw, direction, distance);
            let down = state.down + d_down;
            altitude_check(down)?;
            let next = UavState {
                north: state.north + d_north,
                east: state.east + d_east,
                down,
                ..*state
            };
            Ok((next, Transition::translation(d_north, d_east, d_down)))
        }
    }
}

/// Single-threaded simulator holding the current pose.
#[derive(Debug, Clone)]
pub struct Simulator {
    state: UavState,
    config: SimConfig,
}

impl Simulator {
    pub fn new(config: SimConfig) -> Self {
        Simulator {
            state: UavState::initial(),
            config,
        }
    }

    pub fn state(&self) -> &UavState {
        &self.state
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    /// Executes one action. On error the state is left unchanged.
    pub fn step(&mut self, command: &Command) -> Result<Transition, ActionError> {
        let (next, delta) = apply(&self.state, command, &self.config)?;
        self.state = next;
        Ok(delta)
    }
}
