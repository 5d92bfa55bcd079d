//! Ground-truth matching: completeness and success.
//!
//! Completeness credits the longest order-preserving common subsequence of
//! executed and ground-truth transitions, compared component-wise within a
//! tolerance. Success additionally requires equal lengths, so extra actions
//! never count as success.

use serde::{Deserialize, Serialize};

use crate::sim::Transition;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Matcher {
    /// Longest common subsequence.
    #[default]
    Lcs,
    /// Leading run of matching steps; everything after the first error is lost.
    Prefix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RotationMatch {
    /// Compare the commanded signed rotation (450 != 90).
    #[default]
    Signed,
    /// Compare rotations modulo 360.
    Modulo360,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchConfig {
    pub position_tolerance: f64,
    pub yaw_tolerance: f64,
    pub matcher: Matcher,
    pub rotation: RotationMatch,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            position_tolerance: 0.1,
            yaw_tolerance: 1.0,
            matcher: Matcher::Lcs,
            rotation: RotationMatch::Signed,
        }
    }
}

impl MatchConfig {
    /// Exact comparison; used to check that tolerances matter.
    pub fn exact() -> Self {
        MatchConfig {
            position_tolerance: 0.0,
            yaw_tolerance: 0.0,
            ..MatchConfig::default()
        }
    }
}

/// Component-wise equality within tolerance.
pub fn matches(a: &Transition, b: &Transition, config: &MatchConfig) -> bool {
    let pos = config.position_tolerance;
    let yaw_diff = match config.rotation {
        RotationMatch::Signed => (a.d_yaw - b.d_yaw).abs(),
        RotationMatch::Modulo360 => {
            let d = (a.d_yaw - b.d_yaw).rem_euclid(360.0);
            d.min(360.0 - d)
        }
    };
    (a.d_north - b.d_north).abs() <= pos
        && (a.d_east - b.d_east).abs() <= pos
        && (a.d_down - b.d_down).abs() <= pos
        && yaw_diff <= config.yaw_tolerance
}

/// Length of the longest common subsequence under [`matches`].
pub fn lcs_len(a: &[Transition], b: &[Transition], config: &MatchConfig) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if matches(x, y, config) {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn prefix_len(a: &[Transition], b: &[Transition], config: &MatchConfig) -> usize {
    a.iter()
        .zip(b)
        .take_while(|(x, y)| matches(x, y, config))
        .count()
}

/// Number of ground-truth actions credited as correctly executed.
pub fn correct_actions(
    executed: &[Transition],
    ground_truth: &[Transition],
    config: &MatchConfig,
) -> usize {
    match config.matcher {
        Matcher::Lcs => lcs_len(executed, ground_truth, config),
        Matcher::Prefix => prefix_len(executed, ground_truth, config),
    }
}

/// Correct actions over ground-truth length, in `[0, 1]`. An empty ground
/// truth scores 0.
pub fn completeness(
    executed: &[Transition],
    ground_truth: &[Transition],
    config: &MatchConfig,
) -> f64 {
    if ground_truth.is_empty() {
        return 0.0;
    }
    correct_actions(executed, ground_truth, config) as f64 / ground_truth.len() as f64
}

/// 1 when every ground-truth action was executed, in order, with nothing extra.
pub fn success(executed: &[Transition], ground_truth: &[Transition], config: &MatchConfig) -> u8 {
    let full = !ground_truth.is_empty()
        && correct_actions(executed, ground_truth, config) == ground_truth.len();
    u8::from(full && executed.len() == ground_truth.len())
}
