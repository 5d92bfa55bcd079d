//! Property tests for the simulator, parser, observation encoding and metrics.

#[path = "support/scripts.rs"]
mod scripts;

use proptest::prelude::*;
use scripts::{raw_script, safe_script};
use skyloop::evalharness::{
    completeness, lcs_len, success, MatchConfig, RunRow, ScoreReport, Tier,
};
use skyloop::flightlang::{parse, run, StepOutcome};
use skyloop::looprunner::LoopOutcome;
use skyloop::semantics::{parse_observation, render_numeric, transform, FormatConfig};
use skyloop::sim::{body_to_ned, compose, normalize_yaw, BodyDirection, SimConfig, Transition};

fn ops() -> impl Strategy<Value = Vec<(u8, u32)>> {
    prop::collection::vec((any::<u8>(), 1u32..15_000), 1..25)
}

fn transitions(min: usize) -> impl Strategy<Value = Vec<Transition>> {
    let alphabet = vec![
        Transition::new(0.0, 0.0, -5.0, 0.0),
        Transition::new(3.0, 0.0, 0.0, 0.0),
        Transition::new(0.0, -3.0, 0.0, 0.0),
        Transition::new(0.0, 0.0, 0.0, 90.0),
        Transition::new(0.0, 0.0, 0.0, -90.0),
        Transition::new(0.0, 0.0, 5.0, 0.0),
    ];
    prop::collection::vec(prop::sample::select(alphabet), min..7)
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::with_cases(256) })]

    #[test]
    fn execution_is_deterministic(ops in ops()) {
        let script = parse(&raw_script(&ops)).unwrap();
        let cfg = SimConfig::default();
        prop_assert_eq!(run(&script, &cfg), run(&script, &cfg));
    }

    #[test]
    fn states_stay_valid(ops in ops()) {
        let trace = run(&parse(&raw_script(&ops)).unwrap(), &SimConfig::default());
        for step in &trace.steps {
            prop_assert!(step.state_after.is_valid(), "{:?}", step.state_after);
            prop_assert!((0.0..360.0).contains(&step.state_after.yaw));
            if !step.state_after.airborne {
                prop_assert_eq!(step.state_after.down, 0.0);
            }
            prop_assert!(step.state_after.down <= 0.0);
            prop_assert!(-step.state_after.down <= 120.0);
        }
    }

    #[test]
    fn failed_actions_change_nothing(ops in ops()) {
        let trace = run(&parse(&raw_script(&ops)).unwrap(), &SimConfig::default());
        for step in trace.steps.iter().filter(|s| matches!(s.outcome, StepOutcome::Failed(_))) {
            prop_assert_eq!(step.state_before, step.state_after);
        }
        for pair in trace.steps.windows(2) {
            prop_assert_eq!(pair[0].state_after, pair[1].state_before);
        }
    }

    #[test]
    fn transitions_are_conserved(ops in ops()) {
        let trace = run(&parse(&safe_script(&ops)).unwrap(), &SimConfig::default());
        prop_assert_eq!(trace.error_count(), 0);
        let ts = trace.transitions();
        let total = compose(&ts);
        let fin = trace.final_state();
        prop_assert!((total.d_north - (fin.north - trace.initial.north)).abs() <= 1e-9);
        prop_assert!((total.d_east - (fin.east - trace.initial.east)).abs() <= 1e-9);
        prop_assert!((total.d_down - (fin.down - trace.initial.down)).abs() <= 1e-9);
        let yaw_gap = (normalize_yaw(total.d_yaw) - fin.yaw).abs();
        prop_assert!(yaw_gap <= 1e-9 || (360.0 - yaw_gap) <= 1e-9);
        for t in &ts {
            if t.d_yaw != 0.0 {
                prop_assert!(!t.has_translation());
            } else {
                prop_assert!(t.has_translation());
            }
        }
    }

    #[test]
    fn body_moves_preserve_distance(yaw in 0.0f64..360.0, dist in 0.01f64..100.0, dir in 0usize..4) {
        let d = [BodyDirection::Forward, BodyDirection::Backward, BodyDirection::Left, BodyDirection::Right][dir];
        let (n, e, down) = body_to_ned(yaw, d, dist);
        prop_assert_eq!(down, 0.0);
        prop_assert!((n.hypot(e) - dist).abs() < 1e-9);
    }

    #[test]
    fn parse_never_panics(src in ".{0,200}") {
        match parse(&src) {
            Ok(script) => prop_assert!(!script.commands.is_empty()),
            Err(e) => {
                prop_assert!(e.line >= 1 && e.column >= 1);
                prop_assert!(e.line <= src.lines().count().max(1));
            }
        }
    }

    #[test]
    fn source_round_trips(ops in ops()) {
        let script = parse(&raw_script(&ops)).unwrap();
        let again = parse(&script.to_source()).unwrap();
        prop_assert_eq!(script.commands.len(), again.commands.len());
        for (a, b) in script.commands.iter().zip(&again.commands) {
            prop_assert_eq!(a.verb, b.verb);
            prop_assert_eq!(a.argument, b.argument);
        }
    }

    #[test]
    fn observation_inverts(ops in ops()) {
        let trace = run(&parse(&raw_script(&ops)).unwrap(), &SimConfig::default());
        let obs = transform(&trace, &FormatConfig::default());
        prop_assert!(!obs.rendered.contains("-0.00"));
        let back = parse_observation(&obs.rendered).unwrap();
        prop_assert_eq!(back.len(), trace.steps.len());
        for (got, step) in back.iter().zip(&trace.steps) {
            match step.transition() {
                Some(t) => {
                    prop_assert!(!got.errored);
                    for (x, y) in got.transition.to_array().iter().zip(t.to_array()) {
                        prop_assert!((x - y).abs() <= 0.005 + 1e-9, "{:?} vs {:?}", got.transition, t);
                    }
                }
                None => prop_assert!(got.errored),
            }
        }
    }

    #[test]
    fn numeric_rendering_has_one_line_per_action(ops in ops()) {
        let trace = run(&parse(&raw_script(&ops)).unwrap(), &SimConfig::default());
        prop_assert_eq!(render_numeric(&trace).lines().count(), trace.steps.len());
    }

    #[test]
    fn completeness_is_reflexive(x in transitions(1)) {
        let cfg = MatchConfig::default();
        prop_assert_eq!(completeness(&x, &x, &cfg), 1.0);
        prop_assert_eq!(success(&x, &x, &cfg), 1);
    }

    #[test]
    fn deleting_a_step_never_helps(ex in transitions(1), gt in transitions(1), k in any::<prop::sample::Index>()) {
        let cfg = MatchConfig::default();
        let before = completeness(&ex, &gt, &cfg);
        let mut shorter = ex.clone();
        shorter.remove(k.index(ex.len()));
        let after = completeness(&shorter, &gt, &cfg);
        prop_assert!(after <= before);
        prop_assert!(after >= before - 1.0 / gt.len() as f64 - 1e-12);
    }

    #[test]
    fn lcs_is_symmetric(a in transitions(0), b in transitions(0)) {
        let cfg = MatchConfig::default();
        prop_assert_eq!(lcs_len(&a, &b, &cfg), lcs_len(&b, &a, &cfg));
    }

    #[test]
    fn success_means_goal_reached(ex in transitions(0), gt in transitions(0)) {
        let cfg = MatchConfig::default();
        let s = success(&ex, &gt, &cfg);
        let c = completeness(&ex, &gt, &cfg);
        prop_assert_eq!(s == 1, !gt.is_empty() && c == 1.0 && ex.len() == gt.len());
        if s == 1 {
            let (a, b) = (compose(&ex), compose(&gt));
            let slack = cfg.position_tolerance * gt.len() as f64 + 1e-9;
            prop_assert!((a.d_north - b.d_north).abs() <= slack);
            prop_assert!((a.d_east - b.d_east).abs() <= slack);
            prop_assert!((a.d_down - b.d_down).abs() <= slack);
        }
    }

    #[test]
    fn perturbation_beyond_tolerance_breaks_success(gt in transitions(1), k in any::<prop::sample::Index>()) {
        let cfg = MatchConfig::default();
        let mut ex = gt.clone();
        let i = k.index(gt.len());
        ex[i].d_north += 2.0 * cfg.position_tolerance + 0.01;
        prop_assert_eq!(success(&ex, &gt, &cfg), 0);
        prop_assert!(completeness(&ex, &gt, &cfg) <= 1.0);
    }

    #[test]
    fn aggregates_ignore_row_order(
        values in prop::collection::vec((0usize..5, 0u32..4, 0u32..7), 1..30),
        seed in any::<u64>(),
    ) {
        let rows: Vec<RunRow> = values
            .iter()
            .enumerate()
            .map(|(i, &(task, hits, iters))| RunRow {
                task_id: format!("T{task}"),
                tier: if task % 2 == 0 { Tier::Basic } else { Tier::Advanced },
                repetition: i as u32 + 1,
                outcome: LoopOutcome::Accepted,
                iterations_used: iters,
                completeness: f64::from(hits) / 3.0,
                success: u8::from(hits == 3),
                faulted: false,
            })
            .collect();
        let mut shuffled = rows.clone();
        let n = shuffled.len();
        let mut state = seed;
        for i in (1..n).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (state >> 33) as usize % (i + 1));
        }
        let a = ScoreReport::from_rows(&rows);
        let b = ScoreReport::from_rows(&shuffled);
        prop_assert_eq!(&a, &b);
        prop_assert!((0.0..=1.0).contains(&a.aggregate.success_rate));
        prop_assert!((0.0..=1.0).contains(&a.aggregate.completeness));
    }
}
