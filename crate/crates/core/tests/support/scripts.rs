//! Random flight-script builders driven by plain integer sequences, so that
//! both proptest strategies and seeded generators can feed them.

#![allow(dead_code)]

const VERBS: [&str; 10] = [
    "takeoff", "land", "forward", "backward", "left", "right", "up", "down", "turn_cw", "turn_ccw",
];

fn arg(hundredths: u32) -> f64 {
    f64::from(hundredths.max(1)) / 100.0
}

/// Any parseable script; runtime errors are likely.
pub fn raw_script(ops: &[(u8, u32)]) -> String {
    ops.iter()
        .map(|&(v, h)| {
            let verb = VERBS[v as usize % VERBS.len()];
            if verb == "land" {
                verb.to_string()
            } else {
                format!("{verb}({})", arg(h))
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// A script that executes without errors under the default safety envelope.
pub fn safe_script(ops: &[(u8, u32)]) -> String {
    let mut lines = Vec::new();
    let mut altitude = 0.0f64;
    let mut airborne = false;
    for &(v, h) in ops {
        let a = arg(h);
        if !airborne {
            let climb = a.clamp(0.5, 100.0);
            lines.push(format!("takeoff({climb})"));
            altitude = climb;
            airborne = true;
            continue;
        }
        match VERBS[v as usize % VERBS.len()] {
            "takeoff" | "land" => {
                lines.push("land".to_string());
                altitude = 0.0;
                airborne = false;
            }
            "up" => {
                let room = 119.99 - altitude;
                if room >= 0.01 {
                    let step = (a.min(room).min(100.0) * 100.0).floor() / 100.0;
                    if step > 0.0 {
                        lines.push(format!("up({step})"));
                        altitude += step;
                    }
                }
            }
            "down" => {
                let room = altitude - 0.01;
                if room >= 0.01 {
                    let step = (a.min(room).min(100.0) * 100.0).floor() / 100.0;
                    if step > 0.0 {
                        lines.push(format!("down({step})"));
                        altitude -= step;
                    }
                }
            }
            verb @ ("forward" | "backward" | "left" | "right") => {
                lines.push(format!("{verb}({})", a.min(100.0)));
            }
            verb => lines.push(format!("{verb}({a})")),
        }
    }
    if lines.is_empty() {
        lines.push("takeoff(5)".to_string());
    }
    lines.join("\n")
}
