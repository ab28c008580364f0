#![allow(dead_code)]

pub mod trees;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use synchron::*;

/// `n` button events on drivers 0-3 for four_button. Each button alternates
/// press and release. Instants are distinct: events sharing a tick reach the
/// driver buffers together and are then served in choice order, which a
/// per-input transition table does not describe.
pub fn four_button_script(seed: u64, n: usize) -> StimulusScript {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut down = [false; 4];
    let mut t: Time = 0;
    let entries = (0..n)
        .map(|_| {
            t += [1, 2, 50, 1_000][rng.random_range(0..4)];
            let b = rng.random_range(0..4usize);
            down[b] = !down[b];
            Stimulus {
                at: t,
                driver: DriverId(b as u32),
                data: down[b] as u32,
            }
        })
        .collect();
    StimulusScript::new(entries)
}

/// Presses of buttons `a` then `b` for complex_fsm.
pub fn pair_script(a: u32, b: u32) -> StimulusScript {
    StimulusScript::new(vec![
        Stimulus {
            at: 10_000,
            driver: DriverId(a),
            data: 1,
        },
        Stimulus {
            at: 20_000,
            driver: DriverId(b),
            data: 1,
        },
    ])
}

pub fn audited(stimulus: Option<StimulusScript>) -> harness::CaseOptions {
    harness::CaseOptions {
        stimulus,
        audit: true,
        ..Default::default()
    }
}
