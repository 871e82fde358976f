mod common;

use proptest::prelude::*;

use common::random_record;
use pexsynth::dsl::{execute_program, DslConfig, Program};
use pexsynth::datagen::DatasetRecord;
use pexsynth::state::{decode_state, encode_state, first_set, replay, ProgramState, ReplayStep, StateError};

/// Index of the last statement reading each variable (`None` if never read).
fn last_uses(p: &Program) -> Vec<Option<usize>> {
    let mut last = vec![None; p.num_vars()];
    for (i, s) in p.statements.iter().enumerate() {
        for &a in s.args() {
            last[a] = Some(i);
        }
    }
    last
}

/// Replay with lowest-slot drops; `None` when the memory fills with every
/// variable still live.
fn replayed(r: &DatasetRecord) -> Option<(Vec<ReplayStep>, ProgramState)> {
    match replay(&r.program, &r.examples, &DslConfig::default(), first_set) {
        Ok(x) => Some(x),
        Err(StateError::NoDroppableSlot) => None,
        Err(e) => panic!("replay failed: {e}"),
    }
}

fn snapshot(s: &ProgramState) -> Vec<Vec<Option<pexsynth::dsl::Value>>> {
    (0..s.num_examples())
        .map(|e| {
            let mut row = s.row(e).to_vec();
            row.push(Some(s.output(e).clone()));
            row
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn replay_matches_interpreter(len in 1usize..=10, seed in any::<u64>()) {
        let Some(r) = random_record(len, seed) else { return Ok(()) };
        let Some((steps, last)) = replayed(&r) else { return Ok(()) };
        prop_assert_eq!(steps.len(), r.program.len());
        let slot = last.last_slot().unwrap();
        for (e, x) in r.examples.iter().enumerate() {
            let expected = execute_program(&r.program, &x.inputs).unwrap();
            prop_assert_eq!(last.row(e)[slot].as_ref(), Some(&expected));
            prop_assert_eq!(&expected, &x.output);
        }
    }

    #[test]
    fn drop_exec_touches_only_its_target(len in 1usize..=10, seed in any::<u64>()) {
        let Some(r) = random_record(len, seed) else { return Ok(()) };
        let Some((steps, last)) = replayed(&r) else { return Ok(()) };
        let mut states: Vec<&ProgramState> = steps.iter().map(|s| &s.state).collect();
        states.push(&last);
        for w in states.windows(2) {
            let (a, b) = (w[0], w[1]);
            prop_assert_eq!(a.num_examples(), b.num_examples());
            let target = b.last_slot().unwrap();
            for e in 0..a.num_examples() {
                prop_assert_eq!(a.output(e), b.output(e));
                for j in 0..a.slots() {
                    if j != target {
                        prop_assert_eq!(&a.row(e)[j], &b.row(e)[j]);
                    }
                }
            }
        }
    }

    #[test]
    fn drop_targets_match_liveness_scan(len in 1usize..=10, seed in any::<u64>()) {
        let Some(r) = random_record(len, seed) else { return Ok(()) };
        let Some((steps, _)) = replayed(&r) else { return Ok(()) };
        let last = last_uses(&r.program);
        for (t, step) in steps.iter().enumerate() {
            for (slot, var) in step.state.slot_vars().iter().enumerate() {
                let dead = match var {
                    Some(v) => last[*v].is_none_or(|u| u <= t),
                    None => false,
                };
                prop_assert_eq!(step.drop_target[slot] == 1.0, dead, "step {} slot {}", t, slot);
            }
        }
    }

    #[test]
    fn encode_decode_identity(len in 1usize..=10, seed in any::<u64>()) {
        let Some(r) = random_record(len, seed) else { return Ok(()) };
        let cfg = DslConfig::default();
        let Some((steps, last)) = replayed(&r) else { return Ok(()) };
        for s in steps.iter().map(|s| &s.state).chain(std::iter::once(&last)) {
            let t = encode_state(s, &cfg);
            prop_assert_eq!(t.shape(), [cfg.examples, cfg.slots + 1, cfg.max_list_len + 2]);
            prop_assert_eq!(decode_state(&t, &cfg), snapshot(s));
        }
    }
}
