use proptest::prelude::*;

use pexsynth::datagen::{build_dataset, mutual_equivalences, verify_records, DatasetConfig, GenConfig};
use pexsynth::dsl::satisfies;

fn small(seed: u64) -> DatasetConfig {
    DatasetConfig {
        gen: GenConfig::default(),
        train: vec![(1, 8), (2, 30), (3, 30)],
        test: vec![(2, 10), (3, 10)],
        attempts_per_program: 30,
        seed,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn no_two_records_are_mutually_equivalent(seed in any::<u64>()) {
        let ds = build_dataset(&small(seed));
        prop_assert!(verify_records(&ds.train).is_ok());
        prop_assert!(verify_records(&ds.test).is_ok());
        prop_assert!(mutual_equivalences(&ds.train, &ds.test).is_empty());
        let all: Vec<_> = ds.train.iter().chain(&ds.test).collect();
        for (i, a) in all.iter().enumerate() {
            for b in &all[i + 1..] {
                if a.program.inputs != b.program.inputs {
                    continue;
                }
                prop_assert!(!b.examples.iter().all(|e| satisfies(&a.program, e)));
                prop_assert!(!a.examples.iter().all(|e| satisfies(&b.program, e)));
            }
        }
    }
}

#[test]
fn same_seed_gives_same_dataset() {
    let a = build_dataset(&small(3));
    let b = build_dataset(&small(3));
    assert_eq!(a.train, b.train);
    assert_eq!(a.test, b.test);
    assert_eq!(a.stats, b.stats);
}
