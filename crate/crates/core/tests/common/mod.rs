#![allow(dead_code)]

pub mod cases;

use pexsynth::datagen::{gen_examples, gen_program, DatasetRecord, GenConfig};
use pexsynth::dsl::{Example, Value};
use pexsynth::nn::seeded_rng;

pub fn list(xs: &[i32]) -> Value {
    Value::List(xs.to_vec())
}

pub fn ex(inputs: Vec<Value>, output: Value) -> Example {
    Example::new(inputs, output)
}

/// A generated record of the given length, or `None` if generation gave up.
pub fn random_record(length: usize, seed: u64) -> Option<DatasetRecord> {
    let cfg = GenConfig::default();
    let mut rng = seeded_rng(seed);
    let program = gen_program(length, &mut rng, &cfg).ok()?;
    let examples = gen_examples(&program, cfg.dsl.examples, &mut rng, &cfg)?;
    Some(DatasetRecord { program, examples })
}
