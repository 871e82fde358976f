//! Per-example program synthesis over a DeepCoder-style integer-list DSL.
//!
//! The crate is organised bottom-up:
//!
//! - [`dsl`]: values, operators, statements, programs, the interpreter and
//!   the canonical text format.
//! - [`state`]: the N × (ν+1) program-state memory, the drop/execute
//!   transition and the numeric state encoding.
//! - [`nn`]: a small reverse-mode tensor tape, optimizers and checkpoints.
//! - [`encoder`]: the state-embedding network and its prediction heads.
//! - [`aggregator`]: execution-tuple keys and the cross-attention aggregator.
//! - [`search`]: beam search, complete anytime beam search, per-example
//!   searches, blending and the full synthesis pipeline.
//! - [`datagen`], [`training`], [`eval`]: data generation, model training
//!   and the experiment harness.

pub mod aggregator;
pub mod datagen;
pub mod dsl;
pub mod encoder;
pub mod eval;
pub mod nn;
pub mod search;
pub mod state;
pub mod training;

pub use dsl::{
    DslConfig, Example, ExecError, Function, Lambda, Operator, Program, Statement, Value,
    ValueType, Vocabulary,
};
