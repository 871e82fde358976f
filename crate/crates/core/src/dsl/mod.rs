//! The integer-list DSL.

mod interp;
mod ops;
mod program;
mod value;
mod vocab;

pub use interp::{apply_function, execute_program, satisfies, solution_score, ExecError, SolutionScore};
pub use ops::{Function, Lambda, LambdaKind, Operator};
pub use program::{format_program, parse_program, variable_name, ParseError, Program, MAX_INPUTS};
pub use value::{DslConfig, Example, Value, ValueType, INT_MAX, INT_MIN, MAX_LIST_LEN};
pub use vocab::{enumerate_vocabulary, Statement, Vocabulary};
