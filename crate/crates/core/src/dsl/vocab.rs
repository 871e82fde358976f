use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::ops::Operator;

/// An operator applied to argument slots.
///
/// Inside a [`Program`](super::Program) the arguments are program variable
/// indices; inside the search they are state slot indices. The vocabulary
/// index is only defined for the latter (all arguments `< ν`).
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Statement {
    pub op: Operator,
    args: [usize; 2],
    arity: u8,
}

impl Statement {
    /// Builds a statement; `None` if the argument count does not match the
    /// operator's arity.
    pub fn new(op: Operator, args: &[usize]) -> Option<Statement> {
        if args.len() != op.arity() {
            return None;
        }
        let mut a = [0; 2];
        a[..args.len()].copy_from_slice(args);
        Some(Statement { op, args: a, arity: args.len() as u8 })
    }

    pub fn args(&self) -> &[usize] {
        &self.args[..self.arity as usize]
    }

    /// Same operator with remapped arguments.
    pub fn with_args(&self, args: &[usize]) -> Option<Statement> {
        Statement::new(self.op, args)
    }
}

impl fmt::Debug for Statement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.op)?;
        for a in self.args() {
            write!(f, " #{a}")?;
        }
        Ok(())
    }
}

/// Canonically ordered operator and statement vocabularies for a given ν.
#[derive(Clone, Debug)]
pub struct Vocabulary {
    slots: usize,
    operators: Vec<Operator>,
    statements: Vec<Statement>,
    index: HashMap<Statement, usize>,
}

/// Enumerates every operator and every statement over `slots` variable slots.
///
/// Ordering: operators in canonical order; for each operator, argument tuples
/// in lexicographic order.
pub fn enumerate_vocabulary(slots: usize) -> (Vec<Operator>, Vec<Statement>) {
    let operators = Operator::all();
    let mut statements = Vec::with_capacity(30 * slots + 8 * slots * slots);
    for &op in &operators {
        match op.arity() {
            1 => statements.extend((0..slots).map(|a| Statement::new(op, &[a]).unwrap())),
            2 => {
                for a in 0..slots {
                    for b in 0..slots {
                        statements.push(Statement::new(op, &[a, b]).unwrap());
                    }
                }
            }
            n => unreachable!("arity {n}"),
        }
    }
    (operators, statements)
}

impl Vocabulary {
    pub fn new(slots: usize) -> Self {
        assert!(slots >= 1, "at least one variable slot is required");
        let (operators, statements) = enumerate_vocabulary(slots);
        let index = statements.iter().enumerate().map(|(i, s)| (*s, i)).collect();
        Self { slots, operators, statements, index }
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn operators(&self) -> &[Operator] {
        &self.operators
    }

    pub fn statements(&self) -> &[Statement] {
        &self.statements
    }

    pub fn n_statements(&self) -> usize {
        self.statements.len()
    }

    pub fn n_operators(&self) -> usize {
        self.operators.len()
    }

    pub fn statement(&self, index: usize) -> Statement {
        self.statements[index]
    }

    /// Index of a slot-level statement, `None` if an argument is `≥ ν`.
    pub fn index_of(&self, stmt: &Statement) -> Option<usize> {
        self.index.get(stmt).copied()
    }
}
