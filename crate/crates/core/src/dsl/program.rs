use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use super::ops::{Function, Lambda, Operator};
use super::value::ValueType;
use super::vocab::Statement;

/// Maximum number of program inputs.
pub const MAX_INPUTS: usize = 3;

/// A straight-line program: input declarations followed by statements whose
/// arguments index program variables (inputs first, then one variable per
/// statement, in order).
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Program {
    pub inputs: Vec<ValueType>,
    pub statements: Vec<Statement>,
}

impl Program {
    pub fn new(inputs: Vec<ValueType>, statements: Vec<Statement>) -> Self {
        Self { inputs, statements }
    }

    pub fn len(&self) -> usize {
        self.statements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.statements.is_empty()
    }

    pub fn num_vars(&self) -> usize {
        self.inputs.len() + self.statements.len()
    }

    /// Static type of every variable, derived from function signatures.
    pub fn var_types(&self) -> Vec<ValueType> {
        let mut types = self.inputs.clone();
        types.extend(self.statements.iter().map(|s| s.op.function.output_type()));
        types
    }

    /// True if each statement only reads previously defined variables.
    pub fn is_well_scoped(&self) -> bool {
        self.statements
            .iter()
            .enumerate()
            .all(|(i, s)| s.args().iter().all(|&a| a < self.inputs.len() + i))
    }

    /// True if each statement's argument types match its function signature.
    pub fn is_well_typed(&self) -> bool {
        let types = self.var_types();
        self.is_well_scoped()
            && self.statements.iter().all(|s| {
                s.args().iter().zip(s.op.function.arg_types()).all(|(&a, t)| types[a] == *t)
            })
    }

    pub fn output_type(&self) -> Option<ValueType> {
        self.statements.last().map(|s| s.op.function.output_type())
    }

    /// The first `len` statements as a program.
    pub fn prefix(&self, len: usize) -> Program {
        Program { inputs: self.inputs.clone(), statements: self.statements[..len].to_vec() }
    }
}

/// Canonical variable name for a variable index: `a`..`z`, then `aa`, `ab`, ….
pub fn variable_name(index: usize) -> String {
    let mut n = index + 1;
    let mut out = Vec::new();
    while n > 0 {
        n -= 1;
        out.push(b'a' + (n % 26) as u8);
        n /= 26;
    }
    out.reverse();
    String::from_utf8(out).unwrap()
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("line {line}, column {column}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

fn is_ident(s: &str) -> bool {
    !s.is_empty()
        && s.chars().next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Parses the line-oriented program text format.
pub fn parse_program(text: &str) -> Result<Program, ParseError> {
    let mut names: HashMap<String, usize> = HashMap::new();
    let mut inputs = Vec::new();
    let mut statements = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let err = |column: usize, message: String| ParseError { line, column, message };
        let Some(arrow) = raw.find(" <- ") else {
            return Err(err(1, "expected `<ident> <- ...`".into()));
        };
        let lhs = &raw[..arrow];
        if !is_ident(lhs) {
            return Err(err(1, format!("invalid identifier `{lhs}`")));
        }
        if names.contains_key(lhs) {
            return Err(err(1, format!("`{lhs}` is already defined")));
        }

        let rhs_start = arrow + 4;
        let mut tokens = Vec::new();
        let mut offset = rhs_start;
        for tok in raw[rhs_start..].split(' ') {
            tokens.push((offset + 1, tok));
            offset += tok.len() + 1;
        }
        if let Some(&(col, _)) = tokens.iter().find(|(_, t)| t.is_empty()) {
            return Err(err(col, "unexpected whitespace".into()));
        }
        let (head_col, head) = tokens[0];

        match head {
            "LIST" | "INT" => {
                if tokens.len() > 1 {
                    return Err(err(tokens[1].0, "input declarations take no arguments".into()));
                }
                if !statements.is_empty() {
                    return Err(err(head_col, "inputs must precede statements".into()));
                }
                if inputs.len() == MAX_INPUTS {
                    return Err(err(head_col, format!("at most {MAX_INPUTS} inputs")));
                }
                inputs.push(if head == "LIST" { ValueType::List } else { ValueType::Int });
            }
            _ => {
                let function = Function::from_name(head)
                    .ok_or_else(|| err(head_col, format!("unknown function `{head}`")))?;
                let mut rest = &tokens[1..];
                let lambda = match function.lambda_kind() {
                    None => None,
                    Some(kind) => {
                        let &(col, sym) = rest
                            .first()
                            .ok_or_else(|| err(raw.len() + 1, format!("{head} needs a lambda")))?;
                        let l = Lambda::from_symbol(sym)
                            .filter(|l| l.kind() == kind)
                            .ok_or_else(|| err(col, format!("invalid lambda `{sym}` for {head}")))?;
                        rest = &rest[1..];
                        Some(l)
                    }
                };
                let op = Operator::new(function, lambda).expect("lambda kind checked");
                if rest.len() != function.arity() {
                    let col = rest.get(function.arity()).map_or(raw.len() + 1, |t| t.0);
                    return Err(err(
                        col,
                        format!("{head} takes {} argument(s), got {}", function.arity(), rest.len()),
                    ));
                }
                let mut args = Vec::with_capacity(2);
                for &(col, name) in rest {
                    let idx =
                        names.get(name).ok_or_else(|| err(col, format!("undefined variable `{name}`")))?;
                    args.push(*idx);
                }
                statements.push(Statement::new(op, &args).expect("arity checked"));
            }
        }
        names.insert(lhs.to_string(), names.len());
    }

    if inputs.is_empty() {
        return Err(ParseError { line: 1, column: 1, message: "program declares no inputs".into() });
    }
    if statements.is_empty() {
        return Err(ParseError {
            line: text.lines().count().max(1),
            column: 1,
            message: "program has no statements".into(),
        });
    }
    Ok(Program { inputs, statements })
}

/// Canonical text: one line per declaration, variables named `a`, `b`, …
pub fn format_program(p: &Program) -> String {
    let mut out = String::new();
    for (i, t) in p.inputs.iter().enumerate() {
        out.push_str(&format!("{} <- {}\n", variable_name(i), t));
    }
    for (i, s) in p.statements.iter().enumerate() {
        out.push_str(&variable_name(p.inputs.len() + i));
        out.push_str(" <- ");
        out.push_str(&s.op.to_string());
        for &a in s.args() {
            out.push(' ');
            out.push_str(&variable_name(a));
        }
        out.push('\n');
    }
    out.pop();
    out
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_program(self))
    }
}

impl fmt::Debug for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Program({:?})", format_program(self))
    }
}

impl FromStr for Program {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_program(s)
    }
}

impl Serialize for Program {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&format_program(self))
    }
}

impl<'de> Deserialize<'de> for Program {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        parse_program(&text).map_err(serde::de::Error::custom)
    }
}
