use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ops::{Function, Operator};
use super::program::Program;
use super::value::{Example, Value, INT_MAX, INT_MIN, MAX_LIST_LEN};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Error, Serialize, Deserialize)]
pub enum ExecError {
    #[error("empty input")]
    EmptyInput,
    #[error("index out of bounds")]
    OutOfBounds,
    #[error("argument type mismatch")]
    TypeMismatch,
    #[error("value outside the DSL range")]
    RangeViolation,
    #[error("read from an empty slot")]
    NullSlot,
}

fn check_int(v: i64) -> Result<i32, ExecError> {
    if (INT_MIN as i64..=INT_MAX as i64).contains(&v) {
        Ok(v as i32)
    } else {
        Err(ExecError::RangeViolation)
    }
}

fn check_list(xs: Vec<i64>) -> Result<Value, ExecError> {
    if xs.len() > MAX_LIST_LEN {
        return Err(ExecError::RangeViolation);
    }
    xs.into_iter().map(check_int).collect::<Result<Vec<_>, _>>().map(Value::List)
}

fn int_arg(v: &Value) -> Result<i64, ExecError> {
    v.as_int().map(i64::from).ok_or(ExecError::TypeMismatch)
}

fn list_arg(v: &Value) -> Result<&[i32], ExecError> {
    v.as_list().ok_or(ExecError::TypeMismatch)
}

/// Applies one operator to its arguments.
pub fn apply_function(op: Operator, args: &[&Value]) -> Result<Value, ExecError> {
    use Function::*;
    if args.len() != op.arity() {
        return Err(ExecError::TypeMismatch);
    }
    let lambda = op.lambda;
    match op.function {
        Head | Tail | Minimum | Maximum => {
            let xs = list_arg(args[0])?;
            let v = match op.function {
                Head => xs.first().copied(),
                Tail => xs.last().copied(),
                Minimum => xs.iter().min().copied(),
                _ => xs.iter().max().copied(),
            };
            v.map(Value::Int).ok_or(ExecError::EmptyInput)
        }
        Take | Drop => {
            let n = int_arg(args[0])?;
            let xs = list_arg(args[1])?;
            let k = n.clamp(0, xs.len() as i64) as usize;
            let out = if op.function == Take { &xs[..k] } else { &xs[k..] };
            Ok(Value::List(out.to_vec()))
        }
        Access => {
            let n = int_arg(args[0])?;
            let xs = list_arg(args[1])?;
            if n < 0 || n >= xs.len() as i64 {
                return Err(ExecError::OutOfBounds);
            }
            Ok(Value::Int(xs[n as usize]))
        }
        Reverse => {
            let mut xs = list_arg(args[0])?.to_vec();
            xs.reverse();
            Ok(Value::List(xs))
        }
        Sort => {
            let mut xs = list_arg(args[0])?.to_vec();
            xs.sort_unstable();
            Ok(Value::List(xs))
        }
        Sum => {
            let xs = list_arg(args[0])?;
            check_int(xs.iter().map(|&x| x as i64).sum()).map(Value::Int)
        }
        Map => {
            let f = lambda.ok_or(ExecError::TypeMismatch)?;
            let xs = list_arg(args[0])?;
            check_list(xs.iter().map(|&x| f.apply_unary(x as i64)).collect())
        }
        Filter => {
            let f = lambda.ok_or(ExecError::TypeMismatch)?;
            let xs = list_arg(args[0])?;
            Ok(Value::List(xs.iter().copied().filter(|&x| f.apply_predicate(x as i64)).collect()))
        }
        Count => {
            let f = lambda.ok_or(ExecError::TypeMismatch)?;
            let xs = list_arg(args[0])?;
            Ok(Value::Int(xs.iter().filter(|&&x| f.apply_predicate(x as i64)).count() as i32))
        }
        ZipWith => {
            let f = lambda.ok_or(ExecError::TypeMismatch)?;
            let xs = list_arg(args[0])?;
            let ys = list_arg(args[1])?;
            check_list(xs.iter().zip(ys).map(|(&x, &y)| f.apply_binary(x as i64, y as i64)).collect())
        }
        ScanL1 => {
            let f = lambda.ok_or(ExecError::TypeMismatch)?;
            let xs = list_arg(args[0])?;
            let mut out = Vec::with_capacity(xs.len());
            let mut acc: Option<i64> = None;
            for &x in xs {
                let next = match acc {
                    None => x as i64,
                    Some(a) => f.apply_binary(a, x as i64),
                };
                // Out-of-range partial folds are reported rather than carried.
                check_int(next)?;
                out.push(next);
                acc = Some(next);
            }
            check_list(out)
        }
    }
}

/// Executes `p` on one input tuple and returns the value of its last line.
pub fn execute_program(p: &Program, inputs: &[Value]) -> Result<Value, ExecError> {
    if inputs.len() != p.inputs.len() {
        return Err(ExecError::TypeMismatch);
    }
    if inputs.iter().zip(&p.inputs).any(|(v, t)| v.value_type() != *t) {
        return Err(ExecError::TypeMismatch);
    }
    let mut env: Vec<Value> = inputs.to_vec();
    for stmt in &p.statements {
        let mut args = [&Value::Int(0), &Value::Int(0)];
        for (slot, &var) in stmt.args().iter().enumerate() {
            args[slot] = env.get(var).ok_or(ExecError::NullSlot)?;
        }
        let v = apply_function(stmt.op, &args[..stmt.args().len()])?;
        env.push(v);
    }
    if p.statements.is_empty() {
        return Err(ExecError::NullSlot);
    }
    Ok(env.pop().expect("non-empty program"))
}

/// True iff `p` maps the example's inputs exactly to its output.
pub fn satisfies(p: &Program, example: &Example) -> bool {
    matches!(execute_program(p, &example.inputs), Ok(v) if v == example.output)
}

/// Fraction of examples a program satisfies, with the satisfied indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionScore {
    pub score: f64,
    /// Zero-based indices of satisfied examples, ascending.
    pub satisfied: Vec<usize>,
}

pub fn solution_score(p: &Program, examples: &[Example]) -> SolutionScore {
    assert!(!examples.is_empty(), "solution score needs at least one example");
    let satisfied: Vec<usize> =
        examples.iter().enumerate().filter(|(_, e)| satisfies(p, e)).map(|(i, _)| i).collect();
    SolutionScore { score: satisfied.len() as f64 / examples.len() as f64, satisfied }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::Lambda;

    fn list(xs: &[i32]) -> Value {
        Value::List(xs.to_vec())
    }

    fn op(f: Function) -> Operator {
        Operator::first_order(f)
    }

    #[test]
    fn tail_is_last_element() {
        assert_eq!(apply_function(op(Function::Tail), &[&list(&[1, 2, 3])]), Ok(Value::Int(3)));
    }

    #[test]
    fn scanl1_running_sum() {
        let o = Operator::higher_order(Function::ScanL1, Lambda::Add);
        assert_eq!(apply_function(o, &[&list(&[1, 2, 3])]), Ok(list(&[1, 3, 6])));
    }

    #[test]
    fn take_beyond_length_returns_whole_list() {
        let xs = list(&[8, 10, 12, 4]);
        assert_eq!(apply_function(op(Function::Take), &[&Value::Int(8), &xs]), Ok(xs.clone()));
        assert_eq!(apply_function(op(Function::Take), &[&Value::Int(-3), &xs]), Ok(list(&[])));
        assert_eq!(apply_function(op(Function::Drop), &[&Value::Int(1), &xs]), Ok(list(&[10, 12, 4])));
        assert_eq!(apply_function(op(Function::Drop), &[&Value::Int(9), &xs]), Ok(list(&[])));
    }

    #[test]
    fn sum_of_empty_is_zero() {
        assert_eq!(apply_function(op(Function::Sum), &[&list(&[])]), Ok(Value::Int(0)));
    }

    #[test]
    fn error_paths() {
        let empty = list(&[]);
        for f in [Function::Head, Function::Tail, Function::Minimum, Function::Maximum] {
            assert_eq!(apply_function(op(f), &[&empty]), Err(ExecError::EmptyInput));
        }
        let xs = list(&[1, 2]);
        assert_eq!(apply_function(op(Function::Access), &[&Value::Int(2), &xs]), Err(ExecError::OutOfBounds));
        assert_eq!(apply_function(op(Function::Access), &[&Value::Int(-1), &xs]), Err(ExecError::OutOfBounds));
        assert_eq!(apply_function(op(Function::Reverse), &[&Value::Int(1)]), Err(ExecError::TypeMismatch));
        let sq = Operator::higher_order(Function::Map, Lambda::Square);
        assert_eq!(apply_function(sq, &[&list(&[16])]), Err(ExecError::RangeViolation));
        assert_eq!(apply_function(sq, &[&list(&[15])]), Ok(list(&[225])));
        let mul = Operator::higher_order(Function::ScanL1, Lambda::Mul);
        assert_eq!(apply_function(mul, &[&list(&[100, 100, 0])]), Err(ExecError::RangeViolation));
    }

    #[test]
    fn division_floors_toward_negative_infinity() {
        let half = Operator::higher_order(Function::Map, Lambda::Half);
        assert_eq!(apply_function(half, &[&list(&[-3, 3, -4])]), Ok(list(&[-2, 1, -2])));
        let third = Operator::higher_order(Function::Map, Lambda::Third);
        assert_eq!(apply_function(third, &[&list(&[-1, 7])]), Ok(list(&[-1, 2])));
    }

    #[test]
    fn predicates_on_negatives() {
        let odd = Operator::higher_order(Function::Count, Lambda::Odd);
        assert_eq!(apply_function(odd, &[&list(&[-3, -2, 1, 0])]), Ok(Value::Int(2)));
        let even = Operator::higher_order(Function::Filter, Lambda::Even);
        assert_eq!(apply_function(even, &[&list(&[-3, -2, 1, 0])]), Ok(list(&[-2, 0])));
    }

    #[test]
    fn zipwith_truncates_to_shorter() {
        let o = Operator::higher_order(Function::ZipWith, Lambda::Max);
        assert_eq!(apply_function(o, &[&list(&[1, 5, 2]), &list(&[3, 4])]), Ok(list(&[3, 5])));
    }
}
