use std::fmt;

use serde::{Deserialize, Serialize};

use super::value::ValueType;

/// Signature class of a lambda.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LambdaKind {
    /// int → int
    Unary,
    /// int → bool
    Predicate,
    /// int × int → int
    Binary,
}

/// The closed lambda vocabulary, in canonical order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Lambda {
    Inc,
    Dec,
    Double,
    Triple,
    Quadruple,
    Half,
    Third,
    Quarter,
    Negate,
    Square,
    Positive,
    Negative,
    Even,
    Odd,
    Add,
    Sub,
    Mul,
    Min,
    Max,
}

impl Lambda {
    pub const ALL: [Lambda; 19] = [
        Lambda::Inc,
        Lambda::Dec,
        Lambda::Double,
        Lambda::Triple,
        Lambda::Quadruple,
        Lambda::Half,
        Lambda::Third,
        Lambda::Quarter,
        Lambda::Negate,
        Lambda::Square,
        Lambda::Positive,
        Lambda::Negative,
        Lambda::Even,
        Lambda::Odd,
        Lambda::Add,
        Lambda::Sub,
        Lambda::Mul,
        Lambda::Min,
        Lambda::Max,
    ];

    pub fn kind(self) -> LambdaKind {
        use Lambda::*;
        match self {
            Inc | Dec | Double | Triple | Quadruple | Half | Third | Quarter | Negate | Square => {
                LambdaKind::Unary
            }
            Positive | Negative | Even | Odd => LambdaKind::Predicate,
            Add | Sub | Mul | Min | Max => LambdaKind::Binary,
        }
    }

    /// All lambdas of one kind, in canonical order.
    pub fn of_kind(kind: LambdaKind) -> impl Iterator<Item = Lambda> {
        Self::ALL.into_iter().filter(move |l| l.kind() == kind)
    }

    pub fn symbol(self) -> &'static str {
        use Lambda::*;
        match self {
            Inc => "+1",
            Dec => "-1",
            Double => "*2",
            Triple => "*3",
            Quadruple => "*4",
            Half => "/2",
            Third => "/3",
            Quarter => "/4",
            Negate => "*(-1)",
            Square => "**2",
            Positive => ">0",
            Negative => "<0",
            Even => "EVEN",
            Odd => "ODD",
            Add => "+",
            Sub => "-",
            Mul => "*",
            Min => "MIN",
            Max => "MAX",
        }
    }

    pub fn from_symbol(s: &str) -> Option<Lambda> {
        Self::ALL.into_iter().find(|l| l.symbol() == s)
    }

    /// Applies an int → int lambda. Division rounds toward negative infinity.
    /// Results are computed in i64 and range-checked by the caller.
    pub fn apply_unary(self, x: i64) -> i64 {
        use Lambda::*;
        match self {
            Inc => x + 1,
            Dec => x - 1,
            Double => x * 2,
            Triple => x * 3,
            Quadruple => x * 4,
            Half => x.div_euclid(2),
            Third => x.div_euclid(3),
            Quarter => x.div_euclid(4),
            Negate => -x,
            Square => x * x,
            _ => unreachable!("{self:?} is not a unary lambda"),
        }
    }

    pub fn apply_predicate(self, x: i64) -> bool {
        use Lambda::*;
        match self {
            Positive => x > 0,
            Negative => x < 0,
            Even => x.rem_euclid(2) == 0,
            Odd => x.rem_euclid(2) == 1,
            _ => unreachable!("{self:?} is not a predicate"),
        }
    }

    pub fn apply_binary(self, x: i64, y: i64) -> i64 {
        use Lambda::*;
        match self {
            Add => x + y,
            Sub => x - y,
            Mul => x * y,
            Min => x.min(y),
            Max => x.max(y),
            _ => unreachable!("{self:?} is not a binary lambda"),
        }
    }
}

impl fmt::Display for Lambda {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

/// DSL functions, in canonical order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Function {
    Head,
    Tail,
    Take,
    Drop,
    Access,
    Minimum,
    Maximum,
    Reverse,
    Sort,
    Sum,
    Map,
    Filter,
    Count,
    ZipWith,
    ScanL1,
}

impl Function {
    pub const ALL: [Function; 15] = [
        Function::Head,
        Function::Tail,
        Function::Take,
        Function::Drop,
        Function::Access,
        Function::Minimum,
        Function::Maximum,
        Function::Reverse,
        Function::Sort,
        Function::Sum,
        Function::Map,
        Function::Filter,
        Function::Count,
        Function::ZipWith,
        Function::ScanL1,
    ];

    pub fn name(self) -> &'static str {
        use Function::*;
        match self {
            Head => "HEAD",
            Tail => "TAIL",
            Take => "TAKE",
            Drop => "DROP",
            Access => "ACCESS",
            Minimum => "MINIMUM",
            Maximum => "MAXIMUM",
            Reverse => "REVERSE",
            Sort => "SORT",
            Sum => "SUM",
            Map => "MAP",
            Filter => "FILTER",
            Count => "COUNT",
            ZipWith => "ZIPWITH",
            ScanL1 => "SCANL1",
        }
    }

    pub fn from_name(s: &str) -> Option<Function> {
        Self::ALL.into_iter().find(|f| f.name() == s)
    }

    /// Kind of lambda the function takes, if it is higher-order.
    pub fn lambda_kind(self) -> Option<LambdaKind> {
        use Function::*;
        match self {
            Map => Some(LambdaKind::Unary),
            Filter | Count => Some(LambdaKind::Predicate),
            ZipWith | ScanL1 => Some(LambdaKind::Binary),
            _ => None,
        }
    }

    pub fn arg_types(self) -> &'static [ValueType] {
        use Function::*;
        use ValueType::*;
        match self {
            Take | Drop | Access => &[Int, List],
            ZipWith => &[List, List],
            _ => &[List],
        }
    }

    pub fn arity(self) -> usize {
        self.arg_types().len()
    }

    pub fn output_type(self) -> ValueType {
        use Function::*;
        match self {
            Head | Tail | Access | Minimum | Maximum | Sum | Count => ValueType::Int,
            _ => ValueType::List,
        }
    }
}

impl fmt::Display for Function {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A function together with its lambda (present iff the function is
/// higher-order).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Operator {
    pub function: Function,
    pub lambda: Option<Lambda>,
}

impl Operator {
    pub fn new(function: Function, lambda: Option<Lambda>) -> Option<Operator> {
        match (function.lambda_kind(), lambda) {
            (None, None) => Some(Operator { function, lambda }),
            (Some(kind), Some(l)) if l.kind() == kind => Some(Operator { function, lambda }),
            _ => None,
        }
    }

    pub fn first_order(function: Function) -> Operator {
        Operator::new(function, None).expect("higher-order function needs a lambda")
    }

    pub fn higher_order(function: Function, lambda: Lambda) -> Operator {
        Operator::new(function, Some(lambda)).expect("lambda kind mismatch")
    }

    /// The 38 operators in canonical order.
    pub fn all() -> Vec<Operator> {
        let mut ops = Vec::with_capacity(38);
        for f in Function::ALL {
            match f.lambda_kind() {
                None => ops.push(Operator { function: f, lambda: None }),
                Some(kind) => {
                    ops.extend(Lambda::of_kind(kind).map(|l| Operator { function: f, lambda: Some(l) }))
                }
            }
        }
        ops
    }

    /// Canonical index in `[0, 38)`.
    pub fn index(&self) -> usize {
        let mut idx = 0;
        for f in Function::ALL {
            match f.lambda_kind() {
                None => {
                    if f == self.function {
                        return idx;
                    }
                    idx += 1;
                }
                Some(kind) => {
                    for l in Lambda::of_kind(kind) {
                        if f == self.function && Some(l) == self.lambda {
                            return idx;
                        }
                        idx += 1;
                    }
                }
            }
        }
        unreachable!("operator {self:?} not in vocabulary")
    }

    pub fn arity(&self) -> usize {
        self.function.arity()
    }
}

impl fmt::Display for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.lambda {
            Some(l) => write!(f, "{} {}", self.function, l),
            None => write!(f, "{}", self.function),
        }
    }
}
