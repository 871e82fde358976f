use std::fmt;

use serde::{Deserialize, Serialize};

/// Smallest integer representable in the DSL.
pub const INT_MIN: i32 = -256;
/// Largest integer representable in the DSL.
pub const INT_MAX: i32 = 255;
/// Maximum list length.
pub const MAX_LIST_LEN: usize = 20;

/// A DSL value: an integer or a list of integers.
///
/// Serialises untagged, so JSON `5` is an `Int` and `[1, 2]` is a `List`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Int(i32),
    List(Vec<i32>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ValueType {
    Int,
    List,
}

impl Value {
    pub fn value_type(&self) -> ValueType {
        match self {
            Value::Int(_) => ValueType::Int,
            Value::List(_) => ValueType::List,
        }
    }

    pub fn as_int(&self) -> Option<i32> {
        match self {
            Value::Int(v) => Some(*v),
            Value::List(_) => None,
        }
    }

    pub fn as_list(&self) -> Option<&[i32]> {
        match self {
            Value::Int(_) => None,
            Value::List(xs) => Some(xs),
        }
    }

    /// True if every integer lies in `[INT_MIN, INT_MAX]` and lists are no
    /// longer than `MAX_LIST_LEN`.
    pub fn in_bounds(&self) -> bool {
        let ok = |v: &i32| (INT_MIN..=INT_MAX).contains(v);
        match self {
            Value::Int(v) => ok(v),
            Value::List(xs) => xs.len() <= MAX_LIST_LEN && xs.iter().all(ok),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(v) => write!(f, "{v}"),
            Value::List(xs) => {
                write!(f, "[")?;
                for (i, x) in xs.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{x}")?;
                }
                write!(f, "]")
            }
        }
    }
}

impl fmt::Display for ValueType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ValueType::Int => "INT",
            ValueType::List => "LIST",
        })
    }
}

/// One input-output example.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Example {
    pub inputs: Vec<Value>,
    pub output: Value,
}

impl Example {
    pub fn new(inputs: Vec<Value>, output: Value) -> Self {
        Self { inputs, output }
    }
}

/// Problem dimensions shared by the state encoding and the models.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DslConfig {
    /// Examples per task (N).
    pub examples: usize,
    /// Variable slots in the program state (ν).
    pub slots: usize,
    /// Maximum list length (q).
    pub max_list_len: usize,
    pub int_min: i32,
    pub int_max: i32,
}

impl Default for DslConfig {
    fn default() -> Self {
        Self {
            examples: 5,
            slots: 11,
            max_list_len: MAX_LIST_LEN,
            int_min: INT_MIN,
            int_max: INT_MAX,
        }
    }
}

impl DslConfig {
    pub fn with_slots(slots: usize) -> Self {
        Self { slots, ..Self::default() }
    }

    /// Number of distinct integer tokens; the NULL sentinel is this value.
    pub fn value_tokens(&self) -> usize {
        (self.int_max - self.int_min + 1) as usize
    }

    pub fn null_token(&self) -> usize {
        self.value_tokens()
    }
}
