//! Program-state memory over a set of examples.
//!
//! Each example row holds ν variable slots plus one output slot. Statements
//! executed during search or supervision read slot indices; their result is
//! appended to the next free slot, or overwrites a dropped slot once all ν
//! slots are in use.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::{apply_function, DslConfig, Example, ExecError, Program, Statement, Value, ValueType};

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum StateError {
    #[error("examples disagree on input count or types")]
    Shape,
    #[error("{0} inputs do not fit in {1} variable slots")]
    TooManyInputs(usize, usize),
    #[error("execution failed: {0}")]
    Exec(#[from] ExecError),
    #[error("variable {0} is not resident in any slot")]
    Evicted(usize),
    #[error("all slots are live; nothing can be dropped")]
    NoDroppableSlot,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SlotOrigin {
    Empty,
    Input,
    Intermediate,
    Output,
}

/// The N × (ν+1) program-state memory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProgramState {
    rows: Vec<Vec<Option<Value>>>,
    outputs: Vec<Value>,
    origins: Vec<SlotOrigin>,
    slot_vars: Vec<Option<usize>>,
    num_vars: usize,
    num_inputs: usize,
    step: usize,
    last_slot: Option<usize>,
}

/// Builds the initial state: inputs in the first slots, outputs in the output
/// slot.
pub fn init_state(examples: &[Example], cfg: &DslConfig) -> Result<ProgramState, StateError> {
    let first = examples.first().ok_or(StateError::Shape)?;
    let types: Vec<ValueType> = first.inputs.iter().map(Value::value_type).collect();
    if examples
        .iter()
        .any(|e| e.inputs.len() != types.len() || e.inputs.iter().map(Value::value_type).ne(types.iter().copied()))
    {
        return Err(StateError::Shape);
    }
    let nu = cfg.slots;
    if types.len() > nu {
        return Err(StateError::TooManyInputs(types.len(), nu));
    }
    let rows = examples
        .iter()
        .map(|e| {
            let mut row: Vec<Option<Value>> = e.inputs.iter().cloned().map(Some).collect();
            row.resize(nu, None);
            row
        })
        .collect();
    let mut origins = vec![SlotOrigin::Empty; nu + 1];
    let mut slot_vars = vec![None; nu];
    for i in 0..types.len() {
        origins[i] = SlotOrigin::Input;
        slot_vars[i] = Some(i);
    }
    origins[nu] = SlotOrigin::Output;
    Ok(ProgramState {
        rows,
        outputs: examples.iter().map(|e| e.output.clone()).collect(),
        origins,
        slot_vars,
        num_vars: types.len(),
        num_inputs: types.len(),
        step: 0,
        last_slot: None,
    })
}

/// Executes `stmt` on every row; appends the result while slots remain, and
/// otherwise overwrites `drop_index`. Fails atomically on the first row error.
pub fn drop_exec(stmt: &Statement, s: &ProgramState, drop_index: usize) -> Result<ProgramState, StateError> {
    let nu = s.slots();
    let mut results = Vec::with_capacity(s.rows.len());
    for row in &s.rows {
        let mut args = [&Value::Int(0), &Value::Int(0)];
        for (i, &slot) in stmt.args().iter().enumerate() {
            args[i] = row.get(slot).and_then(Option::as_ref).ok_or(ExecError::NullSlot)?;
        }
        results.push(apply_function(stmt.op, &args[..stmt.args().len()])?);
    }
    let (target, num_vars) = if s.num_vars < nu {
        (s.num_vars, s.num_vars + 1)
    } else {
        if drop_index >= nu {
            return Err(ExecError::NullSlot.into());
        }
        (drop_index, s.num_vars)
    };
    let mut next = s.clone();
    for (row, v) in next.rows.iter_mut().zip(results) {
        row[target] = Some(v);
    }
    next.origins[target] = SlotOrigin::Intermediate;
    next.slot_vars[target] = Some(s.num_inputs + s.step);
    next.num_vars = num_vars;
    next.step += 1;
    next.last_slot = Some(target);
    Ok(next)
}

impl ProgramState {
    pub fn num_examples(&self) -> usize {
        self.rows.len()
    }

    /// ν, the number of variable slots.
    pub fn slots(&self) -> usize {
        self.slot_vars.len()
    }

    /// l, the number of filled variable slots.
    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn num_inputs(&self) -> usize {
        self.num_inputs
    }

    /// Number of statements executed so far.
    pub fn step(&self) -> usize {
        self.step
    }

    pub fn origins(&self) -> &[SlotOrigin] {
        &self.origins
    }

    /// Program variable held by each slot.
    pub fn slot_vars(&self) -> &[Option<usize>] {
        &self.slot_vars
    }

    pub fn slot_of_var(&self, var: usize) -> Option<usize> {
        self.slot_vars.iter().position(|v| *v == Some(var))
    }

    pub fn row(&self, example: usize) -> &[Option<Value>] {
        &self.rows[example]
    }

    pub fn output(&self, example: usize) -> &Value {
        &self.outputs[example]
    }

    pub fn last_slot(&self) -> Option<usize> {
        self.last_slot
    }

    /// True if the most recently written variable equals the output in every row.
    pub fn is_solution(&self) -> bool {
        match self.last_slot {
            None => false,
            Some(slot) => self.rows.iter().zip(&self.outputs).all(|(r, o)| r[slot].as_ref() == Some(o)),
        }
    }

    /// Rewrites a program-level statement (variable arguments) into slot form.
    pub fn to_slot_statement(&self, stmt: &Statement) -> Result<Statement, StateError> {
        let mut args = [0usize; 2];
        for (i, &var) in stmt.args().iter().enumerate() {
            args[i] = self.slot_of_var(var).ok_or(StateError::Evicted(var))?;
        }
        Ok(stmt.with_args(&args[..stmt.args().len()]).expect("same arity"))
    }

    /// Rewrites a slot-level statement into program variables.
    pub fn to_var_statement(&self, stmt: &Statement) -> Result<Statement, StateError> {
        let mut args = [0usize; 2];
        for (i, &slot) in stmt.args().iter().enumerate() {
            args[i] = self
                .slot_vars
                .get(slot)
                .copied()
                .flatten()
                .ok_or(StateError::Exec(ExecError::NullSlot))?;
        }
        Ok(stmt.with_args(&args[..stmt.args().len()]).expect("same arity"))
    }
}

/// Encoded state: N × (ν+1) × (q+2) integers. Per slot, two type bits
/// `(list, int)` followed by q payload tokens (`value - int_min`, or the NULL
/// sentinel `int_max - int_min + 1`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StateTensor {
    pub examples: usize,
    pub slots: usize,
    pub width: usize,
    pub data: Vec<u16>,
}

impl StateTensor {
    pub fn shape(&self) -> [usize; 3] {
        [self.examples, self.slots, self.width]
    }

    pub fn slot(&self, example: usize, slot: usize) -> &[u16] {
        let start = (example * self.slots + slot) * self.width;
        &self.data[start..start + self.width]
    }
}

fn encode_value(v: Option<&Value>, cfg: &DslConfig, out: &mut [u16]) {
    let null = cfg.null_token() as u16;
    out.fill(null);
    out[0] = 0;
    out[1] = 0;
    let shift = |x: i32| (x - cfg.int_min) as u16;
    match v {
        None => {}
        Some(Value::Int(x)) => {
            out[1] = 1;
            out[2] = shift(*x);
        }
        Some(Value::List(xs)) => {
            out[0] = 1;
            for (dst, &x) in out[2..].iter_mut().zip(xs) {
                *dst = shift(x);
            }
        }
    }
}

pub fn encode_state(s: &ProgramState, cfg: &DslConfig) -> StateTensor {
    let slots = s.slots() + 1;
    let width = cfg.max_list_len + 2;
    let mut data = vec![0u16; s.num_examples() * slots * width];
    for (e, row) in s.rows.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            let start = (e * slots + j) * width;
            encode_value(v.as_ref(), cfg, &mut data[start..start + width]);
        }
        let start = (e * slots + slots - 1) * width;
        encode_value(Some(&s.outputs[e]), cfg, &mut data[start..start + width]);
    }
    StateTensor { examples: s.num_examples(), slots, width, data }
}

/// Inverse of the slot encoding: per example, ν+1 slots of `Option<Value>`
/// (the last is the output).
pub fn decode_state(t: &StateTensor, cfg: &DslConfig) -> Vec<Vec<Option<Value>>> {
    let null = cfg.null_token() as u16;
    (0..t.examples)
        .map(|e| {
            (0..t.slots)
                .map(|j| {
                    let s = t.slot(e, j);
                    let payload = s[2..].iter().take_while(|&&x| x != null).map(|&x| x as i32 + cfg.int_min);
                    match (s[0], s[1]) {
                        (1, 0) => Some(Value::List(payload.collect())),
                        (0, 1) => payload.into_iter().next().map(Value::Int),
                        _ => None,
                    }
                })
                .collect()
        })
        .collect()
}

/// Drop targets: one entry per slot, 1.0 iff the slot holds a variable that no
/// statement after line `t` (1-based) reads. `layout` is the slot → variable
/// map of the state the line executes against.
pub fn ground_truth_drop(p: &Program, t: usize, layout: &[Option<usize>]) -> Vec<f32> {
    assert!(t >= 1 && t <= p.len(), "step {t} outside 1..={}", p.len());
    let later = &p.statements[t..];
    layout
        .iter()
        .map(|v| match v {
            Some(var) if !later.iter().any(|s| s.args().contains(var)) => 1.0,
            _ => 0.0,
        })
        .collect()
}

/// Layout of the no-drop numbering: slot i holds variable i.
pub fn identity_layout(num_vars: usize, slots: usize) -> Vec<Option<usize>> {
    (0..slots).map(|i| (i < num_vars).then_some(i)).collect()
}

/// One step of replaying a program through the state memory.
#[derive(Clone, Debug)]
pub struct ReplayStep {
    /// State before the line executes.
    pub state: ProgramState,
    /// The line in slot form.
    pub statement: Statement,
    pub drop_target: Vec<f32>,
    /// Slot overwritten if the memory is full.
    pub drop_index: usize,
}

/// Replays `p` over `examples`, choosing drop slots with `choose` (given the
/// drop target). Returns the per-line steps and the final state.
pub fn replay<F>(
    p: &Program,
    examples: &[Example],
    cfg: &DslConfig,
    mut choose: F,
) -> Result<(Vec<ReplayStep>, ProgramState), StateError>
where
    F: FnMut(&[f32]) -> Option<usize>,
{
    let mut state = init_state(examples, cfg)?;
    let mut steps = Vec::with_capacity(p.len());
    for (i, line) in p.statements.iter().enumerate() {
        let statement = state.to_slot_statement(line)?;
        let drop_target = ground_truth_drop(p, i + 1, state.slot_vars());
        let drop_index = if state.num_vars() < state.slots() {
            first_set(&drop_target).unwrap_or(0)
        } else {
            choose(&drop_target).ok_or(StateError::NoDroppableSlot)?
        };
        let next = drop_exec(&statement, &state, drop_index)?;
        steps.push(ReplayStep { state, statement, drop_target, drop_index });
        state = next;
    }
    Ok((steps, state))
}

/// Like [`replay`] but keeps the steps that executed before the first
/// failure, returning the failure alongside them.
pub fn replay_partial<F>(
    p: &Program,
    examples: &[Example],
    cfg: &DslConfig,
    mut choose: F,
) -> Result<(Vec<ReplayStep>, Option<StateError>), StateError>
where
    F: FnMut(&[f32]) -> Option<usize>,
{
    let mut state = init_state(examples, cfg)?;
    let mut steps = Vec::with_capacity(p.len());
    for (i, line) in p.statements.iter().enumerate() {
        let attempt = (|| {
            let statement = state.to_slot_statement(line)?;
            let drop_target = ground_truth_drop(p, i + 1, state.slot_vars());
            let drop_index = if state.num_vars() < state.slots() {
                first_set(&drop_target).unwrap_or(0)
            } else {
                choose(&drop_target).ok_or(StateError::NoDroppableSlot)?
            };
            let next = drop_exec(&statement, &state, drop_index)?;
            Ok((statement, drop_target, drop_index, next))
        })();
        match attempt {
            Ok((statement, drop_target, drop_index, next)) => {
                let prev = std::mem::replace(&mut state, next);
                steps.push(ReplayStep { state: prev, statement, drop_target, drop_index });
            }
            Err(e) => return Ok((steps, Some(e))),
        }
    }
    Ok((steps, None))
}

/// Lowest slot with a set drop bit.
pub fn first_set(target: &[f32]) -> Option<usize> {
    target.iter().position(|&b| b > 0.5)
}
