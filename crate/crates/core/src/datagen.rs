//! Random programs and examples, functional non-equivalence filtering,
//! dataset files and aggregator instances.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::{
    execute_program, format_program, satisfies, DslConfig, Example, Operator, Program, Statement, Value, ValueType,
    MAX_INPUTS,
};
use crate::encoder::EncoderModel;
use crate::nn::{seeded_rng, ShapeError};
use crate::search::{pe_searches, Budget, CabSchedule, EncoderPredictor, PeMode, PeSearchConfig};

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("no valid program of length {length} after {attempts} attempts")]
    RetriesExhausted { length: usize, attempts: usize },
    #[error("program length {length} with {inputs} inputs exceeds {slots} slots")]
    TooLong { length: usize, inputs: usize, slots: usize },
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error("record {index}: program does not satisfy example {example}")]
    Unsatisfied { index: usize, example: usize },
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub dsl: DslConfig,
    /// Smallest and largest list-input entry.
    pub entry_min: i32,
    pub entry_max: i32,
    /// Range of INT inputs.
    pub int_input_min: i32,
    pub int_input_max: i32,
    pub min_list_len: usize,
    pub max_inputs: usize,
    /// Program draws per accepted program before giving up.
    pub program_attempts: usize,
    /// Input resamples per program before rejecting it.
    pub input_attempts: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        let dsl = DslConfig::default();
        Self {
            dsl,
            entry_min: -64,
            entry_max: 63,
            int_input_min: 0,
            int_input_max: dsl.max_list_len as i32,
            min_list_len: 1,
            max_inputs: MAX_INPUTS,
            program_attempts: 100,
            input_attempts: 500,
        }
    }
}

/// All type-feasible statements over variables of the given types (argument
/// indices are variable indices).
pub fn feasible_statements(types: &[ValueType]) -> Vec<Statement> {
    let mut out = Vec::new();
    for op in Operator::all() {
        let want = op.function.arg_types();
        let cands: Vec<Vec<usize>> =
            want.iter().map(|t| (0..types.len()).filter(|&v| types[v] == *t).collect()).collect();
        match cands.len() {
            1 => out.extend(cands[0].iter().filter_map(|&a| Statement::new(op, &[a]))),
            2 => {
                for &a in &cands[0] {
                    out.extend(cands[1].iter().filter_map(|&b| Statement::new(op, &[a, b])));
                }
            }
            _ => unreachable!("functions take one or two arguments"),
        }
    }
    out
}

fn all_vars_used(p: &Program) -> bool {
    let mut used = vec![false; p.num_vars()];
    for s in &p.statements {
        for &a in s.args() {
            used[a] = true;
        }
    }
    // The last variable is the output.
    used[..p.num_vars() - 1].iter().all(|&u| u)
}

/// Draws a program of `length` lines whose variables are all used. Inputs:
/// 1..=max_inputs, at least one LIST. Each line is uniform over the
/// type-feasible statements reading at least one not-yet-read variable.
pub fn gen_program<R: Rng>(length: usize, rng: &mut R, cfg: &GenConfig) -> Result<Program, DatagenError> {
    let max_inputs = cfg.max_inputs.clamp(1, MAX_INPUTS);
    if length == 0 || length + 1 > cfg.dsl.slots {
        return Err(DatagenError::TooLong { length, inputs: 1, slots: cfg.dsl.slots });
    }
    for _ in 0..cfg.program_attempts.max(1) {
        // Every input must be read, and each line reads at most two variables.
        let n_inputs = rng.gen_range(1..=max_inputs.min(length + 1).min(cfg.dsl.slots - length));
        let mut inputs: Vec<ValueType> =
            (0..n_inputs).map(|_| if rng.gen_bool(0.5) { ValueType::List } else { ValueType::Int }).collect();
        if !inputs.contains(&ValueType::List) {
            let i = rng.gen_range(0..n_inputs);
            inputs[i] = ValueType::List;
        }
        let mut types = inputs.clone();
        let mut statements = Vec::with_capacity(length);
        let mut used = vec![false; n_inputs];
        for _ in 0..length {
            let all = feasible_statements(&types);
            let fresh: Vec<&Statement> = all.iter().filter(|s| s.args().iter().any(|&a| !used[a])).collect();
            let s = if fresh.is_empty() {
                *all.choose(rng).expect("a LIST variable admits statements")
            } else {
                **fresh.choose(rng).expect("nonempty")
            };
            s.args().iter().for_each(|&a| used[a] = true);
            used.push(false);
            types.push(s.op.function.output_type());
            statements.push(s);
        }
        let p = Program::new(inputs, statements);
        if all_vars_used(&p) {
            return Ok(p);
        }
    }
    Err(DatagenError::RetriesExhausted { length, attempts: cfg.program_attempts })
}

fn gen_value<R: Rng>(t: ValueType, rng: &mut R, cfg: &GenConfig) -> Value {
    match t {
        ValueType::Int => Value::Int(rng.gen_range(cfg.int_input_min..=cfg.int_input_max)),
        ValueType::List => {
            let len = rng.gen_range(cfg.min_list_len..=cfg.dsl.max_list_len);
            Value::List((0..len).map(|_| rng.gen_range(cfg.entry_min..=cfg.entry_max)).collect())
        }
    }
}

/// Samples `n` examples on which `p` executes without error. Returns `None`
/// after `input_attempts` failed draws or when all outputs coincide.
pub fn gen_examples<R: Rng>(p: &Program, n: usize, rng: &mut R, cfg: &GenConfig) -> Option<Vec<Example>> {
    let mut out = Vec::with_capacity(n);
    let mut failures = 0;
    while out.len() < n {
        let inputs: Vec<Value> = p.inputs.iter().map(|&t| gen_value(t, rng, cfg)).collect();
        match execute_program(p, &inputs) {
            Ok(v) if v.in_bounds() => out.push(Example::new(inputs, v)),
            _ => {
                failures += 1;
                if failures >= cfg.input_attempts {
                    return None;
                }
            }
        }
    }
    if n > 1 && out.iter().all(|e| e.output == out[0].output) {
        return None;
    }
    Some(out)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub program: Program,
    pub examples: Vec<Example>,
}

impl DatasetRecord {
    pub fn input_types(&self) -> Vec<ValueType> {
        self.program.inputs.clone()
    }
}

/// Corpus indexed by input signature for equivalence checks.
#[derive(Clone, Debug, Default)]
pub struct Corpus {
    by_signature: BTreeMap<Vec<ValueType>, Vec<DatasetRecord>>,
    len: usize,
}

impl Corpus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, r: DatasetRecord) {
        self.by_signature.entry(r.program.inputs.clone()).or_default().push(r);
        self.len += 1;
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// True when `candidate` is functionally new under the mutual-satisfaction
    /// test: no corpus program satisfies all of its examples, and it satisfies
    /// the examples of no corpus record.
    pub fn equiv_filter(&self, candidate: &DatasetRecord) -> bool {
        let Some(recs) = self.by_signature.get(&candidate.program.inputs) else { return true };
        !recs.iter().any(|r| {
            candidate.examples.iter().all(|e| satisfies(&r.program, e))
                || r.examples.iter().all(|e| satisfies(&candidate.program, e))
        })
    }
}

/// Free-function form of [`Corpus::equiv_filter`] over a plain list.
pub fn equiv_filter(candidate: &DatasetRecord, corpus: &[DatasetRecord]) -> bool {
    let mut c = Corpus::new();
    corpus.iter().filter(|r| r.program.inputs == candidate.program.inputs).for_each(|r| c.insert(r.clone()));
    c.equiv_filter(candidate)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub gen: GenConfig,
    /// `(program length, count)` for the training split, generated in order.
    pub train: Vec<(usize, usize)>,
    /// `(program length, count)` for the test split.
    pub test: Vec<(usize, usize)>,
    /// Candidate draws allowed per requested program.
    pub attempts_per_program: usize,
    pub seed: u64,
}

impl DatasetConfig {
    /// ≥3000 training programs of length ≤ 3, 200 test programs of length 2–3.
    pub fn desk() -> Self {
        Self {
            gen: GenConfig::default(),
            train: vec![(1, 40), (2, 1100), (3, 2100)],
            test: vec![(2, 100), (3, 100)],
            attempts_per_program: 50,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenStats {
    pub candidates: usize,
    pub rejected_program: usize,
    pub rejected_examples: usize,
    pub rejected_equivalent: usize,
}

fn fill<R: Rng>(
    plan: &[(usize, usize)],
    cfg: &DatasetConfig,
    corpus: &mut Corpus,
    rng: &mut R,
    stats: &mut GenStats,
) -> Vec<DatasetRecord> {
    let mut out = Vec::new();
    let mut sorted = plan.to_vec();
    sorted.sort_by_key(|&(l, _)| l);
    for (length, count) in sorted {
        let mut made = 0;
        let mut budget = count.saturating_mul(cfg.attempts_per_program);
        while made < count && budget > 0 {
            budget -= 1;
            stats.candidates += 1;
            let Ok(program) = gen_program(length, rng, &cfg.gen) else {
                stats.rejected_program += 1;
                continue;
            };
            let Some(examples) = gen_examples(&program, cfg.gen.dsl.examples, rng, &cfg.gen) else {
                stats.rejected_examples += 1;
                continue;
            };
            let rec = DatasetRecord { program, examples };
            if !corpus.equiv_filter(&rec) {
                stats.rejected_equivalent += 1;
                continue;
            }
            corpus.insert(rec.clone());
            out.push(rec);
            made += 1;
        }
        if made < count {
            log::warn!("length {length}: generated {made} of {count} programs before the attempt limit");
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub train: Vec<DatasetRecord>,
    pub test: Vec<DatasetRecord>,
    pub stats: GenStats,
}

/// Test split first, then the training split; every record is checked
/// against all earlier ones in both directions, so the requested test counts
/// are met even when short programs are scarce.
pub fn build_dataset(cfg: &DatasetConfig) -> Dataset {
    let mut rng = seeded_rng(cfg.seed);
    let mut corpus = Corpus::new();
    let mut stats = GenStats::default();
    let test = fill(&cfg.test, cfg, &mut corpus, &mut rng, &mut stats);
    let train = fill(&cfg.train, cfg, &mut corpus, &mut rng, &mut stats);
    log::info!("dataset: {} train, {} test, {:?}", train.len(), test.len(), stats);
    Dataset { train, test, stats }
}

/// Checks that every record's program satisfies its examples.
pub fn verify_records(records: &[DatasetRecord]) -> Result<(), DatagenError> {
    for (index, r) in records.iter().enumerate() {
        if let Some(example) = r.examples.iter().position(|e| !satisfies(&r.program, e)) {
            return Err(DatagenError::Unsatisfied { index, example });
        }
    }
    Ok(())
}

/// Writes a JSONL file: one header line `{"header": …}` then one record per
/// line. Records are re-verified first when they are dataset records.
pub fn write_jsonl<T: Serialize>(path: &Path, header: &serde_json::Value, records: &[T]) -> Result<(), DatagenError> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, &serde_json::json!({ "header": header })).map_err(|source| DatagenError::Json { line: 1, source })?;
    w.write_all(b"\n")?;
    for (i, r) in records.iter().enumerate() {
        serde_json::to_writer(&mut w, r).map_err(|source| DatagenError::Json { line: i + 2, source })?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a JSONL file written by [`write_jsonl`]; the header line is optional.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<(Option<serde_json::Value>, Vec<T>), DatagenError> {
    let r = BufReader::new(File::open(path)?);
    let mut header = None;
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if i == 0 {
            let v: serde_json::Value =
                serde_json::from_str(&line).map_err(|source| DatagenError::Json { line: 1, source })?;
            if let Some(h) = v.get("header") {
                header = Some(h.clone());
                continue;
            }
            out.push(serde_json::from_value(v).map_err(|source| DatagenError::Json { line: 1, source })?);
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| DatagenError::Json { line: i + 1, source })?);
    }
    Ok((header, out))
}

/// Per-example search budget policy for aggregator instances. Fractions are
/// seconds in wall-clock mode and multiples of `node_unit` in node mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyTag {
    /// One instance at 0.5.
    Fixed05,
    /// Two instances, each at a fraction drawn from {0.1, …, 0.9}.
    Random01To09,
    /// Three instances at 0.4, 0.5 and 0.6.
    Triple040506,
}

impl PolicyTag {
    pub fn as_str(self) -> &'static str {
        match self {
            PolicyTag::Fixed05 => "fixed_0.5",
            PolicyTag::Random01To09 => "random_0.1_to_0.9",
            PolicyTag::Triple040506 => "triple_0.4_0.5_0.6",
        }
    }
}

impl std::str::FromStr for PolicyTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fixed_0.5" => Ok(PolicyTag::Fixed05),
            "random_0.1_to_0.9" => Ok(PolicyTag::Random01To09),
            "triple_0.4_0.5_0.6" => Ok(PolicyTag::Triple040506),
            other => Err(format!("unknown policy `{other}` (fixed_0.5|random_0.1_to_0.9|triple_0.4_0.5_0.6)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeoutPolicy {
    pub tag: PolicyTag,
    /// Nodes per budget unit; `None` means wall-clock seconds.
    pub node_unit: Option<u64>,
}

impl TimeoutPolicy {
    fn budget(&self, tenths: u32) -> Budget {
        match self.node_unit {
            Some(u) => Budget::Nodes(u * tenths as u64 / 10),
            None => Budget::Seconds(tenths as f64 / 10.0),
        }
    }

    /// Budgets for one record's instances.
    pub fn budgets<R: Rng>(&self, rng: &mut R) -> Vec<Budget> {
        match self.tag {
            PolicyTag::Fixed05 => vec![self.budget(5)],
            PolicyTag::Random01To09 => (0..2).map(|_| self.budget(rng.gen_range(1..=9))).collect(),
            PolicyTag::Triple040506 => [4, 5, 6].iter().map(|&t| self.budget(t)).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeEntry {
    pub program: Program,
    pub u: f64,
    pub satisfied: Vec<usize>,
    pub source: usize,
}

/// `(X, Y, p_g)` training record for the aggregator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregatorInstance {
    pub program: Program,
    pub examples: Vec<Example>,
    pub pe: Vec<PeEntry>,
    pub budget: Budget,
}

impl AggregatorInstance {
    /// Omission rules: no perfect solution and at least one nonzero score.
    pub fn is_admissible(&self) -> bool {
        !self.pe.is_empty() && self.pe.iter().all(|e| e.u < 1.0) && self.pe.iter().any(|e| e.u > 0.0)
    }

    pub fn solutions(&self) -> Vec<crate::search::PeSolution> {
        self.pe
            .iter()
            .map(|e| crate::search::PeSolution {
                program: e.program.clone(),
                score: e.u,
                satisfied: e.satisfied.clone(),
                source: e.source,
                nodes: 0,
                seconds: None,
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceConfig {
    pub policy: TimeoutPolicy,
    pub mode: PeMode,
    pub schedule: CabSchedule,
    pub max_depth: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceStats {
    pub searched: usize,
    pub omitted_perfect: usize,
    pub omitted_empty: usize,
}

/// Runs per-example searches for every record under each of the policy's
/// budgets and keeps the admissible instances.
pub fn build_aggregator_instances(
    records: &[DatasetRecord],
    pe: &EncoderModel,
    cfg: &InstanceConfig,
) -> Result<(Vec<AggregatorInstance>, InstanceStats), DatagenError> {
    let mut rng = seeded_rng(cfg.seed);
    let predictor = EncoderPredictor { model: pe };
    let mut out = Vec::new();
    let mut stats = InstanceStats::default();
    for rec in records {
        for budget in cfg.policy.budgets(&mut rng) {
            stats.searched += 1;
            let pcfg =
                PeSearchConfig { budget, mode: cfg.mode, schedule: cfg.schedule, max_depth: cfg.max_depth, parallel: false };
            let report = pe_searches(&rec.examples, &predictor, &pe.cfg.dsl, &pcfg)?;
            if report.perfect.is_some() {
                stats.omitted_perfect += 1;
                continue;
            }
            let inst = AggregatorInstance {
                program: rec.program.clone(),
                examples: rec.examples.clone(),
                pe: report
                    .solutions
                    .into_iter()
                    .map(|s| PeEntry { program: s.program, u: s.score, satisfied: s.satisfied, source: s.source })
                    .collect(),
                budget,
            };
            if inst.is_admissible() {
                out.push(inst);
            } else {
                stats.omitted_empty += 1;
            }
        }
    }
    Ok((out, stats))
}

/// Pairs of records (across `a` and `b`) where either program satisfies all
/// of the other's examples.
pub fn mutual_equivalences(a: &[DatasetRecord], b: &[DatasetRecord]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            if x.program.inputs != y.program.inputs {
                continue;
            }
            let xy = y.examples.iter().all(|e| satisfies(&x.program, e));
            let yx = x.examples.iter().all(|e| satisfies(&y.program, e));
            if xy || yx {
                out.push((i, j));
            }
        }
    }
    out
}

/// Distinct program texts in a split (for quick duplicate checks).
pub fn program_texts(records: &[DatasetRecord]) -> BTreeSet<String> {
    records.iter().map(|r| format_program(&r.program)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse_program;

    #[test]
    fn generated_programs_are_typed_and_round_trip() {
        let cfg = GenConfig::default();
        let mut rng = seeded_rng(3);
        for len in 1..=4 {
            for _ in 0..20 {
                let p = gen_program(len, &mut rng, &cfg).unwrap();
                assert_eq!(p.len(), len);
                assert!(p.is_well_typed());
                assert!(p.inputs.contains(&ValueType::List));
                assert!(all_vars_used(&p));
                assert_eq!(parse_program(&format_program(&p)).unwrap(), p);
            }
        }
    }

    #[test]
    fn fixed_seed_gives_identical_programs_and_examples() {
        let cfg = GenConfig::default();
        let run = || {
            let mut rng = seeded_rng(9);
            let p = gen_program(3, &mut rng, &cfg).unwrap();
            let e = gen_examples(&p, 5, &mut rng, &cfg);
            (p, e)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn overflowing_program_is_rejected() {
        let text = "a <- LIST\nb <- MAP **2 a\nc <- MAP **2 b\nd <- MAP **2 c";
        let p = parse_program(text).unwrap();
        let cfg = GenConfig { min_list_len: 20, entry_min: 20, entry_max: 63, input_attempts: 50, ..GenConfig::default() };
        assert!(gen_examples(&p, 5, &mut seeded_rng(1), &cfg).is_none());
    }

    #[test]
    fn examples_satisfy_their_program() {
        let cfg = GenConfig::default();
        let mut rng = seeded_rng(4);
        let p = parse_program("a <- LIST\nb <- SORT a\nc <- REVERSE b").unwrap();
        let ex = gen_examples(&p, 5, &mut rng, &cfg).unwrap();
        assert!(ex.iter().all(|e| satisfies(&p, e)));
    }

    #[test]
    fn double_reverse_is_equivalent_to_a_shorter_program() {
        let cand = parse_program("a <- LIST\nb <- REVERSE a\nc <- REVERSE b").unwrap();
        // On single-element lists, double reversal matches SORT.
        let examples: Vec<Example> =
            (0..5).map(|i| Example::new(vec![Value::List(vec![i])], Value::List(vec![i]))).collect();
        let rec = DatasetRecord { program: cand.clone(), examples: examples.clone() };
        let sort = DatasetRecord { program: parse_program("a <- LIST\nb <- SORT a").unwrap(), examples: examples.clone() };
        assert!(!equiv_filter(&rec, &[sort]));
        assert!(equiv_filter(&rec, &[]));
        assert!(!equiv_filter(&rec, std::slice::from_ref(&rec)));
    }

    #[test]
    fn candidate_satisfying_a_corpus_record_is_rejected() {
        // SORT fails REVERSE's examples, but REVERSE satisfies SORT's
        // single-element examples.
        let sort = DatasetRecord {
            program: parse_program("a <- LIST\nb <- SORT a").unwrap(),
            examples: (1..=5).map(|i| Example::new(vec![Value::List(vec![i])], Value::List(vec![i]))).collect(),
        };
        let rev = DatasetRecord {
            program: parse_program("a <- LIST\nb <- REVERSE a").unwrap(),
            examples: (1..=5).map(|i| Example::new(vec![Value::List(vec![0, i])], Value::List(vec![i, 0]))).collect(),
        };
        assert!(rev.examples.iter().any(|e| !satisfies(&sort.program, e)));
        assert!(!equiv_filter(&rev, std::slice::from_ref(&sort)));
    }

    #[test]
    fn feasible_statements_respect_types() {
        let s = feasible_statements(&[ValueType::List]);
        assert!(s.iter().all(|st| st.op.function.arg_types().iter().all(|t| *t == ValueType::List)));
        // Unary list functions: HEAD TAIL MINIMUM MAXIMUM REVERSE SORT SUM,
        // MAP×10, FILTER×4, COUNT×4, SCANL1×5, plus ZIPWITH×5 on (a, a).
        assert_eq!(s.len(), 7 + 10 + 4 + 4 + 5 + 5);
    }

    #[test]
    fn policies_produce_expected_counts() {
        let mut rng = seeded_rng(0);
        let p = |tag| TimeoutPolicy { tag, node_unit: Some(100) };
        assert_eq!(p(PolicyTag::Fixed05).budgets(&mut rng), vec![Budget::Nodes(50)]);
        assert_eq!(p(PolicyTag::Random01To09).budgets(&mut rng).len(), 2);
        assert_eq!(
            p(PolicyTag::Triple040506).budgets(&mut rng),
            vec![Budget::Nodes(40), Budget::Nodes(50), Budget::Nodes(60)]
        );
    }
}
