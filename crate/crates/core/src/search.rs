//! Beam search, complete-anytime beam search, per-example searches, blended
//! prediction and the full synthesis pipeline.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::aggregator::{assemble_keyset, CaModel, KeyVariant, PreparedKeys};
use crate::dsl::{format_program, satisfies, solution_score, DslConfig, Example, Program, Statement, Value, Vocabulary};
use crate::encoder::EncoderModel;
use crate::nn::ShapeError;
use crate::state::{drop_exec, encode_state, first_set, init_state, replay_partial, ProgramState, StateTensor};

#[derive(Debug, Error)]
pub enum SearchError {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Search budget: wall-clock seconds or evaluated search nodes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Budget {
    Nodes(u64),
    Seconds(f64),
}

impl Budget {
    pub fn is_nodes(&self) -> bool {
        matches!(self, Budget::Nodes(_))
    }
}

impl fmt::Display for Budget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Budget::Nodes(n) => write!(f, "nodes:{n}"),
            Budget::Seconds(s) => write!(f, "seconds:{s}"),
        }
    }
}

impl FromStr for Budget {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, val) = s.split_once(':').ok_or_else(|| format!("budget `{s}` must be nodes:<n> or seconds:<f>"))?;
        match kind {
            "nodes" => val.parse().map(Budget::Nodes).map_err(|e| format!("budget `{s}`: {e}")),
            "seconds" => match val.parse::<f64>() {
                Ok(v) if v.is_finite() && v >= 0.0 => Ok(Budget::Seconds(v)),
                Ok(_) => Err(format!("budget `{s}`: seconds must be finite and non-negative")),
                Err(e) => Err(format!("budget `{s}`: {e}")),
            },
            _ => Err(format!("budget `{s}` must be nodes:<n> or seconds:<f>")),
        }
    }
}

impl TryFrom<String> for Budget {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Budget> for String {
    fn from(b: Budget) -> String {
        b.to_string()
    }
}

/// Tracks consumption against a budget.
#[derive(Debug)]
pub struct Meter {
    budget: Budget,
    start: Instant,
    nodes: u64,
}

impl Meter {
    pub fn new(budget: Budget) -> Self {
        Self { budget, start: Instant::now(), nodes: 0 }
    }

    pub fn nodes(&self) -> u64 {
        self.nodes
    }

    pub fn seconds(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }

    /// Node evaluations still allowed now.
    fn allowance(&self) -> u64 {
        match self.budget {
            Budget::Nodes(n) => n.saturating_sub(self.nodes),
            Budget::Seconds(s) if self.seconds() < s => u64::MAX,
            Budget::Seconds(_) => 0,
        }
    }

    fn charge(&mut self, n: u64) {
        self.nodes += n;
    }
}

/// Scores for one state: statement scores (`n_s`) and drop probabilities
/// (`ν`).
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub statement: Vec<f32>,
    pub drop: Vec<f32>,
}

pub trait Predictor: Sync {
    fn predict(&self, states: &[&ProgramState]) -> Result<Vec<Prediction>, ShapeError>;
}

fn encode_all(states: &[&ProgramState], dsl: &DslConfig) -> Vec<StateTensor> {
    states.iter().map(|s| encode_state(s, dsl)).collect()
}

/// Statement and drop heads of a single encoder (GPS, or PE on
/// single-example states).
pub struct EncoderPredictor<'a> {
    pub model: &'a EncoderModel,
}

impl Predictor for EncoderPredictor<'_> {
    fn predict(&self, states: &[&ProgramState]) -> Result<Vec<Prediction>, ShapeError> {
        let enc = encode_all(states, &self.model.cfg.dsl);
        let refs: Vec<&StateTensor> = enc.iter().collect();
        Ok(self
            .model
            .predict(&refs)?
            .into_iter()
            .map(|p| Prediction { statement: p.statement, drop: p.drop })
            .collect())
    }
}

/// `α·s_ca + (1−α)·s_gps`.
pub fn blend(s_ca: &[f32], s_gps: &[f32], alpha: f64) -> Result<Vec<f32>, ShapeError> {
    if s_ca.len() != s_gps.len() {
        return Err(ShapeError::new("blend", format!("{} vs {}", s_ca.len(), s_gps.len())));
    }
    let a = alpha as f32;
    Ok(s_ca.iter().zip(s_gps).map(|(c, g)| a * c + (1.0 - a) * g).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMode {
    /// Global search only.
    Gps,
    Ca,
    Sum,
    Mean,
    MeanU,
}

impl AggregationMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AggregationMode::Gps => "gps",
            AggregationMode::Ca => "ca",
            AggregationMode::Sum => "sum",
            AggregationMode::Mean => "mean",
            AggregationMode::MeanU => "mean_u",
        }
    }
}

impl fmt::Display for AggregationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AggregationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "gps" | "none" => AggregationMode::Gps,
            "ca" => AggregationMode::Ca,
            "sum" => AggregationMode::Sum,
            "mean" => AggregationMode::Mean,
            "mean_u" => AggregationMode::MeanU,
            other => return Err(format!("unknown aggregation mode `{other}` (gps|ca|sum|mean|mean_u)")),
        })
    }
}

/// Static baseline vectors from the PE solutions' statements. Statements are
/// indexed in slot form, as obtained by replaying each solution on its source
/// example. Not normalized.
pub fn baseline_scores(
    solutions: &[PeSolution],
    mode: AggregationMode,
    examples: &[Example],
    dsl: &DslConfig,
    vocab: &Vocabulary,
) -> Vec<f32> {
    let mut v = vec![0f32; vocab.n_statements()];
    let mut lines = 0usize;
    for sol in solutions {
        let ex = [examples[sol.source].clone()];
        let Ok((steps, _)) = replay_partial(&sol.program, &ex, dsl, first_set) else { continue };
        let w = if mode == AggregationMode::MeanU { sol.score as f32 } else { 1.0 };
        for step in steps {
            if let Some(i) = vocab.index_of(&step.statement) {
                v[i] += w;
            }
            lines += 1;
        }
    }
    if matches!(mode, AggregationMode::Mean | AggregationMode::MeanU) && lines > 0 {
        let inv = 1.0 / lines as f32;
        v.iter_mut().for_each(|x| *x *= inv);
    }
    v
}

enum AggTerm<'a> {
    None,
    Static(Vec<f32>),
    Ca { model: &'a CaModel, keys: Box<PreparedKeys>, encoder: &'a EncoderModel },
}

/// GPS predictions blended with an aggregation term. Drop probabilities come
/// from GPS only.
pub struct BlendPredictor<'a> {
    gps: &'a EncoderModel,
    alpha: f64,
    term: AggTerm<'a>,
}

impl<'a> BlendPredictor<'a> {
    /// A predictor whose aggregation term is zero.
    pub fn gps_only(gps: &'a EncoderModel, alpha: f64) -> Self {
        Self { gps, alpha, term: AggTerm::None }
    }

    pub fn with_static(gps: &'a EncoderModel, alpha: f64, scores: Vec<f32>) -> Self {
        Self { gps, alpha, term: AggTerm::Static(scores) }
    }

    /// `encoder` embeds the query states; it must be the encoder that built
    /// the keys.
    pub fn with_ca(gps: &'a EncoderModel, alpha: f64, model: &'a CaModel, keys: PreparedKeys, encoder: &'a EncoderModel) -> Self {
        Self { gps, alpha, term: AggTerm::Ca { model, keys: Box::new(keys), encoder } }
    }
}

impl Predictor for BlendPredictor<'_> {
    fn predict(&self, states: &[&ProgramState]) -> Result<Vec<Prediction>, ShapeError> {
        let enc = encode_all(states, &self.gps.cfg.dsl);
        let refs: Vec<&StateTensor> = enc.iter().collect();
        let pooled = self.gps.embed(&refs)?;
        let gps = self.gps.heads(&pooled);
        let ca: Option<Vec<Vec<f32>>> = match &self.term {
            AggTerm::None => None,
            AggTerm::Static(v) => Some(vec![v.clone(); states.len()]),
            AggTerm::Ca { .. } if self.alpha == 0.0 => None,
            AggTerm::Ca { model, keys, encoder } => {
                let queries = if std::ptr::eq(*encoder, self.gps) { pooled } else { encoder.embed(&refs)? };
                let steps: Vec<usize> = states.iter().map(|s| s.step()).collect();
                let (probs, _) = model.statement_probs(keys, &queries, &steps, false)?;
                Some((0..states.len()).map(|r| probs.row_slice(r).to_vec()).collect())
            }
        };
        gps.into_iter()
            .enumerate()
            .map(|(i, g)| {
                let statement = match &ca {
                    Some(c) => blend(&c[i], &g.statement, self.alpha)?,
                    None if self.alpha == 0.0 => g.statement,
                    None => g.statement.iter().map(|x| (1.0 - self.alpha as f32) * x).collect(),
                };
                Ok(Prediction { statement, drop: g.drop })
            })
            .collect()
    }
}

/// Growth schedule for complete-anytime beam search.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CabSchedule {
    pub beam: usize,
    pub expansion: usize,
    pub beam_factor: usize,
    pub expansion_step: usize,
    /// Iteration cap; `None` runs until success or budget exhaustion.
    pub max_iterations: Option<usize>,
}

impl Default for CabSchedule {
    fn default() -> Self {
        Self { beam: 100, expansion: 10, beam_factor: 2, expansion_step: 10, max_iterations: None }
    }
}

impl CabSchedule {
    /// `(beam size, expansion size)` of 0-based iteration `i`.
    pub fn params(&self, i: usize) -> (usize, usize) {
        let growth = self.beam_factor.saturating_pow(i.min(40) as u32);
        (self.beam.saturating_mul(growth), self.expansion.saturating_add(self.expansion_step.saturating_mul(i)))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub beam: usize,
    pub expansion: usize,
    pub nodes: u64,
    pub solved: bool,
}

#[derive(Clone, Debug)]
struct BeamNode {
    state: ProgramState,
    statements: Vec<Statement>,
    score: f64,
}

/// Outcome of one beam search or one CAB run.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchOutcome {
    pub program: Option<Program>,
    pub nodes: u64,
    pub iterations: Vec<IterationRecord>,
    /// Hex SHA-256 over the sequence of evaluated nodes.
    pub digest: String,
    pub exhausted: bool,
}

fn input_types(examples: &[Example]) -> Vec<crate::dsl::ValueType> {
    examples[0].inputs.iter().map(Value::value_type).collect()
}

fn hash_node(h: &mut Sha256, node: &BeamNode) {
    let mut buf = Vec::with_capacity(1 + 3 * node.statements.len());
    buf.push(node.statements.len() as u8);
    for s in &node.statements {
        buf.push(s.op.index() as u8);
        buf.extend(s.args().iter().map(|&a| a as u8));
        buf.push(0xff);
    }
    h.update(&buf);
}

fn ranked(scores: &[f32]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

struct BeamResult {
    program: Option<Program>,
    exhausted: bool,
}

#[allow(clippy::too_many_arguments)]
fn beam_search_inner(
    examples: &[Example],
    dsl: &DslConfig,
    vocab: &Vocabulary,
    predictor: &dyn Predictor,
    beam_size: usize,
    expansion: usize,
    max_depth: usize,
    meter: &mut Meter,
    hasher: &mut Sha256,
) -> Result<BeamResult, ShapeError> {
    let Ok(root) = init_state(examples, dsl) else {
        return Ok(BeamResult { program: None, exhausted: false });
    };
    let types = input_types(examples);
    let mut beam = vec![BeamNode { state: root, statements: Vec::new(), score: 1.0 }];
    for depth in 0..=max_depth {
        for node in &beam {
            if node.state.is_solution() {
                let p = Program::new(types.clone(), node.statements.clone());
                if examples.iter().all(|e| satisfies(&p, e)) {
                    return Ok(BeamResult { program: Some(p), exhausted: false });
                }
            }
        }
        if depth == max_depth || beam.is_empty() {
            break;
        }
        let allowed = meter.allowance().min(beam.len() as u64) as usize;
        if allowed == 0 {
            return Ok(BeamResult { program: None, exhausted: true });
        }
        let cut = allowed < beam.len();
        beam.truncate(allowed);
        let refs: Vec<&ProgramState> = beam.iter().map(|n| &n.state).collect();
        let preds = predictor.predict(&refs)?;
        meter.charge(allowed as u64);
        let mut children = Vec::new();
        for (node, pred) in beam.iter().zip(&preds) {
            hash_node(hasher, node);
            let drop = argmax(&pred.drop);
            let (mut made, mut tried) = (0, 0);
            for idx in ranked(&pred.statement) {
                if made >= expansion || tried >= 2 * expansion {
                    break;
                }
                let p = pred.statement[idx] as f64;
                if p <= 0.0 {
                    break;
                }
                tried += 1;
                let stmt = vocab.statement(idx);
                let Ok(var_stmt) = node.state.to_var_statement(&stmt) else { continue };
                let Ok(next) = drop_exec(&stmt, &node.state, drop) else { continue };
                let mut statements = node.statements.clone();
                statements.push(var_stmt);
                children.push(BeamNode { state: next, statements, score: node.score * p });
                made += 1;
            }
        }
        children.sort_by(|a, b| b.score.total_cmp(&a.score));
        children.truncate(beam_size);
        beam = children;
        if cut {
            for node in &beam {
                if node.state.is_solution() {
                    let p = Program::new(types.clone(), node.statements.clone());
                    if examples.iter().all(|e| satisfies(&p, e)) {
                        return Ok(BeamResult { program: Some(p), exhausted: true });
                    }
                }
            }
            return Ok(BeamResult { program: None, exhausted: true });
        }
    }
    Ok(BeamResult { program: None, exhausted: false })
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Single beam search with fixed beam and expansion sizes.
pub fn beam_search(
    examples: &[Example],
    predictor: &dyn Predictor,
    dsl: &DslConfig,
    beam_size: usize,
    expansion: usize,
    max_depth: usize,
    budget: Budget,
) -> Result<SearchOutcome, ShapeError> {
    let vocab = Vocabulary::new(dsl.slots);
    let mut meter = Meter::new(budget);
    let mut h = Sha256::new();
    let r = beam_search_inner(examples, dsl, &vocab, predictor, beam_size, expansion, max_depth, &mut meter, &mut h)?;
    let solved = r.program.is_some();
    Ok(SearchOutcome {
        program: r.program,
        nodes: meter.nodes(),
        iterations: vec![IterationRecord { beam: beam_size, expansion, nodes: meter.nodes(), solved }],
        digest: hex(&h.finalize()),
        exhausted: r.exhausted,
    })
}

/// Repeated beam searches with growing beam and expansion sizes until a
/// solution is found or the budget runs out.
pub fn cab(
    examples: &[Example],
    predictor: &dyn Predictor,
    dsl: &DslConfig,
    schedule: &CabSchedule,
    max_depth: usize,
    budget: Budget,
) -> Result<SearchOutcome, ShapeError> {
    let vocab = Vocabulary::new(dsl.slots);
    let mut meter = Meter::new(budget);
    let mut h = Sha256::new();
    let mut iterations = Vec::new();
    let mut program = None;
    let mut exhausted = false;
    for i in 0.. {
        if schedule.max_iterations.is_some_and(|m| i >= m) || meter.allowance() == 0 {
            exhausted = meter.allowance() == 0;
            break;
        }
        let (beam, expansion) = schedule.params(i);
        let before = meter.nodes();
        let r = beam_search_inner(examples, dsl, &vocab, predictor, beam, expansion, max_depth, &mut meter, &mut h)?;
        let solved = r.program.is_some();
        iterations.push(IterationRecord { beam, expansion, nodes: meter.nodes() - before, solved });
        if solved {
            program = r.program;
            break;
        }
        if r.exhausted {
            exhausted = true;
            break;
        }
        if meter.nodes() == before {
            // Nothing can be evaluated (e.g. the examples are malformed).
            break;
        }
    }
    Ok(SearchOutcome { program, nodes: meter.nodes(), iterations, digest: hex(&h.finalize()), exhausted })
}

/// A program found by a per-example search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeSolution {
    pub program: Program,
    /// Fraction of all examples satisfied.
    pub score: f64,
    /// 0-based indices of satisfied examples.
    pub satisfied: Vec<usize>,
    /// Example the search was run on.
    pub source: usize,
    pub nodes: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seconds: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeMode {
    /// Search every example (unless a perfect solution appears).
    All,
    /// Stop once the satisfied sets cover every example.
    Tot,
}

impl FromStr for PeMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all" => Ok(PeMode::All),
            "tot" => Ok(PeMode::Tot),
            other => Err(format!("unknown PE mode `{other}` (all|tot)")),
        }
    }
}

/// One per-example search, successful or not.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeAttempt {
    pub example: usize,
    pub found: bool,
    pub score: f64,
    pub nodes: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PeReport {
    pub solutions: Vec<PeSolution>,
    pub attempts: Vec<PeAttempt>,
    /// Index into `solutions` of a solution satisfying every example.
    pub perfect: Option<usize>,
    pub nodes: u64,
    pub seconds: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeSearchConfig {
    pub budget: Budget,
    pub mode: PeMode,
    pub schedule: CabSchedule,
    pub max_depth: usize,
    /// Run the searches concurrently. Results are still consumed in example
    /// order.
    pub parallel: bool,
}

fn one_pe_search(
    j: usize,
    examples: &[Example],
    predictor: &dyn Predictor,
    dsl: &DslConfig,
    cfg: &PeSearchConfig,
) -> Result<(Option<PeSolution>, PeAttempt), ShapeError> {
    let start = Instant::now();
    let out = cab(&examples[j..j + 1], predictor, dsl, &cfg.schedule, cfg.max_depth, cfg.budget)?;
    let seconds = (!cfg.budget.is_nodes()).then(|| start.elapsed().as_secs_f64());
    let sol = out.program.map(|program| {
        let s = solution_score(&program, examples);
        PeSolution { program, score: s.score, satisfied: s.satisfied, source: j, nodes: out.nodes, seconds }
    });
    let attempt = PeAttempt {
        example: j,
        found: sol.is_some(),
        score: sol.as_ref().map_or(0.0, |s| s.score),
        nodes: out.nodes,
    };
    Ok((sol, attempt))
}

/// Per-example searches in example order, stopping early on a perfect
/// solution (and, in `Tot` mode, once every example is covered).
pub fn pe_searches(
    examples: &[Example],
    predictor: &dyn Predictor,
    dsl: &DslConfig,
    cfg: &PeSearchConfig,
) -> Result<PeReport, ShapeError> {
    let start = Instant::now();
    let n = examples.len();
    let results: Vec<Result<(Option<PeSolution>, PeAttempt), ShapeError>> = if cfg.parallel {
        std::thread::scope(|s| {
            let handles: Vec<_> =
                (0..n).map(|j| s.spawn(move || one_pe_search(j, examples, predictor, dsl, cfg))).collect();
            handles.into_iter().map(|h| h.join().expect("PE search thread panicked")).collect()
        })
    } else {
        Vec::new()
    };
    let mut results = results.into_iter();
    let mut report = PeReport { solutions: Vec::new(), attempts: Vec::new(), perfect: None, nodes: 0, seconds: 0.0 };
    let mut covered = BTreeSet::new();
    for j in 0..n {
        let (sol, attempt) = if cfg.parallel {
            results.next().expect("one result per example")?
        } else {
            one_pe_search(j, examples, predictor, dsl, cfg)?
        };
        report.nodes += attempt.nodes;
        report.attempts.push(attempt);
        if let Some(sol) = sol {
            covered.extend(sol.satisfied.iter().copied());
            let perfect = sol.satisfied.len() == n;
            report.solutions.push(sol);
            if perfect {
                report.perfect = Some(report.solutions.len() - 1);
                break;
            }
            if cfg.mode == PeMode::Tot && covered.len() == n {
                break;
            }
        }
    }
    report.seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Trained models used by [`synthesize`].
pub struct Models<'a> {
    pub gps: &'a EncoderModel,
    pub pe: Option<&'a EncoderModel>,
    pub ca: Option<&'a CaModel>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub alpha: f64,
    pub peps_budget: Budget,
    pub total_budget: Budget,
    pub mode: AggregationMode,
    pub pe_mode: PeMode,
    pub schedule: CabSchedule,
    pub max_depth: usize,
    pub parallel_pe: bool,
    pub seed: u64,
}

impl PipelineConfig {
    pub fn validate(&self, n: usize) -> Result<(), SearchError> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(SearchError::Config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if self.max_depth == 0 {
            return Err(SearchError::Config("max_depth must be positive".into()));
        }
        if self.mode == AggregationMode::Gps {
            return Ok(());
        }
        let ok = match (self.peps_budget, self.total_budget) {
            (Budget::Nodes(p), Budget::Nodes(t)) => p > 0 && (n as u64) * p < t,
            (Budget::Seconds(p), Budget::Seconds(t)) => p > 0.0 && n as f64 * p < t,
            _ => return Err(SearchError::Config("PE and total budgets must use the same unit".into())),
        };
        if !ok {
            return Err(SearchError::Config(format!(
                "need 0 < {n} x {} < {}",
                self.peps_budget, self.total_budget
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Solved,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeRecord {
    pub program: String,
    pub u: f64,
    pub satisfied: Vec<usize>,
    pub source: usize,
    pub nodes: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seconds: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthesisResult {
    pub status: Status,
    pub program: Option<String>,
    /// Whether the program came straight from a per-example search.
    pub perfect_pe: bool,
    pub pe_solutions: Vec<PeRecord>,
    pub pe_attempts: Vec<PeAttempt>,
    pub mode: AggregationMode,
    pub alpha: f64,
    pub peps_budget: Budget,
    pub total_budget: Budget,
    /// Budget handed to the aggregated search (total minus PE consumption).
    pub aggregation_budget: Budget,
    pub seed: u64,
    pub pe_nodes: u64,
    pub aggregation_nodes: u64,
    pub total_nodes: u64,
    pub iterations: Vec<IterationRecord>,
    pub digest: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seconds: Option<f64>,
}

/// Full pipeline: per-example searches, then a global search guided by the
/// blended predictor.
pub fn synthesize(examples: &[Example], models: &Models<'_>, cfg: &PipelineConfig) -> Result<SynthesisResult, SearchError> {
    cfg.validate(examples.len())?;
    let start = Instant::now();
    let dsl = models.gps.cfg.dsl;
    let vocab = Vocabulary::new(dsl.slots);
    let node_mode = cfg.total_budget.is_nodes();
    let mut result = SynthesisResult {
        status: Status::Failed,
        program: None,
        perfect_pe: false,
        pe_solutions: Vec::new(),
        pe_attempts: Vec::new(),
        mode: cfg.mode,
        alpha: cfg.alpha,
        peps_budget: cfg.peps_budget,
        total_budget: cfg.total_budget,
        aggregation_budget: cfg.total_budget,
        seed: cfg.seed,
        pe_nodes: 0,
        aggregation_nodes: 0,
        total_nodes: 0,
        iterations: Vec::new(),
        digest: String::new(),
        seconds: None,
    };

    let mut solutions = Vec::new();
    if cfg.mode != AggregationMode::Gps {
        let pe = models.pe.ok_or_else(|| SearchError::Config("PE model required".into()))?;
        let pe_cfg = PeSearchConfig {
            budget: cfg.peps_budget,
            mode: cfg.pe_mode,
            schedule: cfg.schedule,
            max_depth: cfg.max_depth,
            parallel: cfg.parallel_pe,
        };
        let report = pe_searches(examples, &EncoderPredictor { model: pe }, &dsl, &pe_cfg)?;
        result.pe_nodes = report.nodes;
        result.pe_attempts = report.attempts.clone();
        result.pe_solutions = report
            .solutions
            .iter()
            .map(|s| PeRecord {
                program: format_program(&s.program),
                u: s.score,
                satisfied: s.satisfied.clone(),
                source: s.source,
                nodes: s.nodes,
                seconds: s.seconds,
            })
            .collect();
        if let Some(i) = report.perfect {
            result.status = Status::Solved;
            result.program = Some(format_program(&report.solutions[i].program));
            result.perfect_pe = true;
            result.total_nodes = result.pe_nodes;
            result.aggregation_budget = match cfg.total_budget {
                Budget::Nodes(t) => Budget::Nodes(t.saturating_sub(report.nodes)),
                Budget::Seconds(t) => Budget::Seconds((t - report.seconds).max(0.0)),
            };
            if !node_mode {
                result.seconds = Some(start.elapsed().as_secs_f64());
            }
            return Ok(result);
        }
        result.aggregation_budget = match cfg.total_budget {
            Budget::Nodes(t) => Budget::Nodes(t.saturating_sub(report.nodes)),
            Budget::Seconds(t) => Budget::Seconds((t - start.elapsed().as_secs_f64()).max(0.0)),
        };
        solutions = report.solutions;
    }

    let predictor = match cfg.mode {
        AggregationMode::Gps => BlendPredictor::gps_only(models.gps, 0.0),
        _ if solutions.is_empty() => BlendPredictor::gps_only(models.gps, cfg.alpha),
        AggregationMode::Ca => {
            let ca = models.ca.ok_or_else(|| SearchError::Config("CA model required".into()))?;
            let encoder = match ca.cfg.variant {
                KeyVariant::Pg => models.gps,
                KeyVariant::Default | KeyVariant::Pp => {
                    models.pe.ok_or_else(|| SearchError::Config("PE model required".into()))?
                }
            };
            match assemble_keyset(&solutions, ca.cfg.variant, examples, encoder, &vocab) {
                Ok(keyset) => BlendPredictor::with_ca(models.gps, cfg.alpha, ca, ca.prepare(keyset)?, encoder),
                Err(crate::aggregator::AggregatorError::Shape(e)) => return Err(e.into()),
                Err(_) => BlendPredictor::gps_only(models.gps, cfg.alpha),
            }
        }
        mode => BlendPredictor::with_static(
            models.gps,
            cfg.alpha,
            baseline_scores(&solutions, mode, examples, &dsl, &vocab),
        ),
    };
    let out = cab(examples, &predictor, &dsl, &cfg.schedule, cfg.max_depth, result.aggregation_budget)?;
    result.aggregation_nodes = out.nodes;
    result.total_nodes = result.pe_nodes + out.nodes;
    result.iterations = out.iterations;
    result.digest = out.digest;
    if let Some(p) = out.program {
        result.status = Status::Solved;
        result.program = Some(format_program(&p));
    }
    if !node_mode {
        result.seconds = Some(start.elapsed().as_secs_f64());
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse_program;
    use crate::state::replay;

    /// Puts probability 1 on the slot-form statement of a fixed program at
    /// each step.
    struct Oracle {
        steps: Vec<usize>,
        n_s: usize,
        slots: usize,
    }

    impl Oracle {
        fn new(text: &str, examples: &[Example]) -> Self {
            let dsl = DslConfig::default();
            let vocab = Vocabulary::new(dsl.slots);
            let (steps, _) = replay(&parse_program(text).unwrap(), examples, &dsl, first_set).unwrap();
            Self {
                steps: steps.iter().map(|s| vocab.index_of(&s.statement).unwrap()).collect(),
                n_s: vocab.n_statements(),
                slots: dsl.slots,
            }
        }
    }

    impl Predictor for Oracle {
        fn predict(&self, states: &[&ProgramState]) -> Result<Vec<Prediction>, ShapeError> {
            Ok(states
                .iter()
                .map(|s| {
                    let mut statement = vec![0.0; self.n_s];
                    if let Some(&i) = self.steps.get(s.step()) {
                        statement[i] = 1.0;
                    }
                    Prediction { statement, drop: vec![0.0; self.slots] }
                })
                .collect())
        }
    }

    fn sort_reverse_examples() -> Vec<Example> {
        (0..5)
            .map(|i| {
                let l = vec![i, 3 - i, 7, -2 * i];
                let mut o = l.clone();
                o.sort();
                o.reverse();
                Example::new(vec![Value::List(l)], Value::List(o))
            })
            .collect()
    }

    #[test]
    fn oracle_solves_two_lines_with_two_expansions() {
        let ex = sort_reverse_examples();
        let text = "a <- LIST\nb <- SORT a\nc <- REVERSE b";
        let o = Oracle::new(text, &ex);
        let out = beam_search(&ex, &o, &DslConfig::default(), 100, 10, 3, Budget::Nodes(1000)).unwrap();
        assert_eq!(format_program(&out.program.unwrap()), text);
        assert_eq!(out.nodes, 2);
    }

    #[test]
    fn zero_budget_fails() {
        let ex = sort_reverse_examples();
        let o = Oracle::new("a <- LIST\nb <- SORT a\nc <- REVERSE b", &ex);
        let out = beam_search(&ex, &o, &DslConfig::default(), 100, 10, 3, Budget::Nodes(0)).unwrap();
        assert!(out.program.is_none());
        assert_eq!(out.nodes, 0);
        assert!(out.exhausted);
    }

    #[test]
    fn solution_checked_before_expansion() {
        let ex: Vec<Example> = sort_reverse_examples()
            .into_iter()
            .map(|e| {
                let mut l = e.inputs[0].as_list().unwrap().to_vec();
                l.sort();
                Example::new(e.inputs, Value::List(l))
            })
            .collect();
        let o = Oracle::new("a <- LIST\nb <- SORT a", &ex);
        let out = beam_search(&ex, &o, &DslConfig::default(), 100, 10, 3, Budget::Nodes(1000)).unwrap();
        assert!(out.program.is_some());
        assert_eq!(out.nodes, 1);
    }

    #[test]
    fn cab_schedule_grows() {
        let ex = sort_reverse_examples();
        // Wrong first line: never solves within depth 1.
        let o = Oracle::new("a <- LIST\nb <- REVERSE a", &ex);
        let out = cab(&ex, &o, &DslConfig::default(), &CabSchedule::default(), 1, Budget::Nodes(3)).unwrap();
        let params: Vec<(usize, usize)> = out.iterations.iter().map(|r| (r.beam, r.expansion)).collect();
        assert_eq!(params, vec![(100, 10), (200, 20), (400, 30)]);
        assert!(out.program.is_none());
    }

    #[test]
    fn cab_single_iteration_on_success() {
        let ex = sort_reverse_examples();
        let o = Oracle::new("a <- LIST\nb <- SORT a\nc <- REVERSE b", &ex);
        let a = cab(&ex, &o, &DslConfig::default(), &CabSchedule::default(), 3, Budget::Nodes(50)).unwrap();
        let b = cab(&ex, &o, &DslConfig::default(), &CabSchedule::default(), 3, Budget::Nodes(50)).unwrap();
        assert_eq!(a.iterations.len(), 1);
        assert_eq!(a, b);
    }

    #[test]
    fn blend_examples() {
        let r = blend(&[0.9, 0.1], &[0.5, 0.5], 0.8).unwrap();
        assert!((r[0] - 0.82).abs() < 1e-6 && (r[1] - 0.18).abs() < 1e-6);
        assert_eq!(blend(&[0.9, 0.1], &[0.3, 0.7], 0.0).unwrap(), vec![0.3, 0.7]);
        assert_eq!(blend(&[0.9, 0.1], &[0.3, 0.7], 1.0).unwrap(), vec![0.9, 0.1]);
        assert!(blend(&[1.0], &[0.5, 0.5], 0.5).is_err());
    }

    #[test]
    fn baselines_count_statements() {
        let ex = sort_reverse_examples();
        let dsl = DslConfig::default();
        let vocab = Vocabulary::new(dsl.slots);
        let sol = |t: &str, u: f64| PeSolution {
            program: parse_program(t).unwrap(),
            score: u,
            satisfied: vec![0],
            source: 0,
            nodes: 0,
            seconds: None,
        };
        let p = vec![sol("a <- LIST\nb <- SORT a\nc <- REVERSE b", 0.2), sol("a <- LIST\nb <- SORT a", 0.2)];
        let sort = vocab.index_of(&vocab.statements().iter().find(|s| s.op.to_string() == "SORT").unwrap().clone()).unwrap();
        let sum = baseline_scores(&p, AggregationMode::Sum, &ex, &dsl, &vocab);
        let mean = baseline_scores(&p, AggregationMode::Mean, &ex, &dsl, &vocab);
        assert_eq!(sum[sort], 2.0);
        assert!((mean[sort] - 2.0 / 3.0).abs() < 1e-6);
        assert_eq!(argmax(&sum), argmax(&mean));
        let zero: Vec<PeSolution> = p.into_iter().map(|mut s| { s.score = 0.0; s }).collect();
        assert!(baseline_scores(&zero, AggregationMode::MeanU, &ex, &dsl, &vocab).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn budget_text_round_trip() {
        for s in ["nodes:20000", "seconds:5", "seconds:0.5"] {
            assert_eq!(s.parse::<Budget>().unwrap().to_string(), s);
        }
        assert!("minutes:3".parse::<Budget>().is_err());
        assert!("seconds:-1".parse::<Budget>().is_err());
    }
}
