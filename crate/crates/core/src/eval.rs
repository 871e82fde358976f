//! Experiment harness: success ratios, tot/ind coverage, operator overlap,
//! failure breakdowns, perfect-PE fraction, intent generalization, attention
//! export and nearest statements.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregator::{assemble_keyset, AggregatorError, CaModel};
use crate::datagen::DatasetRecord;
use crate::dsl::{parse_program, satisfies, Example, Program, Vocabulary};
use crate::encoder::EncoderModel;
use crate::nn::ShapeError;
use crate::search::{
    cab, pe_searches, EncoderPredictor, Models, PeMode, PeSearchConfig, PeSolution, PipelineConfig, SearchError, Status,
    SynthesisResult, synthesize,
};
use crate::state::{encode_state, first_set, replay_partial, StateTensor};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty split")]
    Empty,
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error(transparent)]
    Aggregator(#[from] AggregatorError),
    #[error("tot/ind dominance violated on task {task} at k = {k}")]
    Dominance { task: usize, k: usize },
    #[error("statement index {0} out of range")]
    Statement(usize),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub task: usize,
    /// Claimed success that also re-verified on every example.
    pub success: bool,
    pub result: SynthesisResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub tasks: usize,
    pub successes: usize,
    pub success_ratio: f64,
    pub mean_nodes: f64,
    pub median_nodes: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mean_seconds: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: PipelineConfig,
    pub seed: u64,
    pub results: Vec<TaskResult>,
    pub summary: EvalSummary,
}

impl EvalReport {
    /// JSONL: config line, one line per task, summary line.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        let line = |w: &mut W, v: serde_json::Value| -> io::Result<()> {
            serde_json::to_writer(&mut *w, &v)?;
            w.write_all(b"\n")
        };
        line(&mut w, serde_json::json!({ "header": { "config": self.config, "seed": self.seed } }))?;
        for r in &self.results {
            line(&mut w, serde_json::to_value(r).expect("serializable"))?;
        }
        line(&mut w, serde_json::json!({ "summary": self.summary }))?;
        w.flush()
    }
}

fn verified(result: &SynthesisResult, examples: &[Example]) -> bool {
    result.status == Status::Solved
        && result
            .program
            .as_deref()
            .and_then(|t| parse_program(t).ok())
            .is_some_and(|p| examples.iter().all(|e| satisfies(&p, e)))
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Runs the pipeline on every task and re-verifies each claimed success.
pub fn eval_success(tasks: &[DatasetRecord], models: &Models<'_>, cfg: &PipelineConfig) -> Result<EvalReport, EvalError> {
    if tasks.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut results = Vec::with_capacity(tasks.len());
    for (i, t) in tasks.iter().enumerate() {
        let result = synthesize(&t.examples, models, cfg)?;
        let success = verified(&result, &t.examples);
        if result.status == Status::Solved && !success {
            log::error!("task {i}: claimed solution failed re-verification");
        }
        results.push(TaskResult { task: i, success, result });
    }
    let successes = results.iter().filter(|r| r.success).count();
    let nodes: Vec<f64> = results.iter().map(|r| r.result.total_nodes as f64).collect();
    let secs: Option<Vec<f64>> = results.iter().map(|r| r.result.seconds).collect();
    let summary = EvalSummary {
        tasks: tasks.len(),
        successes,
        success_ratio: successes as f64 / tasks.len() as f64,
        mean_nodes: nodes.iter().sum::<f64>() / nodes.len() as f64,
        median_nodes: median(nodes),
        mean_seconds: secs.map(|s| s.iter().sum::<f64>() / s.len() as f64),
    };
    Ok(EvalReport { config: *cfg, seed: cfg.seed, results, summary })
}

/// Per-task coverage outcomes for k = 1..=N.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TotIndTask {
    pub task: usize,
    pub satisfied_sets: Vec<Vec<usize>>,
    pub tot: Vec<bool>,
    pub ind: Vec<bool>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub gps: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TotIndRow {
    pub k: usize,
    pub tot: f64,
    pub ind: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TotIndTable {
    pub rows: Vec<TotIndRow>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub gps: Option<f64>,
    pub tasks: Vec<TotIndTask>,
}

/// `tot[k-1]`: the union of satisfied sets has ≥ k examples. `ind[k-1]`: one
/// set alone has ≥ k.
pub fn tot_ind_flags(sets: &[Vec<usize>], n: usize) -> (Vec<bool>, Vec<bool>) {
    let union: BTreeSet<usize> = sets.iter().flatten().copied().collect();
    let best = sets.iter().map(Vec::len).max().unwrap_or(0);
    ((1..=n).map(|k| union.len() >= k).collect(), (1..=n).map(|k| best >= k).collect())
}

/// Sequential per-example searches on every task (each with `pe_cfg.budget`),
/// tabulating tot(k) and ind(k). With `gps`, also runs global search with
/// `gps_budget`. Fails if some ind(k) success is not a tot(k) success.
pub fn analyze_tot_ind(
    tasks: &[DatasetRecord],
    pe: &EncoderModel,
    pe_cfg: &PeSearchConfig,
    gps: Option<(&EncoderModel, crate::search::Budget)>,
) -> Result<TotIndTable, EvalError> {
    if tasks.is_empty() {
        return Err(EvalError::Empty);
    }
    let cfg = PeSearchConfig { mode: PeMode::All, ..*pe_cfg };
    let predictor = EncoderPredictor { model: pe };
    let n = tasks[0].examples.len();
    let mut rows_tot = vec![0usize; n];
    let mut rows_ind = vec![0usize; n];
    let mut out = Vec::with_capacity(tasks.len());
    let mut gps_hits = 0;
    for (i, t) in tasks.iter().enumerate() {
        let report = pe_searches(&t.examples, &predictor, &pe.cfg.dsl, &cfg)?;
        let sets: Vec<Vec<usize>> = report.solutions.iter().map(|s| s.satisfied.clone()).collect();
        let (tot, ind) = tot_ind_flags(&sets, n);
        for k in 0..n {
            if ind[k] && !tot[k] {
                return Err(EvalError::Dominance { task: i, k: k + 1 });
            }
            rows_tot[k] += tot[k] as usize;
            rows_ind[k] += ind[k] as usize;
        }
        let gps_ok = match gps {
            Some((g, budget)) => {
                let o = cab(&t.examples, &EncoderPredictor { model: g }, &g.cfg.dsl, &cfg.schedule, cfg.max_depth, budget)?;
                let ok = o.program.is_some_and(|p| t.examples.iter().all(|e| satisfies(&p, e)));
                gps_hits += ok as usize;
                Some(ok)
            }
            None => None,
        };
        out.push(TotIndTask { task: i, satisfied_sets: sets, tot, ind, gps: gps_ok });
    }
    let m = tasks.len() as f64;
    Ok(TotIndTable {
        rows: (0..n)
            .map(|k| TotIndRow { k: k + 1, tot: rows_tot[k] as f64 / m, ind: rows_ind[k] as f64 / m })
            .collect(),
        gps: gps.map(|_| gps_hits as f64 / m),
        tasks: out,
    })
}

fn pe_programs(r: &SynthesisResult) -> Vec<Program> {
    r.pe_solutions.iter().filter_map(|s| parse_program(&s.program).ok()).collect()
}

/// Fraction of ground-truth statements whose operator (function and lambda,
/// arguments ignored) appears in some PE solution of the same task.
pub fn operator_overlap(results: &[SynthesisResult], tasks: &[DatasetRecord]) -> f64 {
    let (mut hit, mut total) = (0usize, 0usize);
    for (r, t) in results.iter().zip(tasks) {
        let ops: BTreeSet<usize> =
            pe_programs(r).iter().flat_map(|p| p.statements.iter().map(|s| s.op.index())).collect();
        for s in &t.program.statements {
            total += 1;
            hit += ops.contains(&s.op.index()) as usize;
        }
    }
    if total == 0 {
        0.0
    } else {
        hit as f64 / total as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailureRate {
    pub occurrences: usize,
    pub in_failures: usize,
    pub rate: f64,
}

/// Per DSL function: occurrences in ground-truth programs of failed tasks over
/// all occurrences.
pub fn failure_breakdown(results: &[TaskResult], tasks: &[DatasetRecord]) -> BTreeMap<String, FailureRate> {
    let mut counts: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for r in results {
        let Some(t) = tasks.get(r.task) else { continue };
        for s in &t.program.statements {
            let e = counts.entry(s.op.function.name().to_string()).or_default();
            e.0 += 1;
            e.1 += (!r.success) as usize;
        }
    }
    counts
        .into_iter()
        .map(|(k, (occ, fail))| (k, FailureRate { occurrences: occ, in_failures: fail, rate: fail as f64 / occ as f64 }))
        .collect()
}

/// Fraction of tasks solved directly by a perfect per-example solution.
pub fn perfect_pe_fraction(results: &[SynthesisResult]) -> f64 {
    if results.is_empty() {
        return 0.0;
    }
    results.iter().filter(|r| r.perfect_pe && r.status == Status::Solved).count() as f64 / results.len() as f64
}

/// Fraction of tasks whose synthesized program also satisfies every held-out
/// example. Failed tasks count in the denominator only.
pub fn intent_generalization(results: &[TaskResult], extra: &[Vec<Example>]) -> f64 {
    if results.is_empty() {
        return 0.0;
    }
    let ok = results
        .iter()
        .filter(|r| r.success)
        .filter(|r| {
            let Some(ex) = extra.get(r.task) else { return false };
            r.result
                .program
                .as_deref()
                .and_then(|t| parse_program(t).ok())
                .is_some_and(|p| ex.iter().all(|e| satisfies(&p, e)))
        })
        .count();
    ok as f64 / results.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeyDescriptor {
    pub m: usize,
    pub subset: Vec<usize>,
    pub t: usize,
    pub statement: usize,
    pub u: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepAttention {
    pub t: usize,
    /// `heads[h][key]`.
    pub heads: Vec<Vec<f32>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionTrace {
    pub keys: Vec<KeyDescriptor>,
    pub steps: Vec<StepAttention>,
}

/// Attention weights at every step of `program` replayed on the examples
/// (teacher-forced with the ground truth, or traced along a found program).
pub fn export_attention(
    examples: &[Example],
    program: &Program,
    solutions: &[PeSolution],
    ca: &CaModel,
    encoder: &EncoderModel,
) -> Result<AttentionTrace, EvalError> {
    let vocab = Vocabulary::new(encoder.cfg.dsl.slots);
    let keyset = assemble_keyset(solutions, ca.cfg.variant, examples, encoder, &vocab)?;
    let keys = keyset
        .tuples
        .iter()
        .zip(&keyset.statements)
        .zip(&keyset.u)
        .map(|((tup, &statement), &u)| KeyDescriptor { m: tup.m, subset: tup.subset.clone(), t: tup.t, statement, u })
        .collect();
    let prepared = ca.prepare(keyset)?;
    let dsl = encoder.cfg.dsl;
    let steps = match replay_partial(program, examples, &dsl, first_set) {
        Ok((steps, _)) => steps,
        Err(_) => Vec::new(),
    };
    let states: Vec<StateTensor> = steps.iter().map(|s| encode_state(&s.state, &dsl)).collect();
    if states.is_empty() {
        return Ok(AttentionTrace { keys, steps: Vec::new() });
    }
    let refs: Vec<&StateTensor> = states.iter().collect();
    let queries = encoder.embed(&refs)?;
    let t: Vec<usize> = (0..states.len()).collect();
    let (_, weights) = ca.statement_probs(&prepared, &queries, &t, true)?;
    Ok(AttentionTrace {
        keys,
        steps: weights.into_iter().enumerate().map(|(t, heads)| StepAttention { t, heads }).collect(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Euclidean,
    Cosine,
}

impl std::str::FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "euclidean" => Ok(Metric::Euclidean),
            "cosine" => Ok(Metric::Cosine),
            other => Err(format!("unknown metric `{other}` (euclidean|cosine)")),
        }
    }
}

/// The `k` statements closest to `statement` in the aggregator's statement
/// output embedding (its column of the `Z × n_s` output projection). The
/// statement itself is excluded; ties break by index.
pub fn nearest_statements(ca: &CaModel, statement: usize, k: usize, metric: Metric) -> Result<Vec<(usize, f64)>, EvalError> {
    let w = ca.params.get("ca.out.statement.w").expect("validated parameter");
    let (z, n_s) = (w.rows(), w.cols());
    if statement >= n_s {
        return Err(EvalError::Statement(statement));
    }
    let col = |j: usize| -> Vec<f64> { (0..z).map(|r| w.data[r * n_s + j] as f64).collect() };
    let a = col(statement);
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut d: Vec<(usize, f64)> = (0..n_s)
        .filter(|&j| j != statement)
        .map(|j| {
            let b = col(j);
            let dist = match metric {
                Metric::Euclidean => a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
                Metric::Cosine => {
                    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
                    let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
                    1.0 - dot / (na * nb).max(1e-12)
                }
            };
            (j, dist)
        })
        .collect();
    d.sort_by(|x, y| x.1.total_cmp(&y.1).then(x.0.cmp(&y.0)));
    d.truncate(k);
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::search::{AggregationMode, Budget, PeRecord};

    fn result(status: Status, program: Option<&str>, pe: &[&str], perfect: bool) -> SynthesisResult {
        SynthesisResult {
            status,
            program: program.map(str::to_string),
            perfect_pe: perfect,
            pe_solutions: pe
                .iter()
                .map(|p| PeRecord { program: p.to_string(), u: 0.2, satisfied: vec![0], source: 0, nodes: 1, seconds: None })
                .collect(),
            pe_attempts: Vec::new(),
            mode: AggregationMode::Ca,
            alpha: 0.5,
            peps_budget: Budget::Nodes(1),
            total_budget: Budget::Nodes(10),
            aggregation_budget: Budget::Nodes(9),
            seed: 0,
            pe_nodes: 1,
            aggregation_nodes: 0,
            total_nodes: 1,
            iterations: Vec::new(),
            digest: String::new(),
            seconds: None,
        }
    }

    fn task(text: &str) -> DatasetRecord {
        DatasetRecord { program: parse_program(text).unwrap(), examples: Vec::new() }
    }

    #[test]
    fn tot_ind_set_arithmetic() {
        let (tot, ind) = tot_ind_flags(&[vec![0, 3], vec![1, 2, 4]], 5);
        assert!(ind[2] && !ind[3]);
        assert!(tot[4]);
        assert_eq!(tot[0], ind[0]);
        assert!(ind.iter().zip(&tot).all(|(&i, &t)| !i || t));
        let (tot, ind) = tot_ind_flags(&[], 5);
        assert!(tot.iter().chain(&ind).all(|&b| !b));
    }

    #[test]
    fn operator_overlap_counts() {
        let t = task("a <- LIST\nb <- SORT a\nc <- REVERSE b\nd <- MAP *2 c\ne <- SUM d");
        let none = result(Status::Failed, None, &[], false);
        assert_eq!(operator_overlap(&[none], std::slice::from_ref(&t)), 0.0);
        let all = result(Status::Failed, None, &["a <- LIST\nb <- SORT a\nc <- REVERSE b\nd <- MAP *2 c\ne <- SUM d"], false);
        assert_eq!(operator_overlap(&[all], std::slice::from_ref(&t)), 1.0);
        let three = result(Status::Failed, None, &["a <- LIST\nb <- SORT a\nc <- MAP *2 b", "a <- LIST\nb <- SUM a"], false);
        assert_eq!(operator_overlap(&[three], &[t]), 0.75);
    }

    #[test]
    fn perfect_fraction_and_intent() {
        let ex = Example::new(vec![crate::dsl::Value::List(vec![2, 1])], crate::dsl::Value::List(vec![1, 2]));
        let r = result(Status::Solved, Some("a <- LIST\nb <- SORT a"), &["a <- LIST\nb <- SORT a"], true);
        assert_eq!(perfect_pe_fraction(std::slice::from_ref(&r)), 1.0);
        let tr = TaskResult { task: 0, success: true, result: r.clone() };
        assert_eq!(intent_generalization(std::slice::from_ref(&tr), &[vec![ex.clone()]]), 1.0);
        let wrong = Example::new(ex.inputs.clone(), crate::dsl::Value::List(vec![2, 1]));
        assert_eq!(intent_generalization(&[tr], &[vec![wrong]]), 0.0);
        let failed = TaskResult { task: 0, success: false, result: result(Status::Failed, None, &[], false) };
        assert_eq!(intent_generalization(&[failed], &[vec![ex]]), 0.0);
    }

    #[test]
    fn failure_rates_by_function() {
        let tasks = vec![task("a <- LIST\nb <- SORT a"), task("a <- LIST\nb <- SORT a\nc <- SUM b")];
        let rs = vec![
            TaskResult { task: 0, success: true, result: result(Status::Solved, None, &[], false) },
            TaskResult { task: 1, success: false, result: result(Status::Failed, None, &[], false) },
        ];
        let b = failure_breakdown(&rs, &tasks);
        assert_eq!(b["SORT"].rate, 0.5);
        assert_eq!(b["SUM"].rate, 1.0);
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
