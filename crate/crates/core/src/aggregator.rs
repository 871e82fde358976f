//! Cross aggregator: execution-tuple keys, relative multi-head attention and
//! the single attention block that maps a global state to statement and
//! operator predictions.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::{Example, Vocabulary};
use crate::encoder::{EncoderModel, ModelKind, ModelMeta, N_OPERATORS};
use crate::nn::{
    seeded_rng, softmax_in_place, Checkpoint, CheckpointError, ParamStore, Scalar, ShapeError, Tape, Tensor, Var,
    LAYER_NORM_EPS,
};
use crate::search::PeSolution;
use crate::state::{encode_state, first_set, replay_partial, StateTensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyVariant {
    /// One tuple per (solution, example, step).
    Default,
    /// One tuple per (solution, step), executed on all examples.
    Pg,
    /// Like `Default`, restricted to the examples each solution satisfies.
    Pp,
}

impl KeyVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            KeyVariant::Default => "default",
            KeyVariant::Pg => "pg",
            KeyVariant::Pp => "pp",
        }
    }

    /// Which encoder embeds key states.
    pub fn key_encoder(self) -> ModelKind {
        match self {
            KeyVariant::Pg => ModelKind::Gps,
            KeyVariant::Default | KeyVariant::Pp => ModelKind::Pe,
        }
    }
}

impl fmt::Display for KeyVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for KeyVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "default" => Ok(KeyVariant::Default),
            "pg" => Ok(KeyVariant::Pg),
            "pp" => Ok(KeyVariant::Pp),
            other => Err(format!("unknown key variant `{other}` (default|pg|pp)")),
        }
    }
}

#[derive(Debug, Error)]
pub enum AggregatorError {
    #[error("no PE solutions to build keys from")]
    EmptyInput,
    #[error("no execution tuple could be executed")]
    NoKeys,
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// `(m, S, t)`: solution index, 0-based example subset, step.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ExecutionTuple {
    pub m: usize,
    pub subset: Vec<usize>,
    pub t: usize,
}

/// Execution tuples in canonical order (m asc, example asc, t asc).
pub fn build_key_tuples(
    solutions: &[PeSolution],
    variant: KeyVariant,
    n: usize,
) -> Result<Vec<ExecutionTuple>, AggregatorError> {
    if solutions.is_empty() {
        return Err(AggregatorError::EmptyInput);
    }
    let mut out = Vec::new();
    for (m, sol) in solutions.iter().enumerate() {
        let len = sol.program.len();
        let subsets: Vec<Vec<usize>> = match variant {
            KeyVariant::Default => (0..n).map(|j| vec![j]).collect(),
            KeyVariant::Pg => vec![(0..n).collect()],
            KeyVariant::Pp => sol.satisfied.iter().map(|&j| vec![j]).collect(),
        };
        for subset in subsets {
            out.extend((0..len).map(|t| ExecutionTuple { m, subset: subset.clone(), t }));
        }
    }
    Ok(out)
}

/// Raw key material for one task. Position encodings are added at attention
/// time.
#[derive(Clone, Debug)]
pub struct KeySet {
    pub tuples: Vec<ExecutionTuple>,
    /// `L × Z` state embeddings.
    pub keys: Tensor<f32>,
    pub steps: Vec<usize>,
    pub statements: Vec<usize>,
    pub operators: Vec<usize>,
    /// Relation score (solution score of the key's program) per key.
    pub u: Vec<f32>,
}

impl KeySet {
    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }
}

/// Executes every tuple and embeds its partial-execution state. Tuples whose
/// program fails on the subset at step `t` are dropped together with their
/// later steps.
pub fn assemble_keyset(
    solutions: &[PeSolution],
    variant: KeyVariant,
    examples: &[Example],
    encoder: &EncoderModel,
    vocab: &Vocabulary,
) -> Result<KeySet, AggregatorError> {
    let tuples = build_key_tuples(solutions, variant, examples.len())?;
    let dsl = encoder.cfg.dsl;
    let mut kept = Vec::with_capacity(tuples.len());
    let mut states: Vec<StateTensor> = Vec::with_capacity(tuples.len());
    let mut statements = Vec::new();
    let mut operators = Vec::new();
    let mut u = Vec::new();
    let mut cache: Option<(usize, Vec<usize>, Vec<crate::state::ReplayStep>)> = None;
    for tup in tuples {
        let fresh = !matches!(&cache, Some((m, s, _)) if *m == tup.m && *s == tup.subset);
        if fresh {
            let subset: Vec<Example> = tup.subset.iter().map(|&j| examples[j].clone()).collect();
            let steps = match replay_partial(&solutions[tup.m].program, &subset, &dsl, first_set) {
                Ok((steps, _)) => steps,
                Err(_) => Vec::new(),
            };
            cache = Some((tup.m, tup.subset.clone(), steps));
        }
        let steps = &cache.as_ref().unwrap().2;
        let Some(step) = steps.get(tup.t) else { continue };
        let Some(idx) = vocab.index_of(&step.statement) else { continue };
        states.push(encode_state(&step.state, &dsl));
        statements.push(idx);
        operators.push(step.statement.op.index());
        u.push(solutions[tup.m].score as f32);
        kept.push(tup);
    }
    if kept.is_empty() {
        return Err(AggregatorError::NoKeys);
    }
    let refs: Vec<&StateTensor> = states.iter().collect();
    let keys = encoder.embed(&refs)?;
    let steps = kept.iter().map(|t| t.t).collect();
    Ok(KeySet { tuples: kept, keys, steps, statements, operators, u })
}

/// Sinusoidal position encoding of step `t` in `dim` dimensions.
pub fn position_encoding(t: usize, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|i| {
            let freq = 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
            let x = t as f64 / freq;
            if i % 2 == 0 {
                x.sin()
            } else {
                x.cos()
            }
        })
        .collect()
}

fn position_rows<T: Scalar>(steps: &[usize], dim: usize) -> Tensor<T> {
    let data = steps.iter().flat_map(|&t| position_encoding(t, dim)).map(T::c).collect();
    Tensor::matrix(steps.len(), dim, data)
}

/// Reference relative attention for one query:
/// `softmax((U + q·Kᵀ/√d_k) / 2) · V`. Returns the output and the weights.
pub fn rel_att(q: &[f64], k: &[Vec<f64>], v: &[Vec<f64>], u: &[f64]) -> (Vec<f64>, Vec<f64>) {
    assert!(!k.is_empty() && k.len() == v.len() && k.len() == u.len(), "mismatched key/value/relation counts");
    let scale = (q.len() as f64).sqrt();
    let mut w: Vec<f64> = k
        .iter()
        .zip(u)
        .map(|(kr, &ur)| {
            assert_eq!(kr.len(), q.len(), "query/key width");
            (ur + q.iter().zip(kr).map(|(a, b)| a * b).sum::<f64>() / scale) / 2.0
        })
        .collect();
    softmax_in_place(&mut w);
    let dv = v[0].len();
    let mut out = vec![0.0; dv];
    for (wi, vr) in w.iter().zip(v) {
        for (o, x) in out.iter_mut().zip(vr) {
            *o += wi * x;
        }
    }
    (out, w)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaConfig {
    /// d_model; equals the encoder's Z.
    pub z: usize,
    /// d_k = d_q = d_v.
    pub d_k: usize,
    /// Number of heads τ.
    pub tau: usize,
    pub d_ff: usize,
    pub dropout: f64,
    pub n_s: usize,
    pub n_o: usize,
    pub variant: KeyVariant,
    /// Add relation scores U to the attention logits.
    pub relation_scores: bool,
}

impl CaConfig {
    pub fn new(z: usize, n_s: usize) -> Self {
        Self {
            z,
            d_k: 64,
            tau: 8,
            d_ff: 4 * z,
            dropout: 0.1,
            n_s,
            n_o: N_OPERATORS,
            variant: KeyVariant::Default,
            relation_scores: true,
        }
    }

    fn hd(&self) -> usize {
        self.tau * self.d_k
    }

    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let (z, hd) = (self.z, self.hd());
        let mut v: Vec<(String, Vec<usize>)> = vec![
            ("ca.value.statement".into(), vec![self.n_s, z]),
            ("ca.value.operator".into(), vec![self.n_o, z]),
            ("ca.wq".into(), vec![z, hd]),
            ("ca.wk".into(), vec![z, hd]),
            ("ca.wv".into(), vec![z, hd]),
            ("ca.wo.w".into(), vec![hd, z]),
            ("ca.wo.b".into(), vec![1, z]),
            ("ca.ff1.w".into(), vec![z, self.d_ff]),
            ("ca.ff1.b".into(), vec![1, self.d_ff]),
            ("ca.ff2.w".into(), vec![self.d_ff, z]),
            ("ca.ff2.b".into(), vec![1, z]),
            ("ca.out.statement.w".into(), vec![z, self.n_s]),
            ("ca.out.statement.b".into(), vec![1, self.n_s]),
            ("ca.out.operator.w".into(), vec![z, self.n_o]),
            ("ca.out.operator.b".into(), vec![1, self.n_o]),
        ];
        for ln in ["ca.ln1", "ca.ln2"] {
            v.push((format!("{ln}.gamma"), vec![1, z]));
            v.push((format!("{ln}.beta"), vec![1, z]));
        }
        v.sort();
        v
    }

    pub fn init_params<T: Scalar>(&self, seed: u64) -> ParamStore<T> {
        let mut rng = seeded_rng(seed);
        let mut p = ParamStore::new(seed);
        let (z, hd) = (self.z, self.hd());
        p.init_embedding("ca.value.statement", self.n_s, z, z, &mut rng);
        p.init_embedding("ca.value.operator", self.n_o, z, z, &mut rng);
        for name in ["ca.wq", "ca.wk", "ca.wv"] {
            p.init_linear(name, z, hd, &mut rng);
            let w = p.remove(&format!("{name}.w")).unwrap();
            p.remove(&format!("{name}.b"));
            p.insert(name, w);
        }
        p.init_linear("ca.wo", hd, z, &mut rng);
        p.init_linear("ca.ff1", z, self.d_ff, &mut rng);
        p.init_linear("ca.ff2", self.d_ff, z, &mut rng);
        p.init_linear("ca.out.statement", z, self.n_s, &mut rng);
        p.init_linear("ca.out.operator", z, self.n_o, &mut rng);
        p.init_layer_norm("ca.ln1", z);
        p.init_layer_norm("ca.ln2", z);
        p
    }
}

/// Copies the GPS statement and operator heads into the aggregator's output
/// projections.
pub fn init_heads_from_gps<T: Scalar>(params: &mut ParamStore<T>, gps: &ParamStore<T>) -> Result<(), ShapeError> {
    for (src, dst) in [
        ("heads.statement.w", "ca.out.statement.w"),
        ("heads.statement.b", "ca.out.statement.b"),
        ("heads.operator.w", "ca.out.operator.w"),
        ("heads.operator.b", "ca.out.operator.b"),
    ] {
        let s = gps.get(src).ok_or_else(|| ShapeError::new("init_heads", format!("missing {src}")))?;
        let d = params.get(dst).ok_or_else(|| ShapeError::new("init_heads", format!("missing {dst}")))?;
        if s.shape != d.shape {
            return Err(ShapeError::new("init_heads", format!("{src} {:?} vs {dst} {:?}", s.shape, d.shape)));
        }
        params.insert(dst, s.clone());
    }
    Ok(())
}

/// Per-query, per-head attention weights over keys (`[b][head][key]`).
pub type HeadWeights = Vec<Vec<Vec<f32>>>;

/// Logits from one aggregator forward pass.
#[derive(Clone, Copy, Debug)]
pub struct CaLogits {
    pub statement: Var,
    pub operator: Var,
}

/// Records the aggregator on `tape` for `B` queries (`queries`: `B × Z` raw
/// state embeddings at global steps `q_steps`) against one keyset. Dropout is
/// applied when `rng` is given.
pub fn ca_forward_tape<T: Scalar, R: Rng>(
    tape: &mut Tape<T>,
    params: &ParamStore<T>,
    cfg: &CaConfig,
    keys: &KeySet,
    queries: &Tensor<T>,
    q_steps: &[usize],
    mut rng: Option<&mut R>,
) -> Result<CaLogits, ShapeError> {
    let (z, d_k) = (cfg.z, cfg.d_k);
    let l = keys.len();
    if l == 0 || queries.cols() != z || keys.keys.cols() != z || queries.rows() != q_steps.len() {
        return Err(ShapeError::new("ca_forward", format!("L={l}, queries {:?}, keys {:?}", queries.shape, keys.keys.shape)));
    }
    let pe_k = tape.leaf(position_rows::<T>(&keys.steps, z));
    let raw_k = tape.leaf(keys.keys.cast());
    let k_in = tape.add(raw_k, pe_k)?;
    let pe_q = tape.leaf(position_rows::<T>(q_steps, z));
    let raw_q = tape.leaf(queries.clone());
    let q_in = tape.add(raw_q, pe_q)?;
    let u_row = if cfg.relation_scores {
        Tensor::row(keys.u.iter().map(|&x| T::c(x as f64)).collect())
    } else {
        Tensor::zeros(&[1, l])
    };
    let u_row = tape.leaf(u_row);

    let wq = tape.param(params, "ca.wq");
    let wk = tape.param(params, "ca.wk");
    let wv = tape.param(params, "ca.wv");
    let q = tape.matmul(q_in, wq)?;
    let k = tape.matmul(k_in, wk)?;
    let inv_sqrt = T::c(1.0 / (d_k as f64).sqrt());

    let mut pass = |tape: &mut Tape<T>, table: &str, ids: &[usize], out: &str| -> Result<Var, ShapeError> {
        let emb = tape.param(params, table);
        let v_raw = tape.gather(emb, ids)?;
        let v_in = tape.add(v_raw, pe_k)?;
        let v = tape.matmul(v_in, wv)?;
        let mut heads = Vec::with_capacity(cfg.tau);
        for h in 0..cfg.tau {
            let (a, b) = (h * d_k, (h + 1) * d_k);
            let qh = tape.slice_cols(q, a, b)?;
            let kh = tape.slice_cols(k, a, b)?;
            let vh = tape.slice_cols(v, a, b)?;
            let kt = tape.transpose(kh);
            let s = tape.matmul(qh, kt)?;
            let s = tape.scale(s, inv_sqrt);
            let s = tape.add_row(s, u_row)?;
            let s = tape.scale(s, T::c(0.5));
            let w = tape.softmax_rows(s);
            heads.push(tape.matmul(w, vh)?);
        }
        let cat = tape.concat_cols(&heads)?;
        let o = tape.linear(params, "ca.wo", cat)?;
        let o = match rng.as_deref_mut() {
            Some(r) => tape.dropout(o, cfg.dropout, r),
            None => o,
        };
        let r1 = tape.add(q_in, o)?;
        let g1 = tape.param(params, "ca.ln1.gamma");
        let b1 = tape.param(params, "ca.ln1.beta");
        let h1 = tape.layer_norm(r1, g1, b1)?;
        let f = tape.linear(params, "ca.ff1", h1)?;
        let f = tape.relu(f);
        let f = tape.linear(params, "ca.ff2", f)?;
        let f = match rng.as_deref_mut() {
            Some(r) => tape.dropout(f, cfg.dropout, r),
            None => f,
        };
        let r2 = tape.add(h1, f)?;
        let g2 = tape.param(params, "ca.ln2.gamma");
        let b2 = tape.param(params, "ca.ln2.beta");
        let h2 = tape.layer_norm(r2, g2, b2)?;
        tape.linear(params, out, h2)
    };
    let statement = pass(tape, "ca.value.statement", &keys.statements, "ca.out.statement")?;
    let operator = pass(tape, "ca.value.operator", &keys.operators, "ca.out.operator")?;
    Ok(CaLogits { statement, operator })
}

/// Trained aggregator with inference helpers.
#[derive(Clone, Debug)]
pub struct CaModel {
    pub cfg: CaConfig,
    pub params: ParamStore<f32>,
}

/// Key-side projections computed once per task.
#[derive(Clone, Debug)]
pub struct PreparedKeys {
    pub keyset: KeySet,
    /// `(K + PE)·W^K`, `L × τd_k`.
    k: Tensor<f32>,
    /// `(F_γ[statement] + PE)·W^V`, `L × τd_k`.
    v: Tensor<f32>,
    u: Vec<f32>,
}

fn add_rows(x: &mut Tensor<f32>, b: &Tensor<f32>) {
    let c = x.cols();
    for (i, v) in x.data.iter_mut().enumerate() {
        *v += b.data[i % c];
    }
}

fn layer_norm_rows(x: &mut Tensor<f32>, gamma: &Tensor<f32>, beta: &Tensor<f32>) {
    let c = x.cols();
    for r in 0..x.rows() {
        let row = x.row_slice_mut(r);
        let mean = row.iter().sum::<f32>() / c as f32;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / c as f32;
        let inv = 1.0 / (var + LAYER_NORM_EPS as f32).sqrt();
        for (j, v) in row.iter_mut().enumerate() {
            *v = (*v - mean) * inv * gamma.data[j] + beta.data[j];
        }
    }
}

impl CaModel {
    pub fn new(cfg: CaConfig, params: ParamStore<f32>) -> Result<Self, CheckpointError> {
        Checkpoint::new(serde_json::Value::Null, params.clone()).validate(&cfg.param_shapes())?;
        Ok(Self { cfg, params })
    }

    fn p(&self, name: &str) -> &Tensor<f32> {
        self.params.get(name).expect("validated parameter")
    }

    pub fn meta(&self, encoder: &ModelMeta) -> ModelMeta {
        ModelMeta {
            kind: ModelKind::Ca,
            n_s: self.cfg.n_s,
            n_o: self.cfg.n_o,
            d_model: Some(self.cfg.z),
            d_k: Some(self.cfg.d_k),
            tau: Some(self.cfg.tau),
            d_ff: Some(self.cfg.d_ff),
            variant: Some(self.cfg.variant.as_str().to_string()),
            encoder_kind: Some(self.cfg.variant.key_encoder()),
            relation_scores: Some(self.cfg.relation_scores),
            seed: self.params.seed,
            ..encoder.clone()
        }
    }

    pub fn to_checkpoint(&self, encoder: &ModelMeta) -> Checkpoint {
        Checkpoint::new(serde_json::to_value(self.meta(encoder)).expect("meta serializes"), self.params.clone())
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, CheckpointError> {
        let meta: ModelMeta = serde_json::from_value(ck.meta.clone())?;
        if meta.kind != ModelKind::Ca {
            return Err(CheckpointError::Kind { expected: "ca".into(), found: meta.kind.as_str().into() });
        }
        let missing = |f: &str| CheckpointError::Missing(format!("meta.{f}"));
        let variant = meta.variant.as_deref().ok_or_else(|| missing("variant"))?;
        let cfg = CaConfig {
            z: meta.d_model.ok_or_else(|| missing("d_model"))?,
            d_k: meta.d_k.ok_or_else(|| missing("d_k"))?,
            tau: meta.tau.ok_or_else(|| missing("tau"))?,
            d_ff: meta.d_ff.ok_or_else(|| missing("d_ff"))?,
            dropout: 0.1,
            n_s: meta.n_s,
            n_o: meta.n_o,
            variant: variant.parse().map_err(|_| missing("variant"))?,
            relation_scores: meta.relation_scores.unwrap_or(true),
        };
        Self::new(cfg, ck.params.clone())
    }

    /// Precomputes the key and value projections of a keyset.
    pub fn prepare(&self, keyset: KeySet) -> Result<PreparedKeys, ShapeError> {
        let z = self.cfg.z;
        if keyset.is_empty() || keyset.keys.cols() != z {
            return Err(ShapeError::new("prepare", format!("keys {:?} for Z={z}", keyset.keys.shape)));
        }
        let pe = position_rows::<f32>(&keyset.steps, z);
        let mut k_in = keyset.keys.clone();
        k_in.add_assign(&pe);
        let k = Tensor::matmul(&k_in, false, self.p("ca.wk"), false)?;
        let table = self.p("ca.value.statement");
        let mut v_in = Tensor::zeros(&[keyset.len(), z]);
        for (r, &s) in keyset.statements.iter().enumerate() {
            v_in.row_slice_mut(r).copy_from_slice(table.row_slice(s));
        }
        v_in.add_assign(&pe);
        let v = Tensor::matmul(&v_in, false, self.p("ca.wv"), false)?;
        let u = if self.cfg.relation_scores { keyset.u.clone() } else { vec![0.0; keyset.len()] };
        Ok(PreparedKeys { keyset, k, v, u })
    }

    /// Statement probabilities for `B` query embeddings, plus per-head
    /// attention weights (`[b][head][key]`) when `want_weights`.
    pub fn statement_probs(
        &self,
        keys: &PreparedKeys,
        queries: &Tensor<f32>,
        q_steps: &[usize],
        want_weights: bool,
    ) -> Result<(Tensor<f32>, HeadWeights), ShapeError> {
        let (z, d_k, tau) = (self.cfg.z, self.cfg.d_k, self.cfg.tau);
        if queries.cols() != z || queries.rows() != q_steps.len() {
            return Err(ShapeError::new("statement_probs", format!("queries {:?}", queries.shape)));
        }
        let b = queries.rows();
        let l = keys.k.rows();
        let mut q_in = queries.clone();
        q_in.add_assign(&position_rows::<f32>(q_steps, z));
        let q = Tensor::matmul(&q_in, false, self.p("ca.wq"), false)?;
        let scale = 1.0 / (d_k as f32).sqrt();
        let mut ctx = Tensor::zeros(&[b, tau * d_k]);
        let mut weights = Vec::new();
        let mut w = vec![0f32; l];
        for bi in 0..b {
            let qrow = q.row_slice(bi);
            let mut per_head = Vec::new();
            for h in 0..tau {
                let qh = &qrow[h * d_k..(h + 1) * d_k];
                for (j, wj) in w.iter_mut().enumerate() {
                    let kh = &keys.k.row_slice(j)[h * d_k..(h + 1) * d_k];
                    let dot: f32 = qh.iter().zip(kh).map(|(a, c)| a * c).sum();
                    *wj = (dot * scale + keys.u[j]) * 0.5;
                }
                softmax_in_place(&mut w);
                let out = &mut ctx.row_slice_mut(bi)[h * d_k..(h + 1) * d_k];
                for (j, &wj) in w.iter().enumerate() {
                    let vh = &keys.v.row_slice(j)[h * d_k..(h + 1) * d_k];
                    for (o, &x) in out.iter_mut().zip(vh) {
                        *o += wj * x;
                    }
                }
                if want_weights {
                    per_head.push(w.clone());
                }
            }
            if want_weights {
                weights.push(per_head);
            }
        }
        let mut o = Tensor::matmul(&ctx, false, self.p("ca.wo.w"), false)?;
        add_rows(&mut o, self.p("ca.wo.b"));
        o.add_assign(&q_in);
        layer_norm_rows(&mut o, self.p("ca.ln1.gamma"), self.p("ca.ln1.beta"));
        let mut f = Tensor::matmul(&o, false, self.p("ca.ff1.w"), false)?;
        add_rows(&mut f, self.p("ca.ff1.b"));
        f.data.iter_mut().for_each(|v| *v = v.max(0.0));
        let mut f2 = Tensor::matmul(&f, false, self.p("ca.ff2.w"), false)?;
        add_rows(&mut f2, self.p("ca.ff2.b"));
        o.add_assign(&f2);
        layer_norm_rows(&mut o, self.p("ca.ln2.gamma"), self.p("ca.ln2.beta"));
        let mut s = Tensor::matmul(&o, false, self.p("ca.out.statement.w"), false)?;
        add_rows(&mut s, self.p("ca.out.statement.b"));
        for r in 0..b {
            softmax_in_place(s.row_slice_mut(r));
        }
        Ok((s, weights))
    }
}
