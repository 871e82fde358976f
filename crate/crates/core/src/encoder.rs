//! State-embedding network and its three prediction heads.
//!
//! Per slot, the q payload tokens are embedded (e dims each), concatenated
//! with the two raw type bits and mapped through a linear layer of width 56.
//! The ν+1 slot vectors of one example row are concatenated and passed through
//! a three-layer dense block with concatenative skips, giving a Z-vector per
//! example; the state embedding is their mean. Linear heads map it to
//! statement, operator and drop logits.

use serde::{Deserialize, Serialize};

use crate::dsl::{DslConfig, Vocabulary};
use crate::nn::{
    seeded_rng, selu, sigmoid, softmax_in_place, Checkpoint, CheckpointError, ParamStore, Scalar, ShapeError,
    Tape, Tensor, Var,
};
use crate::state::StateTensor;

/// Width of the per-slot linear layer.
pub const SLOT_HIDDEN: usize = 56;
/// Layers in the dense block.
pub const DENSE_LAYERS: usize = 3;
/// Number of operators.
pub const N_OPERATORS: usize = 38;
/// Probability clamp used by [`step_loss`].
pub const PROB_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Gps,
    Pe,
    Ca,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Gps => "gps",
            ModelKind::Pe => "pe",
            ModelKind::Ca => "ca",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub dsl: DslConfig,
    /// Value-embedding width e.
    pub embed_dim: usize,
    /// State-embedding width Z.
    pub z: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { dsl: DslConfig::default(), embed_dim: 20, z: 256 }
    }
}

impl EncoderConfig {
    /// Embedding rows: every integer value plus the NULL sentinel.
    pub fn n_tokens(&self) -> usize {
        self.dsl.value_tokens() + 1
    }

    pub fn slot_input(&self) -> usize {
        2 + self.dsl.max_list_len * self.embed_dim
    }

    pub fn row_width(&self) -> usize {
        (self.dsl.slots + 1) * SLOT_HIDDEN
    }

    pub fn n_statements(&self) -> usize {
        30 * self.dsl.slots + 8 * self.dsl.slots * self.dsl.slots
    }

    fn dense_shapes(&self) -> [(usize, usize); DENSE_LAYERS] {
        let w = self.row_width();
        [(w, SLOT_HIDDEN), (w + SLOT_HIDDEN, SLOT_HIDDEN), (w + 2 * SLOT_HIDDEN, self.z)]
    }

    /// Names and shapes of every encoder and head parameter.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = vec![
            ("encoder.embed".to_string(), vec![self.n_tokens(), self.embed_dim]),
            ("encoder.slot.w".to_string(), vec![self.slot_input(), SLOT_HIDDEN]),
            ("encoder.slot.b".to_string(), vec![1, SLOT_HIDDEN]),
        ];
        for (i, (fan_in, fan_out)) in self.dense_shapes().into_iter().enumerate() {
            out.push((format!("encoder.dense.{i}.w"), vec![fan_in, fan_out]));
            out.push((format!("encoder.dense.{i}.b"), vec![1, fan_out]));
        }
        for (name, width) in self.head_widths() {
            out.push((format!("heads.{name}.w"), vec![self.z, width]));
            out.push((format!("heads.{name}.b"), vec![1, width]));
        }
        out.sort();
        out
    }

    fn head_widths(&self) -> [(&'static str, usize); 3] {
        [("statement", self.n_statements()), ("operator", N_OPERATORS), ("drop", self.dsl.slots)]
    }

    /// Fresh parameters for encoder and heads.
    pub fn init_params<T: Scalar>(&self, seed: u64) -> ParamStore<T> {
        let mut rng = seeded_rng(seed);
        let mut p = ParamStore::new(seed);
        p.init_embedding("encoder.embed", self.n_tokens(), self.embed_dim, self.z, &mut rng);
        p.init_linear("encoder.slot", self.slot_input(), SLOT_HIDDEN, &mut rng);
        for (i, (fan_in, fan_out)) in self.dense_shapes().into_iter().enumerate() {
            p.init_linear(&format!("encoder.dense.{i}"), fan_in, fan_out, &mut rng);
        }
        for (name, width) in self.head_widths() {
            p.init_linear(&format!("heads.{name}"), self.z, width, &mut rng);
        }
        p
    }
}

/// Zeroes the three heads (uniform statement/operator outputs, drop = 0.5).
pub fn zero_heads<T: Scalar>(params: &mut ParamStore<T>) {
    let names: Vec<String> = params.names().filter(|n| n.starts_with("heads.")).map(str::to_string).collect();
    for n in names {
        let t = params.get_mut(&n).unwrap();
        t.data.iter_mut().for_each(|x| *x = T::zero());
    }
}

/// Hyperparameter record stored in every checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub kind: ModelKind,
    pub n: usize,
    pub nu: usize,
    pub q: usize,
    pub int_min: i32,
    pub int_max: i32,
    pub e: usize,
    pub z: usize,
    pub n_s: usize,
    pub n_o: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_model: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_ff: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoder_kind: Option<ModelKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relation_scores: Option<bool>,
    pub seed: u64,
}

impl ModelMeta {
    pub fn for_encoder(kind: ModelKind, cfg: &EncoderConfig, seed: u64) -> Self {
        Self {
            kind,
            n: cfg.dsl.examples,
            nu: cfg.dsl.slots,
            q: cfg.dsl.max_list_len,
            int_min: cfg.dsl.int_min,
            int_max: cfg.dsl.int_max,
            e: cfg.embed_dim,
            z: cfg.z,
            n_s: cfg.n_statements(),
            n_o: N_OPERATORS,
            d_model: None,
            d_k: None,
            tau: None,
            d_ff: None,
            variant: None,
            encoder_kind: None,
            relation_scores: None,
            seed,
        }
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            dsl: DslConfig {
                examples: self.n,
                slots: self.nu,
                max_list_len: self.q,
                int_min: self.int_min,
                int_max: self.int_max,
            },
            embed_dim: self.e,
            z: self.z,
        }
    }
}

/// Statement, operator and drop logits for a batch of states (`B × ·`).
#[derive(Clone, Copy, Debug)]
pub struct HeadLogits {
    pub statement: Var,
    pub operator: Var,
    pub drop: Var,
}

/// Supervision for one step.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainTarget {
    pub statement: usize,
    pub operator: usize,
    pub drop: Vec<f32>,
}

/// Output of the heads for one state.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionTriple {
    pub statement: Vec<f32>,
    pub operator: Vec<f32>,
    pub drop: Vec<f32>,
}

fn check_states(cfg: &EncoderConfig, states: &[&StateTensor]) -> Result<(), ShapeError> {
    let want = (cfg.dsl.slots + 1, cfg.dsl.max_list_len + 2);
    for s in states {
        if (s.slots, s.width) != want || s.examples == 0 {
            return Err(ShapeError::new("encoder", format!("state {:?} for ν={}, q={}", s.shape(), cfg.dsl.slots, cfg.dsl.max_list_len)));
        }
    }
    Ok(())
}

/// Records the encoder on `tape`. All states must have the same example
/// count. Returns per-example rows (`ΣN × Z`) and pooled embeddings (`B × Z`).
/// With `frozen`, encoder parameters are recorded as constants.
pub fn embed_states_tape<T: Scalar>(
    tape: &mut Tape<T>,
    params: &ParamStore<T>,
    cfg: &EncoderConfig,
    states: &[&StateTensor],
    frozen: bool,
) -> Result<(Var, Var), ShapeError> {
    check_states(cfg, states)?;
    let n = states.first().map_or(1, |s| s.examples);
    if states.iter().any(|s| s.examples != n) {
        return Err(ShapeError::new("encoder", "states in a batch must share the example count"));
    }
    let q = cfg.dsl.max_list_len;
    let slots_total: usize = states.iter().map(|s| s.examples * s.slots).sum();
    let mut ids = Vec::with_capacity(slots_total * q);
    let mut bits = Vec::with_capacity(slots_total * 2);
    for s in states {
        for chunk in s.data.chunks_exact(s.width) {
            bits.push(T::c(chunk[0] as f64));
            bits.push(T::c(chunk[1] as f64));
            ids.extend(chunk[2..].iter().map(|&t| t as usize));
        }
    }
    let get = |tape: &mut Tape<T>, name: &str| if frozen { tape.frozen(params, name) } else { tape.param(params, name) };
    let table = get(tape, "encoder.embed");
    let emb = tape.gather(table, &ids)?;
    let emb = tape.reshape(emb, &[slots_total, q * cfg.embed_dim])?;
    let bits = tape.leaf(Tensor::matrix(slots_total, 2, bits));
    let slot_in = tape.concat_cols(&[bits, emb])?;
    let lin = |tape: &mut Tape<T>, prefix: &str, x: Var| {
        if frozen {
            tape.linear_frozen(params, prefix, x)
        } else {
            tape.linear(params, prefix, x)
        }
    };
    let h = lin(tape, "encoder.slot", slot_in)?;
    let h = tape.selu(h);
    let rows = slots_total / (cfg.dsl.slots + 1);
    let x = tape.reshape(h, &[rows, cfg.row_width()])?;
    let mut feats = vec![x];
    let mut last = x;
    for i in 0..DENSE_LAYERS {
        let input = if feats.len() == 1 { feats[0] } else { tape.concat_cols(&feats)? };
        let h = lin(tape, &format!("encoder.dense.{i}"), input)?;
        last = tape.selu(h);
        feats.push(last);
    }
    let pooled = tape.group_mean(last, n)?;
    Ok((last, pooled))
}

/// Records the three heads on pooled embeddings.
pub fn heads_tape<T: Scalar>(tape: &mut Tape<T>, params: &ParamStore<T>, pooled: Var) -> Result<HeadLogits, ShapeError> {
    Ok(HeadLogits {
        statement: tape.linear(params, "heads.statement", pooled)?,
        operator: tape.linear(params, "heads.operator", pooled)?,
        drop: tape.linear(params, "heads.drop", pooled)?,
    })
}

/// Summed step loss over a batch: CE(statement) + CE(operator) + Σ BCE(drop).
pub fn step_loss_tape<T: Scalar>(
    tape: &mut Tape<T>,
    logits: &HeadLogits,
    targets: &[TrainTarget],
) -> Result<Var, ShapeError> {
    let s: Vec<usize> = targets.iter().map(|t| t.statement).collect();
    let o: Vec<usize> = targets.iter().map(|t| t.operator).collect();
    let nu = tape.value(logits.drop).cols();
    let mut d = Vec::with_capacity(targets.len() * nu);
    for t in targets {
        if t.drop.len() != nu {
            return Err(ShapeError::new("step_loss", format!("drop target of length {} for ν={nu}", t.drop.len())));
        }
        d.extend(t.drop.iter().map(|&x| T::c(x as f64)));
    }
    let ls = tape.cross_entropy(logits.statement, &s)?;
    let lo = tape.cross_entropy(logits.operator, &o)?;
    let ld = tape.bce_with_logits(logits.drop, &Tensor::matrix(targets.len(), nu, d))?;
    let l = tape.add(ls, lo)?;
    tape.add(l, ld)
}

/// Step loss on probabilities, with each probability clamped to
/// `[PROB_EPS, 1 - PROB_EPS]`.
pub fn step_loss(pred: &PredictionTriple, target: &TrainTarget) -> Result<f64, ShapeError> {
    if target.statement >= pred.statement.len()
        || target.operator >= pred.operator.len()
        || target.drop.len() != pred.drop.len()
    {
        return Err(ShapeError::new("step_loss", "prediction and target shapes differ"));
    }
    let clamp = |p: f32| (p as f64).clamp(PROB_EPS, 1.0 - PROB_EPS);
    let mut loss = -clamp(pred.statement[target.statement]).ln() - clamp(pred.operator[target.operator]).ln();
    for (&p, &d) in pred.drop.iter().zip(&target.drop) {
        let p = clamp(p);
        let d = d as f64;
        loss -= d * p.ln() + (1.0 - d) * (1.0 - p).ln();
    }
    Ok(loss)
}

/// Inference-only encoder with heads, using precomputed per-position
/// embedding-projection tables.
#[derive(Clone, Debug)]
pub struct EncoderModel {
    pub cfg: EncoderConfig,
    pub kind: ModelKind,
    pub params: ParamStore<f32>,
    /// `tables[p]` is `embed · W_slot[rows of payload position p]`, shape
    /// `n_tokens × 56`.
    tables: Vec<Tensor<f32>>,
}

fn gemm_rows(x: &Tensor<f32>, params: &ParamStore<f32>, prefix: &str) -> Tensor<f32> {
    let w = params.get(&format!("{prefix}.w")).expect("weight");
    let b = params.get(&format!("{prefix}.b")).expect("bias");
    let mut out = Tensor::zeros(&[x.rows(), w.cols()]);
    for r in 0..x.rows() {
        out.row_slice_mut(r).copy_from_slice(&b.data);
    }
    Tensor::matmul_into(x, false, w, false, 1.0, &mut out).expect("linear shapes");
    out
}

impl EncoderModel {
    pub fn new(cfg: EncoderConfig, kind: ModelKind, params: ParamStore<f32>) -> Result<Self, CheckpointError> {
        Checkpoint::new(serde_json::Value::Null, params.clone()).validate(&cfg.param_shapes())?;
        let e = cfg.embed_dim;
        let embed = params.get("encoder.embed").unwrap();
        let w = params.get("encoder.slot.w").unwrap();
        let tables = (0..cfg.dsl.max_list_len)
            .map(|p| {
                let start = 2 + p * e;
                let block = Tensor::matrix(e, SLOT_HIDDEN, w.data[start * SLOT_HIDDEN..(start + e) * SLOT_HIDDEN].to_vec());
                Tensor::matmul(embed, false, &block, false).expect("table shapes")
            })
            .collect();
        Ok(Self { cfg, kind, params, tables })
    }

    pub fn init(cfg: EncoderConfig, kind: ModelKind, seed: u64) -> Self {
        Self::new(cfg, kind, cfg.init_params(seed)).expect("fresh parameters are well-formed")
    }

    pub fn meta(&self) -> ModelMeta {
        ModelMeta::for_encoder(self.kind, &self.cfg, self.params.seed)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(serde_json::to_value(self.meta()).expect("meta serializes"), self.params.clone())
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, CheckpointError> {
        let meta: ModelMeta = serde_json::from_value(ck.meta.clone())?;
        if !matches!(meta.kind, ModelKind::Gps | ModelKind::Pe) {
            return Err(CheckpointError::Kind { expected: "gps|pe".into(), found: meta.kind.as_str().into() });
        }
        Self::new(meta.encoder_config(), meta.kind, ck.params.clone())
    }

    pub fn vocabulary(&self) -> Vocabulary {
        Vocabulary::new(self.cfg.dsl.slots)
    }

    /// Per-example rows (`ΣN × Z`) for states with any example counts.
    pub fn embed_rows(&self, states: &[&StateTensor]) -> Result<Tensor<f32>, ShapeError> {
        check_states(&self.cfg, states)?;
        let slot_b = &self.params.get("encoder.slot.b").unwrap().data;
        let slot_w = self.params.get("encoder.slot.w").unwrap();
        let rows: usize = states.iter().map(|s| s.examples).sum();
        let mut x = Tensor::zeros(&[rows, self.cfg.row_width()]);
        let mut pre = vec![0f32; SLOT_HIDDEN];
        let mut k = 0;
        for s in states {
            for chunk in s.data.chunks_exact(s.width) {
                pre.copy_from_slice(slot_b);
                for (bit, wrow) in chunk[..2].iter().zip(0..2) {
                    if *bit != 0 {
                        for (o, &w) in pre.iter_mut().zip(slot_w.row_slice(wrow)) {
                            *o += w;
                        }
                    }
                }
                for (table, &tok) in self.tables.iter().zip(&chunk[2..]) {
                    for (o, &v) in pre.iter_mut().zip(table.row_slice(tok as usize)) {
                        *o += v;
                    }
                }
                x.data[k * SLOT_HIDDEN..(k + 1) * SLOT_HIDDEN].iter_mut().zip(&pre).for_each(|(o, &v)| *o = selu(v));
                k += 1;
            }
        }
        let mut feats = x;
        let mut last = Tensor::zeros(&[0, 0]);
        for i in 0..DENSE_LAYERS {
            let mut h = gemm_rows(&feats, &self.params, &format!("encoder.dense.{i}"));
            h.data.iter_mut().for_each(|v| *v = selu(*v));
            if i + 1 < DENSE_LAYERS {
                let (w0, w1) = (feats.cols(), h.cols());
                let mut data = Vec::with_capacity(rows * (w0 + w1));
                for r in 0..rows {
                    data.extend_from_slice(feats.row_slice(r));
                    data.extend_from_slice(h.row_slice(r));
                }
                feats = Tensor::matrix(rows, w0 + w1, data);
            } else {
                last = h;
            }
        }
        Ok(last)
    }

    /// Pooled state embeddings, `B × Z`.
    pub fn embed(&self, states: &[&StateTensor]) -> Result<Tensor<f32>, ShapeError> {
        let rows = self.embed_rows(states)?;
        let z = self.cfg.z;
        let mut out = Tensor::zeros(&[states.len(), z]);
        let mut r = 0;
        for (b, s) in states.iter().enumerate() {
            let inv = 1.0 / s.examples as f32;
            let dst = out.row_slice_mut(b);
            for _ in 0..s.examples {
                for (o, &v) in dst.iter_mut().zip(rows.row_slice(r)) {
                    *o += v * inv;
                }
                r += 1;
            }
        }
        Ok(out)
    }

    /// Applies the heads to pooled embeddings.
    pub fn heads(&self, pooled: &Tensor<f32>) -> Vec<PredictionTriple> {
        let mut s = gemm_rows(pooled, &self.params, "heads.statement");
        let mut o = gemm_rows(pooled, &self.params, "heads.operator");
        let d = gemm_rows(pooled, &self.params, "heads.drop");
        (0..pooled.rows())
            .map(|b| {
                softmax_in_place(s.row_slice_mut(b));
                softmax_in_place(o.row_slice_mut(b));
                PredictionTriple {
                    statement: s.row_slice(b).to_vec(),
                    operator: o.row_slice(b).to_vec(),
                    drop: d.row_slice(b).iter().map(|&x| sigmoid(x)).collect(),
                }
            })
            .collect()
    }

    pub fn predict(&self, states: &[&StateTensor]) -> Result<Vec<PredictionTriple>, ShapeError> {
        Ok(self.heads(&self.embed(states)?))
    }

    /// Statement logits for pooled embeddings (used by the aggregator's
    /// head initialization and analyses).
    pub fn statement_head(&self) -> (&Tensor<f32>, &Tensor<f32>) {
        (self.params.get("heads.statement.w").unwrap(), self.params.get("heads.statement.b").unwrap())
    }
}
