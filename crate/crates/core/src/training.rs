//! Supervised training of the GPS and PE models and teacher-forced training
//! of the cross aggregator.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregator::{assemble_keyset, ca_forward_tape, init_heads_from_gps, CaConfig, CaModel, KeySet, KeyVariant};
use crate::datagen::{AggregatorInstance, DatasetRecord};
use crate::dsl::{DslConfig, Example, Program, Vocabulary};
use crate::encoder::{
    embed_states_tape, heads_tape, step_loss, step_loss_tape, EncoderConfig, EncoderModel, ModelKind, TrainTarget,
};
use crate::nn::{seeded_rng, CheckpointError, Optimizer, OptimizerConfig, ParamStore, Scheduler, ShapeError, Tape, Tensor};
use crate::state::{encode_state, first_set, replay_partial, StateError, StateTensor};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("empty training set")]
    Empty,
    #[error("record {index}: {source}")]
    Record { index: usize, source: StateError },
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// One supervised step.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub state: StateTensor,
    pub target: TrainTarget,
}

/// Supervision from one record: one trajectory over all examples (GPS) or one
/// per example (PE). When all slots are full, the drop index is drawn
/// uniformly among the set drop bits. Also returns how many trajectories were
/// cut short because no slot could be dropped.
pub fn make_supervision<R: Rng>(
    record: &DatasetRecord,
    kind: ModelKind,
    dsl: &DslConfig,
    vocab: &Vocabulary,
    rng: &mut R,
) -> Result<(Vec<Vec<Sample>>, usize), StateError> {
    let groups: Vec<Vec<Example>> = match kind {
        ModelKind::Pe => record.examples.iter().map(|e| vec![e.clone()]).collect(),
        _ => vec![record.examples.clone()],
    };
    let mut out = Vec::with_capacity(groups.len());
    let mut degenerate = 0;
    for examples in groups {
        let (steps, err) = replay_partial(&record.program, &examples, dsl, |target| {
            let set: Vec<usize> = (0..target.len()).filter(|&i| target[i] > 0.5).collect();
            set.choose(rng).copied()
        })?;
        match err {
            None => {}
            Some(StateError::NoDroppableSlot) => {
                log::warn!("no droppable slot at step {}; trajectory truncated", steps.len());
                degenerate += 1;
            }
            Some(e) => return Err(e),
        }
        let traj = steps
            .into_iter()
            .map(|s| Sample {
                state: encode_state(&s.state, dsl),
                target: TrainTarget {
                    statement: vocab.index_of(&s.statement).expect("slot statements are in the vocabulary"),
                    operator: s.statement.op.index(),
                    drop: s.drop_target,
                },
            })
            .collect();
        out.push(traj);
    }
    Ok((out, degenerate))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub kind: ModelKind,
    pub encoder: EncoderConfig,
    pub batch: usize,
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub val_fraction: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(kind: ModelKind, encoder: EncoderConfig) -> Self {
        Self {
            kind,
            encoder,
            batch: 32,
            optimizer: OptimizerConfig::default(),
            epochs: 10,
            patience: 3,
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub statement_acc: f64,
    pub operator_acc: f64,
    pub lr: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<M> {
    pub model: M,
    pub metrics: Vec<EpochMetrics>,
    /// Trajectories truncated for lack of a droppable slot, or skipped
    /// instances for the aggregator.
    pub skipped: usize,
    pub best_val_loss: f64,
}

/// Shuffles indices and splits off the validation fraction (at least one
/// item whenever there are two or more and the fraction is positive).
pub fn split_indices<R: Rng>(n: usize, fraction: f64, rng: &mut R) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let mut k = (n as f64 * fraction).round() as usize;
    if fraction > 0.0 && n >= 2 {
        k = k.max(1);
    }
    let k = k.min(n.saturating_sub(1));
    let val = idx.split_off(n - k);
    (idx, val)
}

fn argmax(v: &[f32]) -> usize {
    let mut b = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[b] {
            b = i;
        }
    }
    b
}

/// Mean step loss and top-1 statement/operator accuracy with the inference
/// path.
pub fn evaluate_samples(model: &EncoderModel, samples: &[Sample]) -> Result<(f64, f64, f64), ShapeError> {
    if samples.is_empty() {
        return Ok((0.0, 0.0, 0.0));
    }
    let (mut loss, mut s_ok, mut o_ok) = (0.0, 0usize, 0usize);
    for chunk in samples.chunks(256) {
        let refs: Vec<&StateTensor> = chunk.iter().map(|s| &s.state).collect();
        for (pred, s) in model.predict(&refs)?.iter().zip(chunk) {
            loss += step_loss(pred, &s.target)?;
            s_ok += (argmax(&pred.statement) == s.target.statement) as usize;
            o_ok += (argmax(&pred.operator) == s.target.operator) as usize;
        }
    }
    let n = samples.len() as f64;
    Ok((loss / n, s_ok as f64 / n, o_ok as f64 / n))
}

/// Mean-loss gradient step on one batch. Returns the batch's summed loss.
fn encoder_step(
    params: &mut ParamStore<f32>,
    opt: &mut Optimizer<f32>,
    cfg: &EncoderConfig,
    batch: &[&Sample],
) -> Result<f64, ShapeError> {
    let mut tape = Tape::<f32>::new();
    let states: Vec<&StateTensor> = batch.iter().map(|s| &s.state).collect();
    let targets: Vec<TrainTarget> = batch.iter().map(|s| s.target.clone()).collect();
    let (_, pooled) = embed_states_tape(&mut tape, params, cfg, &states, false)?;
    let logits = heads_tape(&mut tape, params, pooled)?;
    let total = step_loss_tape(&mut tape, &logits, &targets)?;
    let sum = tape.value(total).item() as f64;
    let loss = tape.scale(total, 1.0 / batch.len() as f32);
    let grads = tape.backward(loss).by_name(&tape);
    opt.step(params, &grads)?;
    Ok(sum)
}

/// Supervised training of a GPS or PE model with early stopping on the
/// validation loss. `init` resumes from existing parameters.
pub fn train_supervised(
    records: &[DatasetRecord],
    cfg: &TrainConfig,
    init: Option<ParamStore<f32>>,
) -> Result<TrainOutcome<EncoderModel>, TrainError> {
    if !matches!(cfg.kind, ModelKind::Gps | ModelKind::Pe) {
        return Err(TrainError::Config("train_supervised trains gps or pe models".into()));
    }
    if records.is_empty() {
        return Err(TrainError::Empty);
    }
    let mut rng = seeded_rng(cfg.seed);
    let dsl = cfg.encoder.dsl;
    let vocab = Vocabulary::new(dsl.slots);
    let (train_idx, val_idx) = split_indices(records.len(), cfg.val_fraction, &mut rng);
    let mut skipped = 0;
    let mut collect = |idx: &[usize], rng: &mut rand_chacha::ChaCha8Rng| -> Result<Vec<Sample>, TrainError> {
        let mut out = Vec::new();
        for &i in idx {
            let (trajs, d) = make_supervision(&records[i], cfg.kind, &dsl, &vocab, rng)
                .map_err(|source| TrainError::Record { index: i, source })?;
            skipped += d;
            out.extend(trajs.into_iter().flatten());
        }
        Ok(out)
    };
    let train = collect(&train_idx, &mut rng)?;
    let val = collect(&val_idx, &mut rng)?;
    if train.is_empty() {
        return Err(TrainError::Empty);
    }
    let mut params = match init {
        Some(p) => p,
        None => cfg.encoder.init_params::<f32>(cfg.seed),
    };
    let mut opt = Optimizer::new(cfg.optimizer.kind, cfg.optimizer.lr);
    let mut sched = Scheduler::new(cfg.optimizer.scheduler, cfg.optimizer.lr);
    let mut metrics = Vec::new();
    let mut best = (f64::INFINITY, params.clone());
    let mut bad = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in order.chunks(cfg.batch.max(1)) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train[i]).collect();
            sum += encoder_step(&mut params, &mut opt, &cfg.encoder, &batch)?;
        }
        let model = EncoderModel::new(cfg.encoder, cfg.kind, params.clone())?;
        let lr = opt.lr();
        let (tl, ts, to) = evaluate_samples(&model, &train)?;
        metrics.push(EpochMetrics { epoch, split: "train".into(), loss: tl, statement_acc: ts, operator_acc: to, lr });
        log::info!("epoch {epoch}: running train loss {:.4}, train loss {tl:.4}", sum / train.len() as f64);
        let monitored = if val.is_empty() {
            tl
        } else {
            let (vl, vs, vo) = evaluate_samples(&model, &val)?;
            metrics.push(EpochMetrics { epoch, split: "val".into(), loss: vl, statement_acc: vs, operator_acc: vo, lr });
            vl
        };
        if monitored < best.0 {
            best = (monitored, params.clone());
            bad = 0;
        } else {
            bad += 1;
            if bad > cfg.patience {
                log::info!("early stop after epoch {epoch}");
                break;
            }
        }
        opt.set_lr(sched.after_epoch(epoch, monitored));
    }
    let (best_val_loss, params) = if best.0.is_finite() { best } else { (f64::NAN, params) };
    let model = EncoderModel::new(cfg.encoder, cfg.kind, params)?;
    Ok(TrainOutcome { model, metrics, skipped, best_val_loss })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaTrainConfig {
    /// Instances per optimizer step.
    pub batch: usize,
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub patience: usize,
    pub val_fraction: f64,
    pub seed: u64,
    /// Initialize the output projections from the GPS heads.
    pub init_from_gps: bool,
}

impl Default for CaTrainConfig {
    fn default() -> Self {
        Self {
            batch: 8,
            optimizer: OptimizerConfig { lr: 1e-4, ..OptimizerConfig::default() },
            epochs: 10,
            patience: 3,
            val_fraction: 0.1,
            seed: 0,
            init_from_gps: true,
        }
    }
}

/// Keys built once plus teacher-forced queries for every step of `p_g`.
#[derive(Clone, Debug)]
pub struct CaExample {
    pub keys: KeySet,
    /// `T × Z` query embeddings.
    pub queries: Tensor<f32>,
    pub steps: Vec<usize>,
    pub statements: Vec<usize>,
    pub operators: Vec<usize>,
}

/// Teacher-forced supervision for one instance. `None` when the keyset is
/// empty or `p_g` cannot be replayed.
pub fn prepare_ca_example(
    program: &Program,
    examples: &[Example],
    solutions: &[crate::search::PeSolution],
    variant: KeyVariant,
    encoder: &EncoderModel,
    vocab: &Vocabulary,
) -> Result<Option<CaExample>, ShapeError> {
    let keys = match assemble_keyset(solutions, variant, examples, encoder, vocab) {
        Ok(k) => k,
        Err(crate::aggregator::AggregatorError::Shape(e)) => return Err(e),
        Err(_) => return Ok(None),
    };
    let dsl = encoder.cfg.dsl;
    let Ok((steps, None)) = replay_partial(program, examples, &dsl, first_set) else { return Ok(None) };
    if steps.is_empty() {
        return Ok(None);
    }
    let states: Vec<StateTensor> = steps.iter().map(|s| encode_state(&s.state, &dsl)).collect();
    let refs: Vec<&StateTensor> = states.iter().collect();
    let queries = encoder.embed(&refs)?;
    let statements = steps.iter().map(|s| vocab.index_of(&s.statement).expect("slot statement")).collect();
    let operators = steps.iter().map(|s| s.statement.op.index()).collect();
    Ok(Some(CaExample { keys, queries, steps: (0..steps.len()).collect(), statements, operators }))
}

/// Summed statement + operator cross-entropy over the batch, its step count
/// and the statement hits.
fn ca_batch_loss<R: Rng>(
    tape: &mut Tape<f32>,
    params: &ParamStore<f32>,
    cfg: &CaConfig,
    batch: &[&CaExample],
    mut rng: Option<&mut R>,
) -> Result<(Option<crate::nn::Var>, usize, usize, usize), ShapeError> {
    let mut total = None;
    let (mut steps, mut s_ok, mut o_ok) = (0, 0, 0);
    for ex in batch {
        let logits = ca_forward_tape(tape, params, cfg, &ex.keys, &ex.queries, &ex.steps, rng.as_deref_mut())?;
        let ls = tape.cross_entropy(logits.statement, &ex.statements)?;
        let lo = tape.cross_entropy(logits.operator, &ex.operators)?;
        for (r, (&s, &o)) in ex.statements.iter().zip(&ex.operators).enumerate() {
            s_ok += (argmax(tape.value(logits.statement).row_slice(r)) == s) as usize;
            o_ok += (argmax(tape.value(logits.operator).row_slice(r)) == o) as usize;
        }
        let l = tape.add(ls, lo)?;
        total = Some(match total {
            None => l,
            Some(t) => tape.add(t, l)?,
        });
        steps += ex.statements.len();
    }
    Ok((total, steps, s_ok, o_ok))
}

/// Mean per-step loss and accuracies in inference mode (no dropout).
pub fn evaluate_ca(params: &ParamStore<f32>, cfg: &CaConfig, examples: &[CaExample]) -> Result<(f64, f64, f64), ShapeError> {
    let (mut loss, mut steps, mut s_ok, mut o_ok) = (0.0, 0, 0, 0);
    for ex in examples {
        let mut tape = Tape::<f32>::new();
        let (l, n, s, o) = ca_batch_loss::<rand_chacha::ChaCha8Rng>(&mut tape, params, cfg, &[ex], None)?;
        if let Some(l) = l {
            loss += tape.value(l).item() as f64;
        }
        steps += n;
        s_ok += s;
        o_ok += o;
    }
    if steps == 0 {
        return Ok((0.0, 0.0, 0.0));
    }
    let n = steps as f64;
    Ok((loss / n, s_ok as f64 / n, o_ok as f64 / n))
}

/// Teacher-forced aggregator training. Encoders stay frozen; keys are built
/// once per instance.
pub fn train_ca(
    instances: &[AggregatorInstance],
    gps: &EncoderModel,
    pe: &EncoderModel,
    ca_cfg: &CaConfig,
    cfg: &CaTrainConfig,
    init: Option<ParamStore<f32>>,
) -> Result<TrainOutcome<CaModel>, TrainError> {
    if instances.is_empty() {
        return Err(TrainError::Empty);
    }
    let encoder = match ca_cfg.variant {
        KeyVariant::Pg => gps,
        KeyVariant::Default | KeyVariant::Pp => pe,
    };
    if encoder.cfg.z != ca_cfg.z {
        return Err(TrainError::Config(format!("CA width {} differs from encoder Z {}", ca_cfg.z, encoder.cfg.z)));
    }
    let vocab = Vocabulary::new(encoder.cfg.dsl.slots);
    let mut rng = seeded_rng(cfg.seed);
    let (train_idx, val_idx) = split_indices(instances.len(), cfg.val_fraction, &mut rng);
    let mut skipped = 0;
    let mut prepare = |idx: &[usize]| -> Result<Vec<CaExample>, TrainError> {
        let mut out = Vec::new();
        for &i in idx {
            let inst = &instances[i];
            match prepare_ca_example(&inst.program, &inst.examples, &inst.solutions(), ca_cfg.variant, encoder, &vocab)? {
                Some(ex) => out.push(ex),
                None => {
                    log::warn!("instance {i} skipped: no keys or replay failure");
                    skipped += 1;
                }
            }
        }
        Ok(out)
    };
    let train = prepare(&train_idx)?;
    let val = prepare(&val_idx)?;
    if train.is_empty() {
        return Err(TrainError::Empty);
    }
    let mut params = match init {
        Some(p) => p,
        None => {
            let mut p = ca_cfg.init_params::<f32>(cfg.seed);
            if cfg.init_from_gps {
                init_heads_from_gps(&mut p, &gps.params)?;
            }
            p
        }
    };
    let mut opt = Optimizer::new(cfg.optimizer.kind, cfg.optimizer.lr);
    let mut sched = Scheduler::new(cfg.optimizer.scheduler, cfg.optimizer.lr);
    let mut metrics = Vec::new();
    let mut best = (f64::INFINITY, params.clone());
    let mut bad = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut sum, mut steps, mut s_ok, mut o_ok) = (0.0, 0, 0, 0);
        for chunk in order.chunks(cfg.batch.max(1)) {
            let batch: Vec<&CaExample> = chunk.iter().map(|&i| &train[i]).collect();
            let mut tape = Tape::<f32>::new();
            let (loss, n, s, o) = ca_batch_loss(&mut tape, &params, ca_cfg, &batch, Some(&mut rng))?;
            let Some(loss) = loss else { continue };
            sum += tape.value(loss).item() as f64;
            steps += n;
            s_ok += s;
            o_ok += o;
            let mean = tape.scale(loss, 1.0 / n as f32);
            let grads = tape.backward(mean).by_name(&tape);
            opt.step(&mut params, &grads)?;
        }
        let lr = opt.lr();
        let n = steps.max(1) as f64;
        let tl = sum / n;
        metrics.push(EpochMetrics {
            epoch,
            split: "train".into(),
            loss: tl,
            statement_acc: s_ok as f64 / n,
            operator_acc: o_ok as f64 / n,
            lr,
        });
        let monitored = if val.is_empty() {
            evaluate_ca(&params, ca_cfg, &train)?.0
        } else {
            let (vl, vs, vo) = evaluate_ca(&params, ca_cfg, &val)?;
            metrics.push(EpochMetrics { epoch, split: "val".into(), loss: vl, statement_acc: vs, operator_acc: vo, lr });
            vl
        };
        log::info!("ca epoch {epoch}: train {tl:.4}, monitored {monitored:.4}");
        if monitored < best.0 {
            best = (monitored, params.clone());
            bad = 0;
        } else {
            bad += 1;
            if bad > cfg.patience {
                break;
            }
        }
        opt.set_lr(sched.after_epoch(epoch, monitored));
    }
    let (best_val_loss, params) = if best.0.is_finite() { best } else { (f64::NAN, params) };
    let model = CaModel::new(*ca_cfg, params)?;
    Ok(TrainOutcome { model, metrics, skipped, best_val_loss })
}
