//! Acceptance suite: one test per criterion, each printing a single
//! `PASS`/`FAIL` line. Run with `cargo test -p pexsynth --test acceptance -- --nocapture`.
//!
//! Criteria 6, 9, 10 and 11 share one desk-scale fixture (dataset, GPS, PE,
//! aggregator instances, CA) built on first use.

mod common;

use std::sync::OnceLock;
use std::time::Instant;

use rand::Rng;

use common::cases::*;
use pexsynth::aggregator::{assemble_keyset, ca_forward_tape, rel_att, CaConfig, CaModel, ExecutionTuple, KeySet, KeyVariant};
use pexsynth::datagen::{
    build_aggregator_instances, build_dataset, mutual_equivalences, read_jsonl, verify_records, write_jsonl,
    AggregatorInstance, Dataset, DatasetConfig, InstanceConfig, InstanceStats, PolicyTag, TimeoutPolicy,
};
use pexsynth::dsl::{
    enumerate_vocabulary, execute_program, format_program, parse_program, satisfies, solution_score, DslConfig, Example,
    Value, Vocabulary,
};
use pexsynth::encoder::{embed_states_tape, heads_tape, step_loss_tape, zero_heads, EncoderConfig, EncoderModel, ModelKind, TrainTarget};
use pexsynth::eval::{analyze_tot_ind, eval_success, tot_ind_flags, EvalReport};
use pexsynth::nn::{grad_check, seeded_rng, OptimizerConfig, ParamStore, Tape, Tensor, Var};
use pexsynth::search::{
    cab, AggregationMode, BlendPredictor, Budget, CabSchedule, EncoderPredictor, Models, PeMode, PeSearchConfig,
    PeSolution, PipelineConfig, Prediction, Predictor,
};
use pexsynth::state::{encode_state, first_set, init_state, replay, ProgramState, StateTensor};
use pexsynth::training::{train_ca, train_supervised, CaTrainConfig, TrainConfig};

// Pinned tolerances.
const GRAD_TOL: f64 = 1e-4;
const FD_EPS: f64 = 1e-5;
const ATT_TOL: f64 = 1e-6;
const UNIFORM_LOSS: f64 = 18.4308;
const UNIFORM_TOL: f64 = 1e-3;
/// Allowed shortfall of N-PEPS below GPS, in success-ratio points.
const NPEPS_SLACK_POINTS: f64 = 2.0;

// Desk-scale settings.
const DESK_Z: usize = 64;
const ENCODER_EPOCHS: usize = 10;
const NODE_UNIT: u64 = 400;
const CA_EPOCHS: usize = 20;
const CA_LR: f64 = 1e-3;
const TOTAL_BUDGET: Budget = Budget::Nodes(5000);
const PEPS_BUDGET: Budget = Budget::Nodes(400);
const MAX_DEPTH: usize = 4;
const ALPHA: f64 = 0.8;

fn report(id: u32, name: &str, ok: bool, detail: &str) {
    println!("criterion {id:>2} {name}: {} ({detail})", if ok { "PASS" } else { "FAIL" });
}

fn pipeline(mode: AggregationMode, alpha: f64) -> PipelineConfig {
    PipelineConfig {
        alpha,
        peps_budget: PEPS_BUDGET,
        total_budget: TOTAL_BUDGET,
        mode,
        pe_mode: PeMode::All,
        schedule: CabSchedule::default(),
        max_depth: MAX_DEPTH,
        parallel_pe: false,
        seed: 0,
    }
}

struct Desk {
    data: Dataset,
    gps: EncoderModel,
    pe: EncoderModel,
    instances: Vec<AggregatorInstance>,
    instance_stats: InstanceStats,
    ca: CaModel,
}

fn encoder_config(kind: ModelKind) -> TrainConfig {
    let mut cfg = TrainConfig::new(kind, EncoderConfig { z: DESK_Z, ..EncoderConfig::default() });
    cfg.epochs = ENCODER_EPOCHS;
    cfg.patience = ENCODER_EPOCHS;
    cfg
}

fn desk() -> &'static Desk {
    static DESK: OnceLock<Desk> = OnceLock::new();
    DESK.get_or_init(|| {
        let start = Instant::now();
        let data = build_dataset(&DatasetConfig::desk());
        let gps = train_supervised(&data.train, &encoder_config(ModelKind::Gps), None).unwrap().model;
        let pe = train_supervised(&data.train, &encoder_config(ModelKind::Pe), None).unwrap().model;
        let icfg = InstanceConfig {
            policy: TimeoutPolicy { tag: PolicyTag::Fixed05, node_unit: Some(NODE_UNIT) },
            mode: PeMode::All,
            schedule: CabSchedule::default(),
            max_depth: MAX_DEPTH,
            seed: 0,
        };
        let (instances, instance_stats) = build_aggregator_instances(&data.train, &pe, &icfg).unwrap();
        let ca_cfg = CaConfig::new(DESK_Z, pe.cfg.n_statements());
        let tcfg = CaTrainConfig {
            epochs: CA_EPOCHS,
            patience: CA_EPOCHS,
            optimizer: OptimizerConfig { lr: CA_LR, ..OptimizerConfig::default() },
            ..CaTrainConfig::default()
        };
        let ca = train_ca(&instances, &gps, &pe, &ca_cfg, &tcfg, None).unwrap().model;
        println!(
            "desk fixture: {} train, {} test, {} instances {:?}, built in {:.0}s",
            data.train.len(),
            data.test.len(),
            instances.len(),
            instance_stats,
            start.elapsed().as_secs_f64()
        );
        Desk { data, gps, pe, instances, instance_stats, ca }
    })
}

fn models(d: &Desk) -> Models<'_> {
    Models { gps: &d.gps, pe: Some(&d.pe), ca: Some(&d.ca) }
}

#[test]
fn criterion_01_vocabulary_counts() {
    let start = Instant::now();
    let (ops, stmts) = enumerate_vocabulary(11);
    let mut ok = ops.len() == 38 && stmts.len() == 1298;
    for nu in 1..=16 {
        ok &= enumerate_vocabulary(nu).1.len() == 30 * nu + 8 * nu * nu;
    }
    let secs = start.elapsed().as_secs_f64();
    ok &= secs < 1.0;
    report(1, "vocabulary counts", ok, &format!("{} operators, {} statements, {secs:.3}s", ops.len(), stmts.len()));
    assert!(ok);
}

#[test]
fn criterion_02_sample_case_oracles() {
    let start = Instant::now();
    let c1 = case1_examples();
    let c2 = case2_examples();
    let reproduces = |text: &str, xs: &[Example]| {
        let p = parse_program(text).unwrap();
        xs.iter().all(|e| execute_program(&p, &e.inputs).ok().as_ref() == Some(&e.output))
    };
    let sat = |text: &str, xs: &[Example]| {
        let s = solution_score(&parse_program(text).unwrap(), xs);
        (s.satisfied.iter().map(|i| i + 1).collect::<Vec<_>>(), s.score)
    };
    let mut ok = reproduces(CASE1_GLOBAL, &c1) && reproduces(CASE2_GLOBAL, &c2);
    // Case 1, p1: the set {1, 4} is asserted; the printed score 0.2 is flagged only.
    let (s, u) = sat(CASE1_P1, &c1);
    ok &= s == vec![1, 4];
    if u != 0.2 {
        println!("note: case 1 p1 scores {u}, printed as 0.2");
    }
    ok &= sat(CASE1_P2, &c1) == (vec![2, 3, 4, 5], 0.8);
    ok &= sat(CASE2_P1, &c2) == (vec![1, 4, 5], 0.6);
    ok &= sat(CASE2_P2, &c2) == (vec![1, 2], 0.4);
    // Each PE solution reproduces the outputs of the examples it satisfies.
    for (text, xs) in [(CASE1_P1, &c1), (CASE1_P2, &c1), (CASE2_P1, &c2), (CASE2_P2, &c2)] {
        let p = parse_program(text).unwrap();
        for i in solution_score(&p, xs).satisfied {
            ok &= execute_program(&p, &xs[i].inputs).unwrap() == xs[i].output;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ok &= secs < 1.0;
    report(2, "sample-case oracles", ok, &format!("{secs:.3}s"));
    assert!(ok);
}

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = seeded_rng(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect()).unwrap()
}

/// One graph through every tape primitive.
fn all_primitives(t: &mut Tape<f64>, s: &ParamStore<f64>) -> Var {
    let x = t.param(s, "x");
    let e = t.param(s, "e");
    let rows = t.gather(e, &[0, 3, 1, 3]).unwrap();
    let h = t.concat_cols(&[x, rows]).unwrap();
    let h = t.linear(s, "l", h).unwrap();
    let g = t.param(s, "ln.gamma");
    let b = t.param(s, "ln.beta");
    let h = t.layer_norm(h, g, b).unwrap();
    let a = t.selu(h);
    let r = t.relu(h);
    let sg = t.sigmoid(h);
    let p = t.softmax_rows(h);
    let m = t.mul(a, sg).unwrap();
    let m = t.add(m, r).unwrap();
    let m = t.add(m, p).unwrap();
    let w = t.param(s, "w");
    let wt = t.transpose(w);
    let y = t.matmul(m, wt).unwrap();
    let bias = t.param(s, "bias");
    let y = t.add_row(y, bias).unwrap();
    let y = t.scale(y, 0.7);
    let y = t.dropout(y, 0.2, &mut seeded_rng(4));
    let sl = t.slice_cols(y, 1, 5).unwrap();
    let pooled = t.group_mean(sl, 2).unwrap();
    let flat = t.reshape(sl, &[2, 8]).unwrap();
    let ce = t.cross_entropy(pooled, &[1, 3]).unwrap();
    let bce = t.bce_with_logits(flat, &Tensor::matrix(2, 8, (0..16).map(|i| (i % 3 == 0) as u8 as f64).collect())).unwrap();
    let l = t.add(ce, bce).unwrap();
    let extra = t.sum(y);
    let extra = t.scale(extra, 0.01);
    t.add(l, extra).unwrap()
}

fn toy_keys(l: usize, z: usize, n_s: usize, n_o: usize) -> KeySet {
    let mut rng = seeded_rng(77);
    KeySet {
        tuples: (0..l).map(|t| ExecutionTuple { m: 0, subset: vec![0], t }).collect(),
        keys: random(&[l, z], 78).cast(),
        steps: (0..l).collect(),
        statements: (0..l).map(|_| rng.gen_range(0..n_s)).collect(),
        operators: (0..l).map(|_| rng.gen_range(0..n_o)).collect(),
        u: (0..l).map(|_| rng.gen_range(1..10) as f32 / 10.0).collect(),
    }
}

#[test]
fn criterion_03_gradient_checks() {
    let start = Instant::now();
    let mut worst = 0f64;

    let mut s = ParamStore::new(1);
    s.insert("x", random(&[4, 3], 1));
    s.insert("e", random(&[5, 2], 2));
    s.insert("w", random(&[6, 5], 3));
    s.insert("bias", random(&[1, 6], 4));
    s.init_linear("l", 5, 5, &mut seeded_rng(5));
    s.init_layer_norm("ln", 5);
    let r = grad_check(&s, FD_EPS, 64, all_primitives);
    println!("primitives: {r:?}");
    worst = worst.max(r.max_rel_err);

    // Encoder and heads on a real state at toy width.
    let cfg = EncoderConfig { dsl: DslConfig { examples: 2, slots: 3, ..DslConfig::default() }, embed_dim: 4, z: 8 };
    let xs: Vec<Example> = (0..2)
        .map(|i| Example::new(vec![Value::List(vec![i + 1, -3, 7, 0]), Value::Int(2 - i)], Value::Int(i)))
        .collect();
    let states = [encode_state(&init_state(&xs, &cfg.dsl).unwrap(), &cfg.dsl)];
    let refs: Vec<&StateTensor> = states.iter().collect();
    let target = TrainTarget { statement: 17, operator: 5, drop: vec![0.0, 1.0, 0.0] };
    let params = cfg.init_params::<f64>(6);
    let r = grad_check(&params, FD_EPS, 24, |t, p| {
        let (_, pooled) = embed_states_tape(t, p, &cfg, &refs, false).unwrap();
        let logits = heads_tape(t, p, pooled).unwrap();
        step_loss_tape(t, &logits, std::slice::from_ref(&target)).unwrap()
    });
    println!("encoder + heads: {r:?}");
    worst = worst.max(r.max_rel_err);

    // Full aggregator forward, Z=8, τ=2, L=3.
    let ca = CaConfig { d_k: 4, tau: 2, ..CaConfig::new(8, 1298) };
    let keys = toy_keys(3, 8, ca.n_s, ca.n_o);
    let queries = random(&[2, 8], 9);
    let params = ca.init_params::<f64>(10);
    let r = grad_check(&params, FD_EPS, 12, |t, p| {
        let out = ca_forward_tape::<f64, rand_chacha::ChaCha8Rng>(t, p, &ca, &keys, &queries, &[0, 1], None).unwrap();
        let s = t.cross_entropy(out.statement, &[5, 17]).unwrap();
        let o = t.cross_entropy(out.operator, &[2, 30]).unwrap();
        t.add(s, o).unwrap()
    });
    println!("aggregator: {r:?}");
    worst = worst.max(r.max_rel_err);

    let secs = start.elapsed().as_secs_f64();
    let ok = worst <= GRAD_TOL && secs < 60.0;
    report(3, "gradient checks", ok, &format!("max rel err {worst:.2e} <= {GRAD_TOL:.0e}, {secs:.1}s"));
    assert!(ok);
}

#[test]
fn criterion_04_alpha_zero_equals_gps() {
    let start = Instant::now();
    let d = desk();
    let fixture_done = Instant::now();
    let cfg = pipeline(AggregationMode::Ca, 0.0);
    let gps = EncoderPredictor { model: &d.gps };
    let (mut compared, mut mismatches) = (0, 0);
    for t in &d.data.test {
        let r = pexsynth::search::synthesize(&t.examples, &models(d), &cfg).unwrap();
        if r.perfect_pe {
            continue;
        }
        let o = cab(&t.examples, &gps, &d.gps.cfg.dsl, &cfg.schedule, cfg.max_depth, r.aggregation_budget).unwrap();
        let same = r.program == o.program.as_ref().map(format_program)
            && r.digest == o.digest
            && r.iterations == o.iterations
            && r.aggregation_nodes == o.nodes;
        mismatches += !same as usize;
        compared += 1;
        if compared == 20 {
            break;
        }
    }
    let secs = fixture_done.elapsed().as_secs_f64();
    let ok = compared == 20 && mismatches == 0 && secs < 60.0;
    report(
        4,
        "alpha = 0 equals GPS",
        ok,
        &format!("{compared} tasks, {mismatches} mismatches, {secs:.1}s after {:.0}s fixture", (fixture_done - start).as_secs_f64()),
    );
    assert!(ok);
}

/// Temperature-2 scaled dot-product attention, independent of the library.
fn sdpa_t2(q: &[f64], k: &[Vec<f64>], v: &[Vec<f64>]) -> Vec<f64> {
    let scale = 2.0 * (q.len() as f64).sqrt();
    let logits: Vec<f64> = k.iter().map(|kr| q.iter().zip(kr).map(|(a, b)| a * b).sum::<f64>() / scale).collect();
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    (0..v[0].len()).map(|c| e.iter().zip(v).map(|(w, vr)| w / z * vr[c]).sum()).collect()
}

#[test]
fn criterion_05_relative_attention_identity() {
    let start = Instant::now();
    let mut rng = seeded_rng(2024);
    let mut worst = 0f64;
    for _ in 0..100 {
        let (d, l, dv) = (rng.gen_range(1..32), rng.gen_range(1..20), rng.gen_range(1..16));
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-4.0..4.0)).collect() };
        let q = draw(d);
        let k: Vec<Vec<f64>> = (0..l).map(|_| draw(d)).collect();
        let v: Vec<Vec<f64>> = (0..l).map(|_| draw(dv)).collect();
        let (out, _) = rel_att(&q, &k, &v, &vec![0.0; l]);
        for (a, b) in out.iter().zip(sdpa_t2(&q, &k, &v)) {
            worst = worst.max((a - b).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let ok = worst <= ATT_TOL && secs < 10.0;
    report(5, "relative attention with U = 0", ok, &format!("max abs diff {worst:.2e} <= {ATT_TOL:.0e}, {secs:.3}s"));
    assert!(ok);
}

#[test]
fn criterion_06_tot_ind_dominance() {
    let d = desk();
    let start = Instant::now();
    let cfg = PeSearchConfig {
        budget: PEPS_BUDGET,
        mode: PeMode::All,
        schedule: CabSchedule::default(),
        max_depth: MAX_DEPTH,
        parallel: false,
    };
    let table = analyze_tot_ind(&d.data.test, &d.pe, &cfg, None);
    let secs = start.elapsed().as_secs_f64();
    let (ok, detail) = match table {
        Ok(table) => {
            // Recheck from the recorded satisfied sets with the set definitions.
            let mut ok = table.tasks.len() == 200;
            for task in &table.tasks {
                let union: std::collections::BTreeSet<usize> = task.satisfied_sets.iter().flatten().copied().collect();
                for k in 1..=5 {
                    let ind = task.satisfied_sets.iter().any(|s| s.len() >= k);
                    let tot = union.len() >= k;
                    ok &= !ind || tot;
                    ok &= task.ind[k - 1] == ind && task.tot[k - 1] == tot;
                }
                ok &= tot_ind_flags(&task.satisfied_sets, 5) == (task.tot.clone(), task.ind.clone());
            }
            let rows: Vec<String> = table.rows.iter().map(|r| format!("k={} tot {:.3} ind {:.3}", r.k, r.tot, r.ind)).collect();
            (ok && secs < 600.0, format!("{}; {secs:.0}s", rows.join(", ")))
        }
        Err(e) => (false, e.to_string()),
    };
    report(6, "tot/ind dominance", ok, &detail);
    assert!(ok);
}

#[test]
fn criterion_07_loss_at_uniform() {
    let cfg = EncoderConfig { z: 16, embed_dim: 4, ..EncoderConfig::default() };
    assert_eq!(cfg.dsl.slots, 11);
    let mut params = cfg.init_params::<f64>(3);
    zero_heads(&mut params);
    let r = common::random_record(3, 11).unwrap();
    let (steps, _) = replay(&r.program, &r.examples, &cfg.dsl, first_set).unwrap();
    let states: Vec<StateTensor> = steps.iter().map(|s| encode_state(&s.state, &cfg.dsl)).collect();
    let refs: Vec<&StateTensor> = states.iter().collect();
    let vocab = Vocabulary::new(cfg.dsl.slots);
    let targets: Vec<TrainTarget> = steps
        .iter()
        .map(|s| TrainTarget {
            statement: vocab.index_of(&s.statement).unwrap(),
            operator: s.statement.op.index(),
            drop: s.drop_target.clone(),
        })
        .collect();
    let mut tape = Tape::<f64>::new();
    let (_, pooled) = embed_states_tape(&mut tape, &params, &cfg, &refs, false).unwrap();
    let logits = heads_tape(&mut tape, &params, pooled).unwrap();
    let loss = step_loss_tape(&mut tape, &logits, &targets).unwrap();
    let per_step = tape.value(loss).item() / targets.len() as f64;
    let oracle = 1298f64.ln() + 38f64.ln() + 11.0 * 2f64.ln();
    let ok = (per_step - UNIFORM_LOSS).abs() <= UNIFORM_TOL && (oracle - UNIFORM_LOSS).abs() <= UNIFORM_TOL;
    report(7, "loss at uniform heads", ok, &format!("{per_step:.5} vs {UNIFORM_LOSS} +- {UNIFORM_TOL:.0e}"));
    assert!(ok);
}

/// Equal scores for every statement; the search can only stop on budget or
/// iteration cap.
struct Uniform(usize, usize);

impl Predictor for Uniform {
    fn predict(&self, states: &[&ProgramState]) -> Result<Vec<Prediction>, pexsynth::nn::ShapeError> {
        Ok(states
            .iter()
            .map(|_| Prediction { statement: vec![1.0 / self.0 as f32; self.0], drop: vec![0.5; self.1] })
            .collect())
    }
}

#[test]
fn criterion_08_cab_schedule() {
    let dsl = DslConfig::default();
    // No single statement turns a 3-element list into a 5-element one.
    let xs: Vec<Example> = (0..5)
        .map(|i| Example::new(vec![Value::List(vec![i, 2, 3])], Value::List(vec![3, 1, 2, 7, i + 7])))
        .collect();
    let schedule = CabSchedule { max_iterations: Some(3), ..CabSchedule::default() };
    let p = Uniform(Vocabulary::new(dsl.slots).n_statements(), dsl.slots);
    let o = cab(&xs, &p, &dsl, &schedule, 1, Budget::Nodes(1_000_000)).unwrap();
    let got: Vec<(usize, usize)> = o.iterations.iter().map(|r| (r.beam, r.expansion)).collect();
    let ok = got == [(100, 10), (200, 20), (400, 30)] && o.program.is_none();
    report(8, "CAB schedule", ok, &format!("{got:?}"));
    assert!(ok);
}

fn report_bytes(r: &EvalReport) -> Vec<u8> {
    let mut buf = Vec::new();
    r.write_jsonl(&mut buf).unwrap();
    buf
}

#[test]
fn criterion_09_eval_determinism() {
    let d = desk();
    let tasks = &d.data.test[..20];
    let cfg = pipeline(AggregationMode::Ca, ALPHA);
    let a = report_bytes(&eval_success(tasks, &models(d), &cfg).unwrap());
    let b = report_bytes(&eval_success(tasks, &models(d), &cfg).unwrap());
    let ok = a == b && !a.is_empty();
    report(9, "eval determinism", ok, &format!("{} tasks, {} report bytes", tasks.len(), a.len()));
    assert!(ok);
}

#[test]
fn criterion_10_desk_end_to_end() {
    let start = Instant::now();
    let d = desk();
    let lens_ok = d.data.train.len() >= 3000
        && d.data.train.iter().all(|r| r.program.len() <= 3)
        && d.data.test.len() == 200
        && d.data.test.iter().all(|r| (2..=3).contains(&r.program.len()));
    let mut ratios = Vec::new();
    let mut all_verified = true;
    for mode in [AggregationMode::Gps, AggregationMode::Ca, AggregationMode::Sum, AggregationMode::Mean] {
        let rep = eval_success(&d.data.test, &models(d), &pipeline(mode, ALPHA)).unwrap();
        // (a) every returned program satisfies every example.
        for (r, t) in rep.results.iter().zip(&d.data.test) {
            if let Some(text) = &r.result.program {
                let p = parse_program(text).unwrap();
                all_verified &= t.examples.iter().all(|e| satisfies(&p, e));
            }
        }
        println!("{mode}: success {:.3}, mean nodes {:.0}", rep.summary.success_ratio, rep.summary.mean_nodes);
        ratios.push(rep.summary.success_ratio * 100.0);
    }
    let (gps, npeps, sum, mean) = (ratios[0], ratios[1], ratios[2], ratios[3]);
    let directional = npeps >= gps - NPEPS_SLACK_POINTS;
    let between = |x: f64| x >= gps.min(npeps) && x <= gps.max(npeps);
    println!(
        "soft: Sum {} and Mean {} between GPS and N-PEPS",
        if between(sum) { "is" } else { "is not" },
        if between(mean) { "is" } else { "is not" }
    );
    println!("soft: case-2 replay with recorded PE solutions {}", if case2_replay(d) { "solved" } else { "unsolved" });
    let secs = start.elapsed().as_secs_f64();
    let ok = lens_ok && all_verified && directional && secs < 7200.0;
    report(
        10,
        "desk end-to-end",
        ok,
        &format!(
            "GPS {gps:.1}, N-PEPS {npeps:.1}, Sum {sum:.1}, Mean {mean:.1}; verified {all_verified}; slack {NPEPS_SLACK_POINTS} points; {secs:.0}s"
        ),
    );
    assert!(lens_ok && all_verified, "hard gate");
    assert!(directional, "N-PEPS {npeps:.1} below GPS {gps:.1} by more than {NPEPS_SLACK_POINTS} points");
}

/// Global search on the second sample case, guided by the trained aggregator
/// over its two recorded PE solutions.
fn case2_replay(d: &Desk) -> bool {
    let xs = case2_examples();
    let sols: Vec<PeSolution> = [(CASE2_P1, 0), (CASE2_P2, 1)]
        .iter()
        .map(|&(text, source)| {
            let program = parse_program(text).unwrap();
            let s = solution_score(&program, &xs);
            PeSolution { program, score: s.score, satisfied: s.satisfied, source, nodes: 0, seconds: None }
        })
        .collect();
    let vocab = Vocabulary::new(d.pe.cfg.dsl.slots);
    let Ok(keys) = assemble_keyset(&sols, KeyVariant::Default, &xs, &d.pe, &vocab) else { return false };
    let Ok(prepared) = d.ca.prepare(keys) else { return false };
    let predictor = BlendPredictor::with_ca(&d.gps, ALPHA, &d.ca, prepared, &d.pe);
    cab(&xs, &predictor, &d.gps.cfg.dsl, &CabSchedule::default(), 8, TOTAL_BUDGET)
        .ok()
        .and_then(|o| o.program)
        .is_some_and(|p| xs.iter().all(|e| satisfies(&p, e)))
}

#[test]
fn criterion_11_datagen_integrity() {
    let d = desk();
    let verified = verify_records(&d.data.train).is_ok() && verify_records(&d.data.test).is_ok();
    let leaks = mutual_equivalences(&d.data.train, &d.data.test);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("instances.jsonl");
    write_jsonl(&path, &serde_json::json!({"stats": d.instance_stats}), &d.instances).unwrap();
    let (_, back): (_, Vec<AggregatorInstance>) = read_jsonl(&path).unwrap();
    let no_perfect = back.iter().all(|i| i.pe.iter().all(|e| e.u < 1.0));
    let no_zero = back.iter().all(|i| i.pe.iter().any(|e| e.u > 0.0));
    let scores_consistent = back.iter().all(|i| {
        i.pe.iter().all(|e| {
            let s = solution_score(&e.program, &i.examples);
            s.score == e.u && s.satisfied == e.satisfied
        })
    });
    let ok = verified && leaks.is_empty() && back.len() == d.instances.len() && !back.is_empty() && no_perfect && no_zero && scores_consistent;
    report(
        11,
        "datagen integrity",
        ok,
        &format!(
            "records verified {verified}, {} train/test equivalences, {} instances, no u=1 {no_perfect}, no all-zero {no_zero}",
            leaks.len(),
            back.len()
        ),
    );
    assert!(ok);
}
