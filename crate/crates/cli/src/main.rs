//! `pexsynth` command-line entry point.

mod config;

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use pexsynth::aggregator::{CaConfig, CaModel, KeyVariant};
use pexsynth::datagen::{
    build_aggregator_instances, build_dataset, read_jsonl, verify_records, write_jsonl, AggregatorInstance, DatasetConfig,
    DatasetRecord, InstanceConfig, PolicyTag, TimeoutPolicy,
};
use pexsynth::dsl::{parse_program, Example, Program, Vocabulary};
use pexsynth::encoder::{EncoderConfig, EncoderModel, ModelKind};
use pexsynth::eval::{
    analyze_tot_ind, eval_success, export_attention, failure_breakdown, intent_generalization, nearest_statements,
    operator_overlap, perfect_pe_fraction, Metric, TaskResult,
};
use pexsynth::nn::{Checkpoint, OptimizerConfig};
use pexsynth::search::{
    pe_searches, synthesize, AggregationMode, Budget, CabSchedule, EncoderPredictor, Models, PeMode, PeSearchConfig,
    PipelineConfig, SynthesisResult,
};
use pexsynth::training::{train_ca, train_supervised, CaTrainConfig, TrainConfig};

use config::{format_plan, parse_k_range, parse_plan, Settings, UsageError};

#[derive(Parser, Debug)]
#[command(name = "pexsynth", version, about = "Per-example program synthesis with cross-attention aggregation")]
struct Cli {
    /// Settings file with `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a setting (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file; stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate train/test splits (settings: train, test, max_inputs).
    Datagen {
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train the global-state model.
    TrainGps(TrainArgs),
    /// Train the per-example model.
    TrainPe(TrainArgs),
    /// Build aggregator instances from per-example searches.
    GenAgg {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        pe: PathBuf,
    },
    /// Train the cross aggregator.
    TrainCa {
        #[arg(long)]
        instances: PathBuf,
        #[arg(long)]
        gps: PathBuf,
        #[arg(long)]
        pe: PathBuf,
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Synthesize a program for one task.
    Synth {
        #[arg(long)]
        task: PathBuf,
        #[command(flatten)]
        models: ModelArgs,
        #[command(flatten)]
        pipeline: PipelineArgs,
    },
    /// Success ratio over a split.
    Eval {
        #[arg(long)]
        split: PathBuf,
        #[command(flatten)]
        models: ModelArgs,
        #[command(flatten)]
        pipeline: PipelineArgs,
    },
    #[command(subcommand)]
    Analyze(Analyze),
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Metrics log (JSONL).
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Resume from a checkpoint.
    #[arg(long)]
    init: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
struct ModelArgs {
    #[arg(long)]
    gps: Option<PathBuf>,
    #[arg(long)]
    pe: Option<PathBuf>,
    #[arg(long)]
    ca: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
struct PipelineArgs {
    /// gps | ca | sum | mean | mean_u
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Total budget, `nodes:<n>` or `seconds:<f>`.
    #[arg(long)]
    budget: Option<String>,
    /// Budget per per-example search.
    #[arg(long)]
    peps_budget: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Analyze {
    /// tot(k) / ind(k) coverage of per-example solutions.
    TotInd {
        #[arg(long)]
        split: PathBuf,
        #[arg(long)]
        pe: PathBuf,
        /// Also report the GPS success ratio.
        #[arg(long)]
        gps: Option<PathBuf>,
        #[arg(long, default_value = "1..5")]
        k: String,
        /// Budget per example search.
        #[arg(long)]
        budget: Option<String>,
    },
    /// Fraction of ground-truth operators found by per-example solutions.
    Overlap {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        split: PathBuf,
    },
    /// Per-function failure rates.
    Failures {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        split: PathBuf,
    },
    /// Fraction of tasks solved by a perfect per-example solution.
    PerfectPe {
        #[arg(long)]
        report: PathBuf,
    },
    /// Success on held-out examples (`extra` is a split aligned with the report).
    Intent {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        extra: PathBuf,
    },
    /// Attention weights along a program.
    Attention {
        #[arg(long)]
        task: PathBuf,
        #[command(flatten)]
        models: ModelArgs,
        /// Program to trace; defaults to the task's program, else the synthesized one.
        #[arg(long)]
        program: Option<String>,
        #[arg(long)]
        budget: Option<String>,
    },
    /// Nearest statements in the aggregator's output embedding.
    Nearest {
        #[arg(long)]
        ca: PathBuf,
        #[arg(long)]
        statement: usize,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long, default_value = "euclidean")]
        metric: String,
    },
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow!(UsageError(msg.into()))
}

fn parse_setting<T: std::str::FromStr>(key: &str, s: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e| usage(format!("{key} `{s}`: {e}")))
}

fn require<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| usage(format!("missing --{flag}")))
}

fn load_encoder(path: &Path) -> Result<EncoderModel> {
    let ck = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
    EncoderModel::from_checkpoint(&ck).with_context(|| format!("checkpoint {}", path.display()))
}

fn load_ca(path: &Path) -> Result<CaModel> {
    let ck = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
    CaModel::from_checkpoint(&ck).with_context(|| format!("checkpoint {}", path.display()))
}

fn read_records(path: &Path) -> Result<Vec<DatasetRecord>> {
    let (_, records) = read_jsonl(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(records)
}

#[derive(serde::Deserialize)]
struct TaskFile {
    examples: Vec<Example>,
    #[serde(default)]
    program: Option<Program>,
}

/// First non-header JSON record of a task file.
fn read_task(path: &Path) -> Result<TaskFile> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    for line in BufReader::new(f).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v: serde_json::Value = serde_json::from_str(&line).with_context(|| format!("parsing {}", path.display()))?;
        if v.get("header").is_some() {
            continue;
        }
        return serde_json::from_value(v).with_context(|| format!("task record in {}", path.display()));
    }
    bail!("{}: no task record", path.display())
}

/// Per-task lines of an eval report.
fn read_report(path: &Path) -> Result<Vec<TaskResult>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v: serde_json::Value = serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?;
        if v.get("header").is_some() || v.get("summary").is_some() {
            continue;
        }
        out.push(serde_json::from_value(v).with_context(|| format!("{}:{}", path.display(), i + 1))?);
    }
    Ok(out)
}

fn output(out: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn emit<W: Write + ?Sized, T: Serialize>(w: &mut W, value: &T) -> Result<()> {
    serde_json::to_writer(&mut *w, value)?;
    w.write_all(b"\n")?;
    Ok(())
}

struct Ctx {
    settings: Settings,
    seed: u64,
    out: Option<PathBuf>,
}

impl Ctx {
    fn header(&self, command: &str) -> serde_json::Value {
        json!({ "command": command, "seed": self.seed, "config": self.settings.to_json() })
    }

    fn budget(&mut self, key: &str, flag: &Option<String>, default: &str) -> Result<Budget> {
        if let Some(b) = flag {
            self.settings.apply_overrides(&[format!("{key}={b}")])?;
        }
        let raw: String = self.settings.get(key, default.to_string())?;
        parse_setting(key, &raw)
    }

    fn schedule(&mut self) -> Result<CabSchedule> {
        let d = CabSchedule::default();
        let max_iterations: usize = self.settings.get("max_iterations", 0)?;
        Ok(CabSchedule {
            beam: self.settings.get("beam", d.beam)?,
            expansion: self.settings.get("expansion", d.expansion)?,
            beam_factor: self.settings.get("beam_factor", d.beam_factor)?,
            expansion_step: self.settings.get("expansion_step", d.expansion_step)?,
            max_iterations: (max_iterations > 0).then_some(max_iterations),
        })
    }

    /// Pipeline settings; callers validate against the task's example count.
    fn pipeline(&mut self, args: &PipelineArgs, n: usize) -> Result<PipelineConfig> {
        if let Some(m) = &args.mode {
            self.settings.apply_overrides(&[format!("mode={m}")])?;
        }
        if let Some(a) = args.alpha {
            self.settings.apply_overrides(&[format!("alpha={a}")])?;
        }
        let mode: String = self.settings.get("mode", "ca".to_string())?;
        let mode: AggregationMode = parse_setting("mode", &mode)?;
        let total = self.budget("budget", &args.budget, "nodes:20000")?;
        let default_peps = match total {
            Budget::Nodes(t) => Budget::Nodes(t / (2 * n.max(1) as u64)),
            Budget::Seconds(t) => Budget::Seconds(t / (2 * n.max(1)) as f64),
        };
        let peps = self.budget("peps_budget", &args.peps_budget, &default_peps.to_string())?;
        let pe_mode: String = self.settings.get("pe_mode", "all".to_string())?;
        let cfg = PipelineConfig {
            alpha: self.settings.get("alpha", 0.8)?,
            peps_budget: peps,
            total_budget: total,
            mode,
            pe_mode: parse_setting::<PeMode>("pe_mode", &pe_mode)?,
            schedule: self.schedule()?,
            max_depth: self.settings.get("max_depth", 4)?,
            parallel_pe: self.settings.get("parallel_pe", false)?,
            seed: self.seed,
        };
        Ok(cfg)
    }

    fn train_config(&mut self, kind: ModelKind) -> Result<TrainConfig> {
        let enc = EncoderConfig::default();
        let encoder = EncoderConfig {
            embed_dim: self.settings.get("embed_dim", enc.embed_dim)?,
            z: self.settings.get("z", enc.z)?,
            ..enc
        };
        let mut cfg = TrainConfig::new(kind, encoder);
        cfg.batch = self.settings.get("batch", cfg.batch)?;
        cfg.epochs = self.settings.get("epochs", cfg.epochs)?;
        cfg.patience = self.settings.get("patience", cfg.patience)?;
        cfg.val_fraction = self.settings.get("val_fraction", cfg.val_fraction)?;
        cfg.optimizer = OptimizerConfig { lr: self.settings.get("lr", cfg.optimizer.lr)?, ..cfg.optimizer };
        cfg.seed = self.seed;
        Ok(cfg)
    }
}

fn validate(cfg: &PipelineConfig, n: usize) -> Result<()> {
    cfg.validate(n).map_err(|e| usage(e.to_string()))
}

fn write_metrics(path: &Option<PathBuf>, header: &serde_json::Value, metrics: &[impl Serialize]) -> Result<()> {
    if let Some(p) = path {
        let mut w = BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?);
        emit(&mut w, &json!({ "header": header }))?;
        for m in metrics {
            emit(&mut w, m)?;
        }
        w.flush()?;
    }
    Ok(())
}

fn cmd_datagen(ctx: &mut Ctx, out_dir: &Path) -> Result<()> {
    let desk = DatasetConfig::desk();
    let train: String = ctx.settings.get("train", format_plan(&desk.train))?;
    let test: String = ctx.settings.get("test", format_plan(&desk.test))?;
    let mut cfg = DatasetConfig { train: parse_plan(&train)?, test: parse_plan(&test)?, seed: ctx.seed, ..desk };
    cfg.gen.max_inputs = ctx.settings.get("max_inputs", cfg.gen.max_inputs)?;
    cfg.attempts_per_program = ctx.settings.get("attempts_per_program", cfg.attempts_per_program)?;
    let ds = build_dataset(&cfg);
    verify_records(&ds.train)?;
    verify_records(&ds.test)?;
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let header = json!({ "command": "datagen", "seed": ctx.seed, "config": cfg, "stats": ds.stats });
    write_jsonl(&out_dir.join("train.jsonl"), &header, &ds.train)?;
    write_jsonl(&out_dir.join("test.jsonl"), &header, &ds.test)?;
    let mut w = output(&ctx.out)?;
    emit(&mut w, &json!({ "train": ds.train.len(), "test": ds.test.len(), "stats": ds.stats }))?;
    w.flush()?;
    Ok(())
}

fn cmd_train(ctx: &mut Ctx, kind: ModelKind, args: &TrainArgs) -> Result<()> {
    let out = require(&ctx.out, "out")?.to_path_buf();
    let cfg = ctx.train_config(kind)?;
    let records = read_records(&args.data)?;
    let init = match &args.init {
        Some(p) => Some(load_encoder(p)?.params),
        None => None,
    };
    let outcome = train_supervised(&records, &cfg, init)?;
    outcome.model.to_checkpoint().save(&out)?;
    let header = ctx.header(&format!("train-{}", kind.as_str()));
    write_metrics(&args.metrics, &header, &outcome.metrics)?;
    log::info!("{}: best validation loss {:.4}, {} truncated trajectories", kind.as_str(), outcome.best_val_loss, outcome.skipped);
    Ok(())
}

fn cmd_gen_agg(ctx: &mut Ctx, data: &Path, pe: &Path) -> Result<()> {
    let out = require(&ctx.out, "out")?.to_path_buf();
    let pe = load_encoder(pe)?;
    let records = read_records(data)?;
    let tag: String = ctx.settings.get("policy", PolicyTag::Fixed05.as_str().to_string())?;
    let node_unit: String = ctx.settings.get("node_unit", "2000".to_string())?;
    let node_unit = match node_unit.as_str() {
        "none" | "seconds" => None,
        v => Some(parse_setting::<u64>("node_unit", v)?),
    };
    let pe_mode: String = ctx.settings.get("pe_mode", "all".to_string())?;
    let cfg = InstanceConfig {
        policy: TimeoutPolicy { tag: parse_setting("policy", &tag)?, node_unit },
        mode: parse_setting("pe_mode", &pe_mode)?,
        schedule: ctx.schedule()?,
        max_depth: ctx.settings.get("max_depth", 4)?,
        seed: ctx.seed,
    };
    let (instances, stats) = build_aggregator_instances(&records, &pe, &cfg)?;
    let header = json!({ "command": "gen-agg", "seed": ctx.seed, "config": cfg, "stats": stats });
    write_jsonl(&out, &header, &instances)?;
    log::info!("gen-agg: {} instances, {:?}", instances.len(), stats);
    Ok(())
}

fn cmd_train_ca(ctx: &mut Ctx, instances: &Path, gps: &Path, pe: &Path, metrics: &Option<PathBuf>) -> Result<()> {
    let out = require(&ctx.out, "out")?.to_path_buf();
    let gps = load_encoder(gps)?;
    let pe = load_encoder(pe)?;
    let (_, instances): (_, Vec<AggregatorInstance>) = read_jsonl(instances)?;
    let variant: String = ctx.settings.get("variant", KeyVariant::Default.as_str().to_string())?;
    let variant: KeyVariant = parse_setting("variant", &variant)?;
    let encoder = if variant.key_encoder() == ModelKind::Gps { &gps } else { &pe };
    let mut ca = CaConfig::new(encoder.cfg.z, encoder.cfg.n_statements());
    ca.variant = variant;
    ca.tau = ctx.settings.get("tau", ca.tau)?;
    ca.d_k = ctx.settings.get("d_k", ca.d_k)?;
    ca.d_ff = ctx.settings.get("d_ff", ca.d_ff)?;
    ca.dropout = ctx.settings.get("dropout", ca.dropout)?;
    ca.relation_scores = ctx.settings.get("relation_scores", ca.relation_scores)?;
    let mut cfg = CaTrainConfig::default();
    cfg.batch = ctx.settings.get("batch", cfg.batch)?;
    cfg.epochs = ctx.settings.get("epochs", cfg.epochs)?;
    cfg.patience = ctx.settings.get("patience", cfg.patience)?;
    cfg.val_fraction = ctx.settings.get("val_fraction", cfg.val_fraction)?;
    cfg.init_from_gps = ctx.settings.get("init_from_gps", cfg.init_from_gps)?;
    cfg.optimizer = OptimizerConfig { lr: ctx.settings.get("lr", cfg.optimizer.lr)?, ..cfg.optimizer };
    cfg.seed = ctx.seed;
    let outcome = train_ca(&instances, &gps, &pe, &ca, &cfg, None)?;
    outcome.model.to_checkpoint(&encoder.meta()).save(&out)?;
    write_metrics(metrics, &ctx.header("train-ca"), &outcome.metrics)?;
    log::info!("train-ca: best validation loss {:.4}, {} skipped instances", outcome.best_val_loss, outcome.skipped);
    Ok(())
}

struct Loaded {
    gps: EncoderModel,
    pe: Option<EncoderModel>,
    ca: Option<CaModel>,
}

impl Loaded {
    fn new(args: &ModelArgs, mode: AggregationMode) -> Result<Self> {
        let gps = load_encoder(require(&args.gps, "gps")?)?;
        let pe = match (&args.pe, mode) {
            (_, AggregationMode::Gps) => None,
            (Some(p), _) => Some(load_encoder(p)?),
            (None, _) => return Err(usage(format!("mode {mode} needs --pe"))),
        };
        let ca = match (&args.ca, mode) {
            (Some(p), AggregationMode::Ca) => Some(load_ca(p)?),
            (None, AggregationMode::Ca) => return Err(usage("mode ca needs --ca")),
            _ => None,
        };
        Ok(Self { gps, pe, ca })
    }

    fn models(&self) -> Models<'_> {
        Models { gps: &self.gps, pe: self.pe.as_ref(), ca: self.ca.as_ref() }
    }
}

fn cmd_synth(ctx: &mut Ctx, task: &Path, models: &ModelArgs, pipeline: &PipelineArgs) -> Result<()> {
    let cfg = ctx.pipeline(pipeline, pexsynth::dsl::DslConfig::default().examples)?;
    let task = read_task(task)?;
    validate(&cfg, task.examples.len())?;
    let loaded = Loaded::new(models, cfg.mode)?;
    let result = synthesize(&task.examples, &loaded.models(), &cfg)?;
    let mut w = output(&ctx.out)?;
    emit(&mut w, &result)?;
    w.flush()?;
    Ok(())
}

fn cmd_eval(ctx: &mut Ctx, split: &Path, models: &ModelArgs, pipeline: &PipelineArgs) -> Result<()> {
    let cfg = ctx.pipeline(pipeline, pexsynth::dsl::DslConfig::default().examples)?;
    let tasks = read_records(split)?;
    validate(&cfg, tasks.first().map_or(0, |t| t.examples.len()))?;
    let loaded = Loaded::new(models, cfg.mode)?;
    let report = eval_success(&tasks, &loaded.models(), &cfg)?;
    let mut w = output(&ctx.out)?;
    report.write_jsonl(&mut w)?;
    log::info!("eval: {}/{} solved", report.summary.successes, report.summary.tasks);
    Ok(())
}

fn synthesis_results(rs: &[TaskResult]) -> Vec<SynthesisResult> {
    rs.iter().map(|r| r.result.clone()).collect()
}

fn cmd_analyze(ctx: &mut Ctx, a: &Analyze) -> Result<()> {
    let mut w = output(&ctx.out)?;
    match a {
        Analyze::TotInd { split, pe, gps, k, budget } => {
            let (k_lo, k_hi) = parse_k_range(k)?;
            let tasks = read_records(split)?;
            let pe = load_encoder(pe)?;
            let budget = ctx.budget("budget", budget, "nodes:2000")?;
            let cfg = PeSearchConfig {
                budget,
                mode: PeMode::All,
                schedule: ctx.schedule()?,
                max_depth: ctx.settings.get("max_depth", 4)?,
                parallel: false,
            };
            let gps = gps.as_deref().map(load_encoder).transpose()?;
            let n = tasks.first().map_or(0, |t| t.examples.len());
            // GPS gets the same total as the N sequential searches.
            let gps_budget = match budget {
                Budget::Nodes(b) => Budget::Nodes(b * n as u64),
                Budget::Seconds(s) => Budget::Seconds(s * n as f64),
            };
            let table = analyze_tot_ind(&tasks, &pe, &cfg, gps.as_ref().map(|g| (g, gps_budget)))?;
            emit(&mut w, &json!({ "header": ctx.header("analyze tot-ind") }))?;
            for row in table.rows.iter().filter(|r| (k_lo..=k_hi).contains(&r.k)) {
                emit(&mut w, &json!({ "k": row.k, "gps": table.gps, "ind": row.ind, "tot": row.tot }))?;
            }
        }
        Analyze::Overlap { report, split } => {
            let rs = read_report(report)?;
            let tasks = read_records(split)?;
            let aligned: Vec<DatasetRecord> = rs.iter().filter_map(|r| tasks.get(r.task).cloned()).collect();
            emit(&mut w, &json!({ "operator_overlap": operator_overlap(&synthesis_results(&rs), &aligned) }))?;
        }
        Analyze::Failures { report, split } => {
            let rs = read_report(report)?;
            let tasks = read_records(split)?;
            for (function, rate) in failure_breakdown(&rs, &tasks) {
                emit(&mut w, &json!({ "function": function, "occurrences": rate.occurrences, "in_failures": rate.in_failures, "rate": rate.rate }))?;
            }
        }
        Analyze::PerfectPe { report } => {
            let rs = read_report(report)?;
            emit(&mut w, &json!({ "perfect_pe_fraction": perfect_pe_fraction(&synthesis_results(&rs)) }))?;
        }
        Analyze::Intent { report, extra } => {
            let rs = read_report(report)?;
            let extra: Vec<Vec<Example>> = read_records(extra)?.into_iter().map(|r| r.examples).collect();
            emit(&mut w, &json!({ "intent_generalization": intent_generalization(&rs, &extra) }))?;
        }
        Analyze::Attention { task, models, program, budget } => {
            let task = read_task(task)?;
            let ca = load_ca(require(&models.ca, "ca")?)?;
            let gps = load_encoder(require(&models.gps, "gps")?)?;
            let pe = load_encoder(require(&models.pe, "pe")?)?;
            let encoder = if ca.cfg.variant.key_encoder() == ModelKind::Gps { &gps } else { &pe };
            let peps = ctx.budget("peps_budget", budget, "nodes:2000")?;
            let cfg = PeSearchConfig {
                budget: peps,
                mode: PeMode::All,
                schedule: ctx.schedule()?,
                max_depth: ctx.settings.get("max_depth", 4)?,
                parallel: false,
            };
            let report = pe_searches(&task.examples, &EncoderPredictor { model: &pe }, &pe.cfg.dsl, &cfg)?;
            let traced = match (program, task.program) {
                (Some(text), _) => parse_program(text).map_err(|e| usage(format!("--program: {e}")))?,
                (None, Some(p)) => p,
                (None, None) => {
                    let pcfg = ctx.pipeline(&PipelineArgs::default(), task.examples.len())?;
                    validate(&pcfg, task.examples.len())?;
                    let models = Models { gps: &gps, pe: Some(&pe), ca: Some(&ca) };
                    let r = synthesize(&task.examples, &models, &pcfg)?;
                    let text = r.program.ok_or_else(|| anyhow!("no program found to trace"))?;
                    parse_program(&text)?
                }
            };
            let trace = export_attention(&task.examples, &traced, &report.solutions, &ca, encoder)?;
            emit(&mut w, &json!({ "header": ctx.header("analyze attention"), "program": traced.to_string(), "keys": trace.keys }))?;
            for step in &trace.steps {
                emit(&mut w, step)?;
            }
        }
        Analyze::Nearest { ca, statement, k, metric } => {
            let ca = load_ca(ca)?;
            let metric: Metric = parse_setting("metric", metric)?;
            let vocab = Vocabulary::new(ca_slots(&ca)?);
            let name = |i: usize| format!("{:?}", vocab.statement(i));
            let list = nearest_statements(&ca, *statement, *k, metric)?;
            emit(&mut w, &json!({ "statement": statement, "text": name(*statement), "metric": metric }))?;
            for (rank, (j, d)) in list.into_iter().enumerate() {
                emit(&mut w, &json!({ "rank": rank + 1, "statement": j, "text": name(j), "distance": d }))?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Slot count whose vocabulary has the aggregator's statement count.
fn ca_slots(ca: &CaModel) -> Result<usize> {
    (1..=64)
        .find(|&nu| 30 * nu + 8 * nu * nu == ca.cfg.n_s)
        .ok_or_else(|| anyhow!("no slot count yields {} statements", ca.cfg.n_s))
}

fn run(cli: Cli) -> Result<()> {
    let mut settings = match &cli.config {
        Some(p) => Settings::load(p)?,
        None => Settings::default(),
    };
    settings.apply_overrides(&cli.set)?;
    let seed = match cli.seed {
        Some(s) => s,
        None => settings.get("seed", 0u64)?,
    };
    settings.apply_overrides(&[format!("seed={seed}")])?;
    let mut ctx = Ctx { settings, seed, out: cli.out.clone() };
    match &cli.command {
        Command::Datagen { out_dir } => cmd_datagen(&mut ctx, out_dir),
        Command::TrainGps(a) => cmd_train(&mut ctx, ModelKind::Gps, a),
        Command::TrainPe(a) => {
            ctx.settings.set_default("z", 64);
            cmd_train(&mut ctx, ModelKind::Pe, a)
        }
        Command::GenAgg { data, pe } => cmd_gen_agg(&mut ctx, data, pe),
        Command::TrainCa { instances, gps, pe, metrics } => cmd_train_ca(&mut ctx, instances, gps, pe, metrics),
        Command::Synth { task, models, pipeline } => cmd_synth(&mut ctx, task, models, pipeline),
        Command::Eval { split, models, pipeline } => cmd_eval(&mut ctx, split, models, pipeline),
        Command::Analyze(a) => cmd_analyze(&mut ctx, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let usage_error = e.downcast_ref::<UsageError>().is_some();
            let kind = if usage_error { "usage" } else { "runtime" };
            let chain: Vec<String> = e.chain().map(|c| c.to_string()).collect();
            eprintln!("{}", json!({ "error": kind, "message": chain.join(": ") }));
            ExitCode::from(if usage_error { 2 } else { 1 })
        }
    }
}
