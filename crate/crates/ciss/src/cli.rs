//! The `ciss` command line.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use ciss_core::losses::{evaluate, grad_check, LossKind};
use ciss_core::memory::{
    compose_batch, make_non_overlapping_variant, overlap_ratio, sample_class_balanced,
    update_for_task, ExemplarMemory, SupplyWarning,
};
use ciss_core::metrics::{
    image_retrieval_miou, prr_from_image_scores, summarize, ConfusionAccumulator,
};
use ciss_core::pseudo::{pseudo_label, PseudoConfig};
use ciss_core::scenario::{self, background_shift, ScenarioKind, SplitManifest};
use ciss_core::synthetic::{synthetic_manifest, SyntheticConfig};
use ciss_core::{ClassId, DatasetManifest, LabelGrid, TaskSpec};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::report::{finish, num};
use crate::{files, manifest, memfile, scores, split};

#[derive(Debug, Parser)]
#[command(name = "ciss", version, about = "Class-incremental segmentation scenario tooling")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a scenario split from a dataset manifest.
    Build(BuildArgs),
    /// Exemplar memory operations.
    #[command(subcommand)]
    Memory(MemoryCommand),
    /// Segmentation and pseudo-label metrics.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Fill background pixels from a previous model's scores.
    Pseudo(PseudoArgs),
    /// Loss values and gradient checks on score matrices.
    #[command(subcommand)]
    Loss(LossCommand),
    /// Write a seeded synthetic dataset manifest.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct LayoutArgs {
    /// Task layout `B-s`, e.g. `15-1`.
    #[arg(long)]
    pub task: String,
    /// Class order file, one class id per line (identity when absent).
    #[arg(long)]
    pub class_order: Option<PathBuf>,
}

impl LayoutArgs {
    fn spec(&self, class_count: u8) -> Result<TaskSpec> {
        let order = match &self.class_order {
            Some(p) => manifest::load_class_order(p)?,
            None => (1..=class_count).map(ClassId).collect(),
        };
        Ok(TaskSpec::parse(&self.task, order)?)
    }
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub scenario: ScenarioKind,
    #[command(flatten)]
    pub layout: LayoutArgs,
    /// Required for partitioned splits.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Forced partition assignment `IMAGE=CLASS`; repeatable.
    #[arg(long = "assign", value_name = "IMAGE=CLASS")]
    pub assign: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MemoryInputs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub split: PathBuf,
    /// Task index `t`.
    #[arg(long = "at")]
    pub task: usize,
}

#[derive(Debug, Subcommand)]
pub enum MemoryCommand {
    /// Class-balanced memory from tasks `0..=t`.
    Sample {
        #[command(flatten)]
        inputs: MemoryInputs,
        #[arg(long)]
        capacity: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extend a memory with the classes of task `t`.
    Update {
        #[command(flatten)]
        inputs: MemoryInputs,
        #[arg(long)]
        memory: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fraction of memory entries that also belong to task `t`.
    OverlapRatio {
        #[arg(long)]
        split: PathBuf,
        #[arg(long)]
        memory: PathBuf,
        #[arg(long = "at")]
        task: usize,
    },
    /// Replace entries overlapping task `t` with non-overlapping images.
    Variant {
        #[command(flatten)]
        inputs: MemoryInputs,
        #[arg(long)]
        memory: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Half-current, half-memory batch listing for task `t`.
    Batch {
        #[command(flatten)]
        inputs: MemoryInputs,
        #[arg(long)]
        memory: PathBuf,
        #[arg(long)]
        size: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Per-class IoU and grouped mIoU of predictions against ground truth.
    Miou {
        /// JSON `{"pairs": [{"pred": path, "gt": path}]}`.
        #[arg(long)]
        pairs: PathBuf,
        #[command(flatten)]
        layout: LayoutArgs,
        /// Foreground class count when no class order is given.
        #[arg(long)]
        class_count: Option<u8>,
    },
    /// Pseudo-label retrieval rate; `pred` is the pseudo-label, `gt` the oracle.
    Prr {
        #[arg(long)]
        pairs: PathBuf,
        /// Old classes, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        old: Vec<u8>,
    },
}

#[derive(Debug, Args)]
pub struct PseudoArgs {
    /// Current-task ground truth grid.
    #[arg(long)]
    pub gt: PathBuf,
    /// Previous model's scores over old classes and background.
    #[arg(long)]
    pub prev_scores: PathBuf,
    /// Current classes, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub current: Vec<u8>,
    #[arg(long)]
    pub tau: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// Oracle grid; adds the image's retrieval mIoU to the report.
    #[arg(long)]
    pub oracle: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum LossCommand {
    Value {
        #[arg(long)]
        case: PathBuf,
        #[arg(long, default_value = "mib-augm")]
        loss: LossKind,
    },
    Gradcheck {
        #[arg(long)]
        case: PathBuf,
        /// A loss name or `all`.
        #[arg(long, default_value = "mib-augm")]
        loss: String,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        #[arg(long, default_value_t = 1e-6)]
        tolerance: f64,
        /// Logits checked per loss; 0 checks all of them.
        #[arg(long, default_value_t = 0)]
        max_coords: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 1000)]
    pub images: usize,
    #[arg(long, default_value_t = 20)]
    pub classes: u8,
    #[arg(long, default_value_t = 1)]
    pub min_classes: usize,
    #[arg(long, default_value_t = 4)]
    pub max_classes: usize,
    #[arg(long, default_value_t = 8)]
    pub width: usize,
    #[arg(long, default_value_t = 8)]
    pub height: usize,
    #[arg(long, default_value_t = 0.02)]
    pub ignore_rate: f64,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    CheckFailed,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Self::Ok => 0,
            Self::CheckFailed => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub json: Value,
    pub status: Status,
}

impl Report {
    fn ok(fields: Value) -> Self {
        Self {
            json: finish(fields),
            status: Status::Ok,
        }
    }
}

pub fn run(cli: Cli) -> Result<Report> {
    match cli.command {
        Command::Build(args) => build(args),
        Command::Memory(cmd) => memory(cmd),
        Command::Eval(cmd) => eval(cmd),
        Command::Pseudo(args) => pseudo(args),
        Command::Loss(cmd) => loss(cmd),
        Command::Synth(args) => synth(args),
    }
}

fn parse_assignment(s: &str) -> Result<(String, ClassId)> {
    let (id, class) = s
        .rsplit_once('=')
        .ok_or_else(|| Error::Usage(format!("expected IMAGE=CLASS, got `{s}`")))?;
    let class = class
        .parse::<u8>()
        .map_err(|_| Error::Usage(format!("invalid class in `{s}`")))?;
    Ok((id.to_string(), ClassId(class)))
}

fn warn(warning: &Option<SupplyWarning>) -> Value {
    match warning {
        Some(w) => {
            log::warn!("{w}");
            Value::String(w.to_string())
        }
        None => Value::Null,
    }
}

fn build(args: BuildArgs) -> Result<Report> {
    let manifest = manifest::load_manifest(&args.manifest)?;
    let spec = args.layout.spec(manifest.class_count())?;
    let split = match args.scenario {
        ScenarioKind::Partitioned => {
            let seed = args
                .seed
                .ok_or_else(|| Error::Usage("partitioned splits need --seed".into()))?;
            let overrides = args
                .assign
                .iter()
                .map(|s| parse_assignment(s))
                .collect::<Result<BTreeMap<_, _>>>()?;
            scenario::build_partitioned_with_overrides(&manifest, &spec, seed, &overrides)?
        }
        kind => {
            if args.seed.is_some() {
                log::warn!("--seed has no effect on {kind} splits");
            }
            if !args.assign.is_empty() {
                return Err(Error::Usage("--assign applies to partitioned splits only".into()));
            }
            scenario::build(kind, &manifest, &spec, 0)?
        }
    };
    split.validate(&manifest)?;
    split::save_split(&split, &args.out)?;
    log::info!("wrote {}", args.out.display());
    Ok(Report::ok(split_summary(&split, &manifest)?))
}

fn split_summary(split: &SplitManifest, manifest: &DatasetManifest) -> Result<Value> {
    let counts = split.counts();
    let line: Vec<String> = counts.iter().map(ToString::to_string).collect();
    let mut tasks = Vec::new();
    for task in &split.tasks {
        let shift = background_shift(manifest, split, task.task)?;
        tasks.push(json!({
            "t": task.task,
            "classes": task.classes.iter().map(|c| c.0).collect::<Vec<_>>(),
            "images": task.image_ids.len(),
            "future_shift_images": shift.future_images,
            "past_shift_images": shift.past_images,
        }));
    }
    let mut out = json!({
        "scenario": split.scenario.as_str(),
        "counts": counts,
        "counts_line": line.join(" "),
        "tasks": tasks,
    });
    if split.scenario == ScenarioKind::Overlapped {
        out["overlaps"] = split
            .pairwise_overlaps()
            .into_iter()
            .map(|(a, b, n)| json!({"a": a, "b": b, "images": n}))
            .collect();
    }
    Ok(out)
}

fn load_inputs(inputs: &MemoryInputs) -> Result<(DatasetManifest, SplitManifest)> {
    let manifest = manifest::load_manifest(&inputs.manifest)?;
    let split = split::load_split(&inputs.split)?;
    split.validate(&manifest)?;
    Ok((manifest, split))
}

fn memory_summary(memory: &ExemplarMemory) -> Value {
    let anchors: BTreeMap<String, usize> = memory
        .anchor_counts()
        .into_iter()
        .map(|(c, n)| (c.to_string(), n))
        .collect();
    json!({
        "capacity": memory.capacity(),
        "entries": memory.len(),
        "anchor_counts": anchors,
    })
}

fn memory(cmd: MemoryCommand) -> Result<Report> {
    match cmd {
        MemoryCommand::Sample {
            inputs,
            capacity,
            seed,
            out,
        } => {
            let (manifest, split) = load_inputs(&inputs)?;
            let outcome = sample_class_balanced(&split, &manifest, inputs.task, capacity, seed)?;
            memfile::save_memory(&outcome.value, &out)?;
            let mut report = memory_summary(&outcome.value);
            report["warning"] = warn(&outcome.warning);
            Ok(Report::ok(report))
        }
        MemoryCommand::Update {
            inputs,
            memory,
            seed,
            out,
        } => {
            let (manifest, split) = load_inputs(&inputs)?;
            let mem = memfile::load_memory(&memory)?;
            mem.verify(&manifest, &split.spec)?;
            let updated = update_for_task(&mem, &split, &manifest, inputs.task, seed)?;
            memfile::save_memory(&updated, &out)?;
            Ok(Report::ok(memory_summary(&updated)))
        }
        MemoryCommand::OverlapRatio {
            split,
            memory,
            task,
        } => {
            let split = split::load_split(&split)?;
            let mem = memfile::load_memory(&memory)?;
            let ratio = overlap_ratio(&mem, &split, task)?;
            Ok(Report::ok(json!({ "t": task, "entries": mem.len(), "ratio": num(ratio) })))
        }
        MemoryCommand::Variant {
            inputs,
            memory,
            seed,
            out,
        } => {
            let (manifest, split) = load_inputs(&inputs)?;
            let mem = memfile::load_memory(&memory)?;
            mem.verify(&manifest, &split.spec)?;
            let before = overlap_ratio(&mem, &split, inputs.task)?;
            let outcome = make_non_overlapping_variant(&mem, &split, &manifest, inputs.task, seed)?;
            let after = overlap_ratio(&outcome.value, &split, inputs.task)?;
            memfile::save_memory(&outcome.value, &out)?;
            let mut report = memory_summary(&outcome.value);
            report["ratio_before"] = num(before);
            report["ratio_after"] = num(after);
            report["warning"] = warn(&outcome.warning);
            Ok(Report::ok(report))
        }
        MemoryCommand::Batch {
            inputs,
            memory,
            size,
            seed,
            out,
        } => {
            let (manifest, split) = load_inputs(&inputs)?;
            let mem = memfile::load_memory(&memory)?;
            mem.verify(&manifest, &split.spec)?;
            let outcome = compose_batch(split.task_ids(inputs.task)?, &mem, size, seed)?;
            let listing = BatchListing {
                t: inputs.task,
                size,
                seed,
                slots: outcome
                    .value
                    .iter()
                    .map(|s| SlotDoc {
                        image_id: s.image_id.clone(),
                        source: s.source.as_str().to_string(),
                        memory_index: s.memory_index,
                    })
                    .collect(),
            };
            if let Some(out) = &out {
                files::write_json(out, &listing)?;
            }
            let n_memory = listing.slots.iter().filter(|s| s.memory_index.is_some()).count();
            Ok(Report::ok(json!({
                "t": inputs.task,
                "size": size,
                "current": size - n_memory,
                "memory": n_memory,
                "slots": listing.slots,
                "warning": warn(&outcome.warning),
            })))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchListing {
    pub t: usize,
    pub size: usize,
    pub seed: u64,
    pub slots: Vec<SlotDoc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotDoc {
    pub image_id: String,
    pub source: String,
    pub memory_index: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairsDoc {
    pub pairs: Vec<PairDoc>,
}

/// Paths relative to the pairs file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairDoc {
    pub pred: String,
    pub gt: String,
}

fn load_pairs(path: &Path) -> Result<Vec<(LabelGrid, LabelGrid)>> {
    let doc: PairsDoc = files::read_json(path)?;
    let base = files::base_dir(path);
    doc.pairs
        .par_iter()
        .map(|p| {
            Ok((
                files::load_grid(&base.join(&p.pred))?,
                files::load_grid(&base.join(&p.gt))?,
            ))
        })
        .collect()
}

fn class_set(ids: &[u8]) -> BTreeSet<ClassId> {
    ids.iter().copied().map(ClassId).collect()
}

fn eval(cmd: EvalCommand) -> Result<Report> {
    match cmd {
        EvalCommand::Miou {
            pairs,
            layout,
            class_count,
        } => {
            let class_count = match (&layout.class_order, class_count) {
                (Some(_), _) => 0,
                (None, Some(c)) => c,
                (None, None) => {
                    return Err(Error::Usage("give --class-order or --class-count".into()))
                }
            };
            let spec = layout.spec(class_count)?;
            let pairs = load_pairs(&pairs)?;
            let acc = pairs
                .par_iter()
                .map(|(pred, gt)| {
                    let mut acc = ConfusionAccumulator::new();
                    acc.accumulate(pred, gt)?;
                    Ok(acc)
                })
                .try_reduce(ConfusionAccumulator::new, |mut a, b| {
                    a.merge(&b);
                    Ok::<_, ciss_core::Error>(a)
                })?;
            let summary = summarize(&acc, &spec)?;
            let per_class: serde_json::Map<String, Value> = summary
                .per_class
                .iter()
                .map(|(c, v)| (c.to_string(), v.map_or(Value::Null, num)))
                .collect();
            Ok(Report::ok(json!({
                "images": pairs.len(),
                "per_class_iou": per_class,
                "miou_groups": {
                    "base": num(summary.base),
                    "incremental": summary.incremental.map_or(Value::Null, num),
                    "all": num(summary.all),
                },
            })))
        }
        EvalCommand::Prr { pairs, old } => {
            let mut measured = class_set(&old);
            measured.insert(ClassId::BACKGROUND);
            let pairs = load_pairs(&pairs)?;
            let per_image = pairs
                .par_iter()
                .map(|(pseudo, oracle)| image_retrieval_miou(oracle, pseudo, &measured))
                .collect::<ciss_core::Result<Vec<_>>>()?;
            let mut scored: Vec<f64> = per_image.iter().flatten().copied().collect();
            let value = prr_from_image_scores(&mut scored)?;
            Ok(Report::ok(json!({
                "images": pairs.len(),
                "measured_images": scored.len(),
                "prr": num(value),
            })))
        }
    }
}

fn pseudo(args: PseudoArgs) -> Result<Report> {
    let gt = files::load_grid(&args.gt)?;
    let prev = scores::load_scores(&args.prev_scores)?;
    let current = class_set(&args.current);
    let out = pseudo_label(&gt, &prev, &current, PseudoConfig::new(args.tau)?)?;
    files::save_grid(&args.out, &out)?;
    let filled = gt
        .pixels()
        .iter()
        .zip(out.pixels())
        .filter(|(g, o)| g.is_background() && o.is_foreground())
        .count();
    let mut report = json!({
        "tau": num(args.tau),
        "pixels": gt.len(),
        "filled": filled,
    });
    if let Some(path) = &args.oracle {
        let oracle = files::load_grid(path)?;
        let measured: BTreeSet<ClassId> = prev.class_set();
        let miou = image_retrieval_miou(&oracle, &out, &measured)?;
        report["retrieval_miou"] = miou.map_or(Value::Null, num);
    }
    Ok(Report::ok(report))
}

fn loss(cmd: LossCommand) -> Result<Report> {
    match cmd {
        LossCommand::Value { case, loss } => {
            let case = crate::losscase::load_loss_case(&case)?;
            let value = evaluate(loss, &case)?;
            Ok(Report::ok(json!({ "loss": loss.as_str(), "value": num(value) })))
        }
        LossCommand::Gradcheck {
            case,
            loss,
            step,
            tolerance,
            max_coords,
            seed,
        } => {
            let case = crate::losscase::load_loss_case(&case)?;
            let kinds: Vec<LossKind> = if loss == "all" {
                LossKind::ALL.to_vec()
            } else {
                vec![loss.parse()?]
            };
            let explicit = kinds.len() == 1;
            let max_coords = if max_coords == 0 { usize::MAX } else { max_coords };
            let results: Vec<(LossKind, ciss_core::Result<_>)> = kinds
                .par_iter()
                .map(|&k| (k, grad_check(k, &case, step, tolerance, max_coords, seed)))
                .collect();
            let mut checks = Vec::new();
            let mut skipped = Vec::new();
            let mut passed = true;
            for (kind, result) in results {
                match result {
                    Ok(r) => {
                        passed &= r.passed;
                        checks.push(json!({
                            "loss": kind.as_str(),
                            "value": num(r.value),
                            "checked": r.checked,
                            "max_abs_err": num(r.max_abs_err),
                            "max_rel_err": num(r.max_rel_err),
                            "passed": r.passed,
                        }));
                    }
                    Err(e) if !explicit => {
                        log::info!("skipping {kind}: {e}");
                        skipped.push(json!({ "loss": kind.as_str(), "reason": e.to_string() }));
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            let worst = checks
                .iter()
                .filter_map(|c| c["max_rel_err"].as_f64())
                .fold(0.0, f64::max);
            let mut report = Report::ok(json!({
                "step": num(step),
                "tolerance": num(tolerance),
                "max_rel_err": num(worst),
                "passed": passed,
                "checks": checks,
                "skipped": skipped,
            }));
            if !passed {
                report.status = Status::CheckFailed;
            }
            Ok(report)
        }
    }
}

fn synth(args: SynthArgs) -> Result<Report> {
    let cfg = SyntheticConfig {
        images: args.images,
        class_count: args.classes,
        min_classes: args.min_classes,
        max_classes: args.max_classes,
        width: args.width,
        height: args.height,
        ignore_rate: args.ignore_rate,
        seed: args.seed,
    };
    let manifest = synthetic_manifest(&cfg)?;
    manifest::save_manifest(&manifest, &args.out)?;
    Ok(Report::ok(json!({
        "images": manifest.len(),
        "class_count": manifest.class_count(),
    })))
}

/// Sets the global thread pool size from `CISS_THREADS` (0 or unset means
/// one thread per core).
pub fn configure_threads() -> Result<()> {
    let threads = match std::env::var("CISS_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::Usage(format!("CISS_THREADS must be an integer, got `{v}`")))?,
        Err(_) => 0,
    };
    // A pool that already exists keeps its size.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(())
}

/// Parses arguments, runs the command and prints the report. Returns the
/// process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            print_error("usage", &e.to_string());
            return 2;
        }
    };
    let result = configure_threads().and_then(|()| run(cli));
    match result {
        Ok(report) => {
            println!("{}", serde_json::to_string_pretty(&report.json).expect("serializable"));
            report.status.exit_code()
        }
        Err(e) => {
            print_error(e.kind(), &e.to_string());
            2
        }
    }
}

fn print_error(kind: &str, message: &str) {
    let obj = json!({ "error": { "kind": kind, "message": message.trim_end() } });
    eprintln!("{obj}");
}
