//! The `symfield` command line.
//!
//! Exit codes: 0 success, 2 configuration or input error, 3 I/O error,
//! 4 training diverged, 5 unmatched ids in `eval`. Diagnostics go to
//! stderr; stdout carries the paths of written artifacts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{Ablation, PipelineConfig};
use crate::data::{build_dataset, load_dataset, DatasetConfig, Manifest, Pair, Split, MANIFEST_FILE};
use crate::error::{Error, Result};
use crate::geometry::io::{read_cloud, write_ply};
use crate::geometry::{chamfer_l1, chamfer_l2, f_score, mmd, PointCloud, Source};
use crate::pipeline::Pipeline;
use crate::teacher::train_stage1;
use crate::train::{EpochRow, TrainOptions, TrainReport};

/// Environment variable read when `--seed` is absent.
pub const SEED_ENV: &str = "SIMBA_SEED";

#[derive(Debug, Parser)]
#[command(name = "symfield", version, about = "Point-cloud completion with transformation-field diffusion")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset of complete/partial pairs.
    GenData(GenDataArgs),
    /// Train the first (teacher) or second (completion) stage.
    Train(TrainArgs),
    /// Complete partial clouds with a trained checkpoint.
    Complete(CompleteArgs),
    /// Score completions against ground truth.
    Eval(EvalArgs),
    /// Train and score a set of ablation variants under one budget.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct SeedArg {
    /// Global seed; falls back to $SIMBA_SEED, then to the config value.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl SeedArg {
    fn resolve(&self) -> Result<Option<u64>> {
        if let Some(s) = self.seed {
            return Ok(Some(s));
        }
        match std::env::var(SEED_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map(Some)
                .map_err(|_| Error::config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
            Err(_) => Ok(None),
        }
    }
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Dataset description (TOML).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Replace an existing dataset.
    #[arg(long)]
    pub force: bool,
    #[command(flatten)]
    pub seed: SeedArg,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub stage: u8,
    /// Model and training configuration (TOML); defaults when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset manifest; the train split is used.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// First-stage checkpoint (required for stage 2).
    #[arg(long)]
    pub stage1_ckpt: Option<PathBuf>,
    /// Continue from the checkpoint in the output directory.
    #[arg(long)]
    pub resume: bool,
    /// Override the epoch count of the selected stage.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Apply a named ablation variant (A1, A2, B1-B4, C1-C5).
    #[arg(long)]
    pub ablation: Option<Ablation>,
    /// Print one line per epoch.
    #[arg(long, short)]
    pub verbose: bool,
    #[command(flatten)]
    pub seed: SeedArg,
}

#[derive(Debug, Args)]
pub struct CompleteArgs {
    /// Second-stage checkpoint.
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Partial clouds (XYZ or PLY).
    #[arg(long, num_args = 1.., required_unless_present = "data")]
    pub input: Vec<PathBuf>,
    /// Complete the partial clouds of a dataset split instead.
    #[arg(long, conflicts_with = "input")]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: Split,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write keypoints, their images, the coarse cloud and every
    /// refinement stage.
    #[arg(long)]
    pub dump_intermediates: bool,
    #[command(flatten)]
    pub seed: SeedArg,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory of predicted clouds.
    #[arg(long)]
    pub pred: PathBuf,
    /// Directory of ground-truth clouds.
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Add minimum matching distance to the aggregate rows.
    #[arg(long)]
    pub mmd: bool,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Variants to run; all of them when absent.
    #[arg(long, value_delimiter = ',')]
    pub variants: Vec<Ablation>,
    /// Epoch budget for both stages.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, default_value = "test")]
    pub split: Split,
    #[arg(long, short)]
    pub verbose: bool,
    #[command(flatten)]
    pub seed: SeedArg,
}

/// Provenance written next to every training run.
#[derive(Clone, Debug, Serialize)]
pub struct RunRecord {
    pub command: String,
    pub config_hash: String,
    pub git_describe: String,
    pub seed: u64,
    pub timings: BTreeMap<String, f64>,
    pub epochs: Vec<RunRow>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunRow {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
}

impl RunRecord {
    fn new(command: &str, cfg: &PipelineConfig) -> Self {
        Self {
            command: command.into(),
            config_hash: hash_hex(cfg.hash()),
            git_describe: git_describe(),
            seed: cfg.seed,
            timings: BTreeMap::new(),
            epochs: Vec::new(),
        }
    }

    fn with_rows(mut self, rows: &[EpochRow]) -> Self {
        self.epochs = rows
            .iter()
            .map(|r| RunRow {
                epoch: r.epoch,
                loss: r.loss,
                lr: r.lr,
            })
            .collect();
        self
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).expect("run record serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

fn hash_hex(h: u64) -> String {
    format!("{h:016x}")
}

fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| format!("v{}", env!("CARGO_PKG_VERSION")))
}

/// Failure carrying the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub msg: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io { .. } => 3,
            Error::Diverged { .. } | Error::Numeric { .. } => 4,
            _ => 2,
        };
        Failure { code, msg: e.to_string() }
    }
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}

pub fn run(cli: Cli) -> std::result::Result<(), Failure> {
    match cli.command {
        Command::GenData(a) => gen_data(&a).map_err(Into::into),
        Command::Train(a) => train(&a).map_err(Into::into),
        Command::Complete(a) => complete(&a).map_err(Into::into),
        Command::Eval(a) => eval(&a),
        Command::Ablate(a) => ablate(&a).map_err(Into::into),
    }
}

fn gen_data(a: &GenDataArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.config).map_err(|e| Error::io(&a.config, e))?;
    let mut cfg: DatasetConfig =
        toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", a.config.display())))?;
    if let Some(s) = a.seed.resolve()? {
        cfg.seed = s;
    }
    let manifest = build_dataset(&a.out, &cfg, a.force)?;
    eprintln!("{} shapes, manifest hash {}", manifest.entries.len(), manifest.hash());
    println!("{}", a.out.join(MANIFEST_FILE).display());
    Ok(())
}

fn load_config(path: Option<&Path>, seed: &SeedArg) -> Result<PipelineConfig> {
    let mut cfg = match path {
        Some(p) => PipelineConfig::read(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = seed.resolve()? {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn training_pairs(manifest: &Path) -> Result<Vec<Pair>> {
    let pairs: Vec<Pair> = load_dataset(manifest)?
        .into_iter()
        .filter(|p| p.split == Split::Train)
        .collect();
    if pairs.is_empty() {
        return Err(Error::config(format!("{} has no training shapes", manifest.display())));
    }
    Ok(pairs)
}

fn train(a: &TrainArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref(), &a.seed)?;
    if let Some(v) = a.ablation {
        v.apply(&mut cfg);
    }
    if let Some(e) = a.epochs {
        match a.stage {
            1 => cfg.stage1.epochs = e,
            _ => cfg.stage2.train.epochs = e,
        }
    }
    cfg.validate()?;
    let teacher = match (a.stage, &a.stage1_ckpt) {
        (2, None) => {
            return Err(Error::config(
                "stage 2 needs the frozen first-stage model: pass --stage1-ckpt <path>",
            ))
        }
        (_, t) => t.clone(),
    };
    let pairs = training_pairs(&a.data)?;
    let opts = TrainOptions {
        out_dir: a.out.clone(),
        resume: a.resume,
        stop_after: None,
        verbose: a.verbose,
    };
    let start = Instant::now();
    let report = match teacher {
        None => train_stage1(&pairs, &cfg, &opts)?.2,
        Some(t) => crate::pipeline::train_stage2(&t, &pairs, &cfg, &opts)?.2,
    };
    let mut record = RunRecord::new(&format!("train --stage {}", a.stage), &cfg).with_rows(&report.rows);
    record.timings.insert("train_seconds".into(), start.elapsed().as_secs_f64());
    record.write(&a.out.join(format!("stage{}_run.toml", a.stage)))?;
    println!("{}", report.checkpoint.display());
    Ok(())
}

/// Shape id of a cloud file: the stem without a `_partial`, `_complete`
/// or `_completion` suffix.
pub fn shape_id(path: &Path) -> String {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
    ["_completion", "_complete", "_partial"]
        .iter()
        .find_map(|suf| stem.strip_suffix(suf))
        .unwrap_or(stem)
        .to_string()
}

/// Family part of an id such as `box-00012`.
fn family_of(id: &str) -> &str {
    id.rsplit_once('-').map_or(id, |(f, _)| f)
}

fn split_inputs(manifest: &Path, split: Split) -> Result<Vec<PathBuf>> {
    let m = Manifest::read(manifest)?;
    let dir = manifest.parent().unwrap_or(Path::new("."));
    Ok(m.entries
        .iter()
        .filter(|e| e.split == split)
        .map(|e| dir.join(&e.partial))
        .collect())
}

/// Completes each input and writes `<id>_completion.ply` (plus
/// intermediates) into `out`. Returns the written completion paths.
pub fn complete_files(
    model: &Pipeline,
    store: &crate::tensor::params::ParamStore,
    inputs: &[PathBuf],
    out: &Path,
    seed: u64,
    dump: bool,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let tag = vec![format!("config_hash {}", hash_hex(model.config.hash())), format!("seed {seed}")];
    let mut written = Vec::new();
    for input in inputs {
        let id = shape_id(input);
        let partial = read_cloud(input, Source::PartialInput)?;
        let c = model.complete(store, &partial, seed)?;
        let path = out.join(format!("{id}_completion.ply"));
        write_ply(&path, c.output(), &tag)?;
        if dump {
            let mut parts: Vec<(String, &PointCloud)> = vec![
                ("keypoints".into(), &c.keypoints),
                ("symmetric".into(), &c.mirrored),
                ("coarse".into(), &c.coarse),
            ];
            for (l, s) in c.stages.iter().enumerate() {
                parts.push((format!("refined{}", l + 1), s));
            }
            for (name, cloud) in parts {
                write_ply(&out.join(format!("{id}_{name}.ply")), cloud, &tag)?;
            }
        }
        written.push(path);
    }
    Ok(written)
}

fn complete(a: &CompleteArgs) -> Result<()> {
    let (model, store) = Pipeline::load(&a.ckpt)?;
    let seed = a.seed.resolve()?.unwrap_or(0);
    let inputs = match &a.data {
        Some(m) => split_inputs(m, a.split)?,
        None => a.input.clone(),
    };
    for p in complete_files(&model, &store, &inputs, &a.out, seed, a.dump_intermediates)? {
        println!("{}", p.display());
    }
    Ok(())
}

/// One evaluated shape.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeScore {
    pub id: String,
    pub family: String,
    pub cd_l1: f64,
    pub cd_l2: f64,
    pub f_score: f64,
}

/// F-score threshold: 1% of the largest side of the ground truth's
/// bounding box.
pub fn f_score_tau(gt: &PointCloud) -> f64 {
    let (lo, hi) = gt.bounds();
    let extent = (0..3).map(|k| hi[k] - lo[k]).fold(0.0, f64::max);
    0.01 * extent
}

pub fn score(id: &str, pred: &PointCloud, gt: &PointCloud) -> Result<ShapeScore> {
    Ok(ShapeScore {
        id: id.to_string(),
        family: family_of(id).to_string(),
        cd_l1: chamfer_l1(pred, gt)?,
        cd_l2: chamfer_l2(pred, gt)?,
        f_score: f_score(pred, gt, f_score_tau(gt))?,
    })
}

/// Cloud files in `dir` keyed by shape id. Ground-truth directories may
/// also hold partial clouds; those are skipped.
fn clouds_by_id(dir: &Path, skip_partial: bool) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or_default();
        if !matches!(ext, "ply" | "xyz") {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        if skip_partial && stem.ends_with("_partial") {
            continue;
        }
        // Intermediates written by `complete --dump-intermediates`.
        if !skip_partial && !stem.ends_with("_completion") && stem.contains('_') {
            continue;
        }
        out.insert(shape_id(&path), path);
    }
    Ok(out)
}

/// Scores paired clouds, spreading the pairs over the available cores.
pub fn score_pairs(pairs: &[(String, PathBuf, PathBuf)]) -> Result<Vec<ShapeScore>> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(pairs.len().max(1));
    let chunk = pairs.len().div_ceil(workers).max(1);
    std::thread::scope(|s| {
        let handles: Vec<_> = pairs
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    part.iter()
                        .map(|(id, p, g)| {
                            let pred = read_cloud(p, Source::Refined(0))?;
                            let gt = read_cloud(g, Source::GroundTruth)?;
                            score(id, &pred, &gt)
                        })
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        let mut all = Vec::with_capacity(pairs.len());
        for h in handles {
            all.extend(h.join().expect("scoring thread panicked")?);
        }
        Ok(all)
    })
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// Metrics table: one row per shape, then one per family and one for all
/// shapes. Chamfer columns are scaled by 10³. `mmd_x1e3` is filled on
/// aggregate rows only, when requested.
pub fn metrics_csv(scores: &[ShapeScore], mmd_by_group: Option<&BTreeMap<String, f64>>) -> String {
    let mut s = String::from("row,id,family,cd_l1_x1e3,cd_l2_x1e3,fscore_1pct,mmd_x1e3\n");
    let fmt = |v: f64| format!("{v:.6}");
    for r in scores {
        let _ = writeln!(
            s,
            "shape,{},{},{},{},{},",
            r.id,
            r.family,
            fmt(r.cd_l1 * 1e3),
            fmt(r.cd_l2 * 1e3),
            fmt(r.f_score)
        );
    }
    let mut groups: BTreeMap<&str, Vec<&ShapeScore>> = BTreeMap::new();
    for r in scores {
        groups.entry(&r.family).or_default().push(r);
    }
    let all: Vec<&ShapeScore> = scores.iter().collect();
    let rows = groups
        .iter()
        .map(|(f, v)| ("family", *f, v))
        .chain(std::iter::once(("all", "*", &all)));
    for (kind, name, v) in rows {
        let m = mmd_by_group
            .and_then(|g| g.get(name))
            .map(|x| fmt(x * 1e3))
            .unwrap_or_default();
        let _ = writeln!(
            s,
            "{kind},,{name},{},{},{},{m}",
            fmt(mean(v.iter().map(|r| r.cd_l1 * 1e3))),
            fmt(mean(v.iter().map(|r| r.cd_l2 * 1e3))),
            fmt(mean(v.iter().map(|r| r.f_score))),
        );
    }
    s
}

fn eval(a: &EvalArgs) -> std::result::Result<(), Failure> {
    let preds = clouds_by_id(&a.pred, false)?;
    let gts = clouds_by_id(&a.gt, true)?;
    let missing: Vec<&String> = gts.keys().filter(|k| !preds.contains_key(*k)).collect();
    let extra: Vec<&String> = preds.keys().filter(|k| !gts.contains_key(*k)).collect();
    if !missing.is_empty() || !extra.is_empty() {
        let mut msg = String::from("prediction and ground-truth ids do not match");
        for id in &missing {
            let _ = write!(msg, "\n  no prediction for {id}");
        }
        for id in &extra {
            let _ = write!(msg, "\n  no ground truth for {id}");
        }
        return Err(Failure { code: 5, msg });
    }
    let pairs: Vec<(String, PathBuf, PathBuf)> = gts
        .iter()
        .map(|(id, g)| (id.clone(), preds[id].clone(), g.clone()))
        .collect();
    let scores = score_pairs(&pairs)?;
    let mmds = if a.mmd {
        let load = |paths: &[&PathBuf]| -> Result<Vec<PointCloud>> {
            paths.iter().map(|p| read_cloud(p, Source::GroundTruth)).collect()
        };
        let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, (id, _, _)) in pairs.iter().enumerate() {
            groups.entry(family_of(id).to_string()).or_default().push(i);
            groups.entry("*".into()).or_default().push(i);
        }
        let mut out = BTreeMap::new();
        for (name, idx) in groups {
            let p = load(&idx.iter().map(|&i| &pairs[i].1).collect::<Vec<_>>())?;
            let g = load(&idx.iter().map(|&i| &pairs[i].2).collect::<Vec<_>>())?;
            out.insert(name, mmd(&p, &g)?);
        }
        Some(out)
    } else {
        None
    };
    let csv = metrics_csv(&scores, mmds.as_ref());
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(&a.out, csv).map_err(|e| Error::io(&a.out, e))?;
    println!("{}", a.out.display());
    Ok(())
}

/// Mean scores of one trained variant over a set of pairs.
#[derive(Clone, Debug)]
pub struct VariantScore {
    pub variant: Ablation,
    pub cd_l1: f64,
    pub cd_l2: f64,
    pub f_score: f64,
    pub final_loss: f64,
}

/// Trains stage 2 for `variant` against a shared teacher and scores its
/// completions of `eval_pairs`.
pub fn run_variant(
    base: &PipelineConfig,
    variant: Ablation,
    teacher: &Path,
    train: &[Pair],
    eval_pairs: &[Pair],
    out: &Path,
    verbose: bool,
) -> Result<VariantScore> {
    let mut cfg = base.clone();
    variant.apply(&mut cfg);
    let mut opts = TrainOptions::new(out.join(variant.to_string()));
    opts.verbose = verbose;
    let (model, store, report): (Pipeline, _, TrainReport) = crate::pipeline::train_stage2(teacher, train, &cfg, &opts)?;
    let mut scores = Vec::with_capacity(eval_pairs.len());
    for p in eval_pairs {
        let c = model.complete(&store, &p.partial, cfg.seed)?;
        scores.push(score(&p.id, c.output(), &p.complete)?);
    }
    Ok(VariantScore {
        variant,
        cd_l1: mean(scores.iter().map(|s| s.cd_l1)),
        cd_l2: mean(scores.iter().map(|s| s.cd_l2)),
        f_score: mean(scores.iter().map(|s| s.f_score)),
        final_loss: report.rows.last().map_or(f64::NAN, |r| r.loss),
    })
}

pub fn ablation_csv(rows: &[VariantScore]) -> String {
    let mut s = String::from("variant,description,cd_l1_x1e3,cd_l2_x1e3,fscore_1pct,final_loss\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},\"{}\",{:.6},{:.6},{:.6},{:e}",
            r.variant,
            r.variant.describe(),
            r.cd_l1 * 1e3,
            r.cd_l2 * 1e3,
            r.f_score,
            r.final_loss
        );
    }
    s
}

fn ablate(a: &AblateArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref(), &a.seed)?;
    if let Some(e) = a.epochs {
        cfg.stage1.epochs = e;
        cfg.stage2.train.epochs = e;
    }
    cfg.validate()?;
    let all = load_dataset(&a.data)?;
    let train: Vec<Pair> = all.iter().filter(|p| p.split == Split::Train).cloned().collect();
    let held: Vec<Pair> = all.into_iter().filter(|p| p.split == a.split).collect();
    if train.is_empty() || held.is_empty() {
        return Err(Error::config(format!(
            "ablation needs training shapes and {} shapes in {}",
            a.split.name(),
            a.data.display()
        )));
    }
    let variants = if a.variants.is_empty() {
        Ablation::ALL.to_vec()
    } else {
        a.variants.clone()
    };
    let mut opts = TrainOptions::new(a.out.join("teacher"));
    opts.verbose = a.verbose;
    let start = Instant::now();
    let teacher = train_stage1(&train, &cfg, &opts)?.2.checkpoint;
    let mut record = RunRecord::new("ablate", &cfg);
    record.timings.insert("teacher_seconds".into(), start.elapsed().as_secs_f64());
    let mut rows = Vec::new();
    for v in variants {
        let t = Instant::now();
        rows.push(run_variant(&cfg, v, &teacher, &train, &held, &a.out, a.verbose)?);
        record.timings.insert(format!("{v}_seconds"), t.elapsed().as_secs_f64());
        eprintln!("{v}: done");
    }
    let path = a.out.join("ablation.csv");
    std::fs::write(&path, ablation_csv(&rows)).map_err(|e| Error::io(&path, e))?;
    record.write(&a.out.join("ablation_run.toml"))?;
    println!("{}", path.display());
    Ok(())
}
