//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Every criterion always runs. The process exits non-zero only when
//! `ACCEPTANCE_STRICT=1` is set, so a failing long-running criterion is
//! reported without blocking the rest of the test suite. Set
//! `ACCEPTANCE_ONLY=<substring>[,<substring>...]` to run a subset.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use symfield::config::{default_fusion, Ablation, PipelineConfig};
use symfield::data::{generate_dataset, DatasetConfig, Family, OcclusionMode, OcclusionSpec, Pair};
use symfield::diffusion::{forward_sample, recover_clean, reverse_step_ddpm, ddim_step, DiffusionSchedule};
use symfield::geometry::{chamfer_l1, chamfer_l2, f_score, mmd, Point, PointCloud, Source};
use symfield::nn::{Ctx, CrossAttention, FeatureSet, MambaForward, Mlp, SerializationOrder, SsmBlock};
use symfield::pipeline::{train_stage2, Pipeline};
use symfield::teacher::{evaluate_stage1, train_stage1, Prepared, TransformTeacher};
use symfield::tensor::gradcheck::check_model;
use symfield::tensor::params::{Init, ParamStore};
use symfield::tensor::{scan_parallel, scan_sequential, Tensor, Unary, Var};
use symfield::train::TrainOptions;
use symfield::Result;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn main() {
    let only = std::env::var("ACCEPTANCE_ONLY").ok();
    let criteria: Vec<(&str, fn() -> Outcome)> = vec![
        ("benchmark-scale results documented as not reproduced", not_reproducible),
        ("diffusion algebra", diffusion_algebra),
        ("gradient suite", gradient_suite),
        ("scan equivalence", scan_equivalence),
        ("metric oracles", metric_oracles),
        ("cardinality contract", cardinality),
        ("ablation smoke matrix", smoke_matrix),
        ("determinism", determinism),
        ("stage-1 learnability", stage1_learnability),
        ("end-to-end completion beats its input", end_to_end),
        ("ablation direction [2,2,4] <= [16]", ablation_direction),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        if only.as_deref().is_some_and(|o| !o.split(',').any(|part| name.contains(part))) {
            continue;
        }
        let start = Instant::now();
        let res = std::panic::catch_unwind(run).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        // Multi-line details belong to criteria that report several checks.
        for line in res.detail.lines() {
            if let Some(sub) = line.strip_prefix("@") {
                println!("{sub}");
            }
        }
        let summary: Vec<&str> = res.detail.lines().filter(|l| !l.starts_with('@')).collect();
        println!(
            "{} {name} ({:.1}s): {}",
            if res.pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            summary.join("; ")
        );
        failed += usize::from(!res.pass);
    }
    println!("{failed} criteria failed");
    if failed > 0 && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn not_reproducible() -> Outcome {
    let marker = "Benchmark-scale numbers are not reproduced";
    let files = ["README.md", "book/src/introduction.md"];
    let missing: Vec<&str> = files
        .iter()
        .copied()
        .filter(|f| {
            std::fs::read_to_string(workspace_root().join(f))
                .map(|t| !t.contains(marker))
                .unwrap_or(true)
        })
        .collect();
    if missing.is_empty() {
        outcome(true, "stated in the README and the guide; the property and oracle suites stand in")
    } else {
        outcome(false, format!("statement missing from {missing:?}"))
    }
}

fn diffusion_algebra() -> Outcome {
    let start = Instant::now();
    let sched = DiffusionSchedule::linear(100, 1e-4, 0.02).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let z0: Vec<f64> = (0..1536).map(|_| rng.random_range(-2.0..2.0)).collect();
    let eps: Vec<f64> = (0..1536).map(|_| rng.random_range(-3.0..3.0)).collect();
    let mut worst: f64 = 0.0;
    for t in [1, 50, 100] {
        let zt = forward_sample(&z0, t, &eps, &sched).unwrap();
        let back = recover_clean(&zt, t, &eps, &sched).unwrap();
        worst = z0.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
    }
    // ᾱ_t as the running product of 1 − β_s, multiplied in the same order.
    let mut prod = 1.0;
    let mut product_exact = true;
    for t in 1..=100 {
        prod *= 1.0 - sched.beta(t);
        product_exact &= sched.alpha_bar(t) == prod;
    }
    // One ancestral step by hand at t = 50.
    let t = 50;
    let (a, ab, s) = (sched.alpha(t), sched.alpha_bar(t), sched.sigma(t));
    let zt = [0.3, -1.2];
    let e = [0.5, 0.25];
    let n = [-0.7, 1.1];
    let hand: Vec<f64> = (0..2)
        .map(|i| (zt[i] - (1.0 - a) / (1.0 - ab).sqrt() * e[i]) / a.sqrt() + s * n[i])
        .collect();
    let step = reverse_step_ddpm(&zt, t, &e, &n, &sched).unwrap();
    let step_err = hand.iter().zip(&step).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    // Deterministic step to the clean end equals the recovered clean value.
    let to_clean = ddim_step(&zt, t, 0, &e, &sched).unwrap();
    let clean = recover_clean(&zt, t, &e, &sched).unwrap();
    let ddim_err = to_clean.iter().zip(&clean).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let elapsed = start.elapsed();
    let pass = worst < 1e-10 && product_exact && step_err < 1e-14 && ddim_err < 1e-12 && elapsed < Duration::from_secs(1);
    outcome(
        pass,
        format!(
            "round trip max err {worst:.2e}, product identity exact: {product_exact}, step err {step_err:.1e}, clean-step err {ddim_err:.1e}, {:.0} ms",
            elapsed.as_secs_f64() * 1e3
        ),
    )
}

fn build<T>(seed: u64, f: impl FnOnce(&mut Init<'_>) -> Result<T>) -> (ParamStore, T) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let block = f(&mut Init::new(&mut store, &mut rng)).unwrap();
    (store, block)
}

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point> {
    (0..n).map(|_| [0; 3].map(|_| rng.random_range(-0.5..0.5))).collect()
}

fn reduce(y: Var<'_>) -> Result<Var<'_>> {
    let w = y.tape().constant(Tensor::new(
        y.shape(),
        (0..y.value().len()).map(|i| 0.2 + 0.13 * (i % 5) as f64).collect(),
    )?);
    y.mul(w)?.sum()
}

/// Moves every parameter off its initial value so that zero-initialized
/// layers do not hide gradient paths.
fn jitter(store: &mut ParamStore, seed: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<_> = store.iter().map(|(id, _, _)| id).collect();
    for id in ids {
        for v in store.value_mut(id).data_mut() {
            *v += rng.random_range(-scale..scale);
        }
    }
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = random_tensor(&mut rng, 5, 4);
    let g = random_tensor(&mut rng, 3, 4);
    let mut results: Vec<(&str, f64)> = Vec::new();

    let (mut store, mlp) = build(1, |i| Mlp::new(i, "mlp", &[4, 6, 3], Unary::Gelu, false));
    let r = check_model(&mut store, &[x.clone()], 1e-6, 1e-3, |tape, s, v| {
        reduce(mlp.forward(&Ctx::new(tape, s), v[0])?)
    });
    results.push(("mlp", r.map_or(f64::INFINITY, |r| r.max_rel_error)));

    let (mut store, att) = build(2, |i| CrossAttention::new(i, "mca", 4, 2));
    let r = check_model(&mut store, &[x.clone(), g.clone()], 1e-6, 1e-3, |tape, s, v| {
        reduce(att.forward(&Ctx::new(tape, s), v[0], v[1])?)
    });
    results.push(("cross-attention", r.map_or(f64::INFINITY, |r| r.max_rel_error)));

    let (mut store, ssm) = build(3, |i| SsmBlock::new(i, "ssm", 4, 3));
    let r = check_model(&mut store, &[x.clone()], 1e-6, 1e-3, |tape, s, v| {
        reduce(ssm.forward(&Ctx::new(tape, s), v[0])?)
    });
    results.push(("state-space block", r.map_or(f64::INFINITY, |r| r.max_rel_error)));

    let (mut store, up) = build(4, |i| MambaForward::new(i, "up", 4, 2, 2, 0.2, SerializationOrder::Morton));
    let parents = Tensor::from_points(&random_points(&mut rng, 3));
    let feats = random_tensor(&mut rng, 3, 4);
    let r = check_model(&mut store, &[parents, feats], 1e-6, 1e-3, |tape, s, v| {
        reduce(up.forward(&Ctx::new(tape, s), v[0], v[1])?.coords)
    });
    results.push(("upsampling unit", r.map_or(f64::INFINITY, |r| r.max_rel_error)));

    let mut cfg = PipelineConfig::default();
    cfg.model.dim = 4;
    cfg.model.state = 2;
    cfg.model.n_keypoints = 5;
    let (teacher, mut store) = TransformTeacher::build(&cfg).unwrap();
    jitter(&mut store, 5, 0.3);
    let (fk, fgt) = (random_tensor(&mut rng, 5, 4), random_tensor(&mut rng, 7, 4));
    let (ck, cg) = (random_points(&mut rng, 5), random_points(&mut rng, 7));
    let r = check_model(&mut store, &[fk, fgt], 1e-6, 1e-3, |tape, s, v| {
        let a = FeatureSet::new(v[0], ck.clone())?;
        let b = FeatureSet::new(v[1], cg.clone())?;
        reduce(teacher.field(&Ctx::new(tape, s), &a, &b)?)
    });
    results.push(("teacher head", r.map_or(f64::INFINITY, |r| r.max_rel_error)));

    let (model, mut store) = Pipeline::build(&cfg).unwrap();
    jitter(&mut store, 6, 0.3);
    let cond = random_tensor(&mut rng, 5, 4);
    let zt = random_tensor(&mut rng, 10, 12);
    let cc = random_points(&mut rng, 5);
    let r = check_model(&mut store, &[cond, zt], 1e-6, 1e-3, |tape, s, v| {
        let c = FeatureSet::new(v[0], cc.clone())?;
        reduce(model.diffuser.predict_noise(&Ctx::new(tape, s), v[1], &[7, 63], &c)?)
    });
    results.push(("field predictor trunk", r.map_or(f64::INFINITY, |r| r.max_rel_error)));

    let elapsed = start.elapsed();
    let worst = results.iter().map(|r| r.1).fold(0.0, f64::max);
    let detail = results
        .iter()
        .map(|(n, e)| format!("{n} {e:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    outcome(
        worst < 1e-4 && elapsed < Duration::from_secs(120),
        format!("max relative error {detail}; {:.1} s", elapsed.as_secs_f64()),
    )
}

fn scan_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let a: Vec<f64> = (0..64).map(|_| rng.random_range(0.0..1.0)).collect();
        let b: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (s, p) = (scan_sequential(&a, &b), scan_parallel(&a, &b));
        worst = s.iter().zip(&p).map(|(x, y)| (x - y).abs()).fold(worst, f64::max);
    }
    outcome(worst < 1e-10, format!("100 instances of length 64, max abs diff {worst:.2e}"))
}

fn min_sq(p: &Point, set: &[Point]) -> f64 {
    let mut best = f64::INFINITY;
    for q in set {
        let d = (p[0] - q[0]) * (p[0] - q[0]) + (p[1] - q[1]) * (p[1] - q[1]) + (p[2] - q[2]) * (p[2] - q[2]);
        if d < best {
            best = d;
        }
    }
    best
}

fn brute_chamfer(p: &[Point], q: &[Point], squared: bool) -> f64 {
    let f = |x: &Point, set: &[Point]| if squared { min_sq(x, set) } else { min_sq(x, set).sqrt() };
    let a = p.iter().map(|x| f(x, q)).sum::<f64>() / p.len() as f64;
    let b = q.iter().map(|x| f(x, p)).sum::<f64>() / q.len() as f64;
    0.5 * (a + b)
}

fn brute_f_score(pred: &[Point], gt: &[Point], tau: f64) -> f64 {
    let prec = pred.iter().filter(|p| min_sq(p, gt).sqrt() < tau).count() as f64 / pred.len() as f64;
    let rec = gt.iter().filter(|g| min_sq(g, pred).sqrt() < tau).count() as f64 / gt.len() as f64;
    if prec + rec == 0.0 {
        0.0
    } else {
        2.0 * prec * rec / (prec + rec)
    }
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let cloud = |pts: &[Point]| PointCloud::new(pts.to_vec(), Source::Other).unwrap();
    let mut mismatches = Vec::new();
    let mut preds = Vec::new();
    let mut refs = Vec::new();
    for i in 0..50 {
        let (n, m) = (rng.random_range(1..=64), rng.random_range(1..=64));
        let p = random_points(&mut rng, n);
        let q = random_points(&mut rng, m);
        let tau = rng.random_range(0.05..0.3);
        let (cp, cq) = (cloud(&p), cloud(&q));
        if chamfer_l1(&cp, &cq).unwrap() != brute_chamfer(&p, &q, false) {
            mismatches.push(format!("chamfer_l1 #{i}"));
        }
        if chamfer_l2(&cp, &cq).unwrap() != brute_chamfer(&p, &q, true) {
            mismatches.push(format!("chamfer_l2 #{i}"));
        }
        if f_score(&cp, &cq, tau).unwrap() != brute_f_score(&p, &q, tau) {
            mismatches.push(format!("f_score #{i}"));
        }
        preds.push(p);
        refs.push(q);
    }
    for (lo, hi) in [(0, 10), (10, 30), (30, 50)] {
        let mut total = 0.0;
        for r in &refs[lo..hi] {
            let mut best = f64::INFINITY;
            for p in &preds[lo..hi] {
                best = best.min(brute_chamfer(r, p, true));
            }
            total += best;
        }
        let expect = total / (hi - lo) as f64;
        let ps: Vec<PointCloud> = preds[lo..hi].iter().map(|p| cloud(p)).collect();
        let rs: Vec<PointCloud> = refs[lo..hi].iter().map(|p| cloud(p)).collect();
        if mmd(&ps, &rs).unwrap() != expect {
            mismatches.push(format!("mmd {lo}..{hi}"));
        }
    }
    outcome(
        mismatches.is_empty(),
        format!("50 pairs, exact equality; mismatches: {mismatches:?}"),
    )
}

fn toy_config() -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.model.n_keypoints = 16;
    cfg.model.dim = 8;
    cfg.model.state = 4;
    cfg.model.k_neighbors = 6;
    cfg.diffusion.sampler_steps = 4;
    cfg.diffusion.proxy_timesteps = 3;
    for t in [&mut cfg.stage1, &mut cfg.stage2.train] {
        t.epochs = 1;
        t.batch_size = 2;
        t.warmup_epochs = 0;
    }
    cfg
}

fn dataset(n: usize, families: &[Family], n_points: usize, seed: u64) -> Vec<Pair> {
    let cfg = DatasetConfig {
        n_shapes: n,
        families: families.to_vec(),
        n_points,
        occlusion: OcclusionSpec {
            mode: OcclusionMode::HalfSpace,
            severity: 0.5,
            direction: Some([1.0, 0.0, 0.0]),
        },
        seed,
        min_partial_points: 16,
    };
    generate_dataset(&cfg).unwrap().1
}

fn cardinality() -> Outcome {
    let pairs = dataset(1, &[Family::Box], 4096, 1);
    let mut lines = Vec::new();
    let mut pass = true;
    for factors in [vec![2, 2, 4], vec![16], vec![2, 8], vec![4, 4]] {
        let mut cfg = toy_config();
        cfg.model.n_keypoints = 128;
        cfg.refiner.fusion = default_fusion(factors.len());
        cfg.refiner.factors = factors.clone();
        let (model, store) = Pipeline::build(&cfg).unwrap();
        let c = model.complete(&store, &pairs[0].partial, 0).unwrap();
        let sizes: Vec<usize> = c.stages.iter().map(PointCloud::len).collect();
        pass &= c.coarse.len() == 256 && c.output().len() == 16 * c.coarse.len();
        lines.push(format!("{factors:?}: coarse {} -> {sizes:?}", c.coarse.len()));
    }
    outcome(pass, format!("N_k=128; {}", lines.join(", ")))
}

fn smoke_matrix() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let pairs = dataset(4, &[Family::Box, Family::MirroredComposite], 512, 2);
    let base = toy_config();
    let teacher = match train_stage1(&pairs, &base, &TrainOptions::new(dir.path().join("teacher"))) {
        Ok(r) => r.2.checkpoint,
        Err(e) => return outcome(false, format!("teacher: {e}")),
    };
    let mut failures = Vec::new();
    for v in Ablation::ALL {
        let mut cfg = base.clone();
        v.apply(&mut cfg);
        let run = || -> Result<usize> {
            let (model, store, _) = train_stage2(&teacher, &pairs, &cfg, &TrainOptions::new(dir.path().join(v.to_string())))?;
            Ok(model.complete(&store, &pairs[0].partial, 1)?.output().len())
        };
        match run() {
            Ok(n) if n == cfg.output_points() => {}
            Ok(n) => failures.push(format!("{v}: {n} points")),
            Err(e) => failures.push(format!("{v}: {e}")),
        }
    }
    outcome(
        failures.is_empty(),
        format!("{} variants trained one step and completed; failures: {failures:?}", Ablation::ALL.len()),
    )
}

const DET_DATA: &str = "n_shapes = 6\nn_points = 512\nfamilies = [\"box\", \"wing-profile\"]\nmin_partial_points = 64\n\n[occlusion]\nmode = \"viewpoint\"\nseverity = 0.4\n";
const DET_MODEL: &str = "[model]\nn_keypoints = 16\ndim = 8\nstate = 4\nk_neighbors = 6\n\n[diffusion]\nsampler_steps = 4\nproxy_timesteps = 3\n\n[stage1]\nepochs = 2\nbatch_size = 2\nwarmup_epochs = 1\n\n[stage2]\nepochs = 2\nbatch_size = 2\nwarmup_epochs = 1\n";

/// Runs every seeded command into `root` and returns the error, if any.
fn seeded_commands(root: &Path) -> std::result::Result<(), String> {
    let bin = env!("CARGO_BIN_EXE_symfield");
    let p = |s: &str| root.join(s).to_str().unwrap().to_string();
    std::fs::write(root.join("data.toml"), DET_DATA).unwrap();
    std::fs::write(root.join("model.toml"), DET_MODEL).unwrap();
    let cmds: Vec<Vec<String>> = vec![
        vec!["gen-data".into(), "--config".into(), p("data.toml"), "--out".into(), p("data"), "--seed".into(), "8".into()],
        vec!["train".into(), "--stage".into(), "1".into(), "--config".into(), p("model.toml"), "--data".into(), p("data/manifest.tsv"), "--out".into(), p("run"), "--seed".into(), "8".into()],
        vec!["train".into(), "--stage".into(), "2".into(), "--config".into(), p("model.toml"), "--data".into(), p("data/manifest.tsv"), "--out".into(), p("run"), "--stage1-ckpt".into(), p("run/stage1.ckpt"), "--seed".into(), "8".into()],
        vec!["complete".into(), "--ckpt".into(), p("run/stage2.ckpt"), "--data".into(), p("data/manifest.tsv"), "--split".into(), "train".into(), "--out".into(), p("pred"), "--seed".into(), "8".into(), "--dump-intermediates".into()],
        vec!["ablate".into(), "--config".into(), p("model.toml"), "--data".into(), p("data/manifest.tsv"), "--out".into(), p("abl"), "--variants".into(), "A2,C1".into(), "--split".into(), "train".into(), "--seed".into(), "8".into()],
    ];
    for c in cmds {
        let out = Command::new(bin).args(&c).env_remove("SIMBA_SEED").output().map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(format!("{}: {}", c[0], String::from_utf8_lossy(&out.stderr)));
        }
    }
    Ok(())
}

fn artifacts(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if !p.to_string_lossy().ends_with("_run.toml") {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        if let Err(e) = seeded_commands(d.path()) {
            return outcome(false, e);
        }
    }
    let files = artifacts(a.path());
    if files != artifacts(b.path()) {
        return outcome(false, "the two runs wrote different file sets");
    }
    let differing: Vec<String> = files
        .iter()
        .filter(|f| std::fs::read(a.path().join(f)).unwrap() != std::fs::read(b.path().join(f)).unwrap())
        .map(|f| f.display().to_string())
        .collect();
    outcome(
        differing.is_empty(),
        format!(
            "{} artifacts from gen-data, train (both stages), complete and ablate compared byte for byte; differing: {differing:?}",
            files.len()
        ),
    )
}

fn stage1_learnability() -> Outcome {
    let pairs = dataset(64, &[Family::MirroredComposite], 4096, 11);
    let mut cfg = PipelineConfig::default();
    cfg.stage1.lr_peak = 1e-3;
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let data: Vec<Prepared> = pairs
        .iter()
        .map(|p| Prepared::new(p, cfg.model.n_keypoints, cfg.model.k_neighbors).unwrap())
        .collect();
    let (m0, s0) = TransformTeacher::build(&cfg).unwrap();
    let initial = evaluate_stage1(&m0, &s0, &data).unwrap();
    let (model, store, _) = match train_stage1(&pairs, &cfg, &TrainOptions::new(dir.path())) {
        Ok(r) => r,
        Err(e) => return outcome(false, e.to_string()),
    };
    let last = evaluate_stage1(&model, &store, &data).unwrap();
    let elapsed = start.elapsed();
    let ratio = last / initial;
    outcome(
        ratio < 0.25 && elapsed < Duration::from_secs(30 * 60),
        format!(
            "64 shapes, N_k=128, 300 epochs: loss {initial:.4e} -> {last:.4e} (ratio {ratio:.3}, need < 0.25), {:.1} min",
            elapsed.as_secs_f64() / 60.0
        ),
    )
}

/// Reduced-scale setting shared by the end-to-end and ablation checks.
fn e2e_config() -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.model.n_keypoints = 64;
    cfg.model.dim = 32;
    for t in [&mut cfg.stage1, &mut cfg.stage2.train] {
        t.epochs = 100;
        t.lr_peak = 1e-3;
        t.warmup_epochs = 5;
    }
    cfg
}

fn mean_cd(model: &Pipeline, store: &ParamStore, held: &[Pair]) -> Result<(f64, usize, Vec<String>)> {
    let mut total = 0.0;
    let mut wins = 0;
    let mut rows = Vec::new();
    for p in held {
        let c = model.complete(store, &p.partial, 0)?;
        let out = chamfer_l1(c.output(), &p.complete)?;
        let kp = chamfer_l1(&c.keypoints, &p.complete)?;
        total += out;
        wins += usize::from(out < kp);
        rows.push(format!("@    {}: completion {out:.4e} vs keypoints {kp:.4e}", p.id));
    }
    Ok((total / held.len() as f64, wins, rows))
}

/// Teacher and [2,2,4] model trained once, shared by the end-to-end and
/// ablation-direction criteria.
struct Shared {
    dir: tempfile::TempDir,
    teacher: PathBuf,
    train: Vec<Pair>,
    held: Vec<Pair>,
    cd: f64,
    wins: usize,
    rows: Vec<String>,
    minutes: f64,
}

fn shared() -> &'static std::result::Result<Shared, String> {
    static SHARED: OnceLock<std::result::Result<Shared, String>> = OnceLock::new();
    SHARED.get_or_init(|| {
        let start = Instant::now();
        let train = dataset(64, &Family::ALL, 2048, 21);
        let held = dataset(16, &Family::ALL, 2048, 22);
        let cfg = e2e_config();
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let run = || -> Result<_> {
            let teacher = train_stage1(&train, &cfg, &TrainOptions::new(dir.path().join("teacher")))?.2.checkpoint;
            let (model, store, _) = train_stage2(&teacher, &train, &cfg, &TrainOptions::new(dir.path().join("B1")))?;
            Ok((teacher, mean_cd(&model, &store, &held)?))
        };
        let (teacher, (cd, wins, rows)) = run().map_err(|e| e.to_string())?;
        Ok(Shared {
            dir,
            teacher,
            train,
            held,
            cd,
            wins,
            rows,
            minutes: start.elapsed().as_secs_f64() / 60.0,
        })
    })
}

fn end_to_end() -> Outcome {
    match shared() {
        Err(e) => outcome(false, e.clone()),
        Ok(s) => {
            let mut detail = s.rows.join("\n");
            let _ = write!(
                detail,
                "\n16 held-out shapes: completion closer to ground truth than its keypoints for {}/16 (need >= 14); mean CD-L1 {:.4e}; both stages {:.1} min",
                s.wins, s.cd, s.minutes
            );
            outcome(s.wins >= 14, detail)
        }
    }
}

fn ablation_direction() -> Outcome {
    let s = match shared() {
        Err(e) => return outcome(false, e.clone()),
        Ok(s) => s,
    };
    let mut cfg = e2e_config();
    Ablation::B2.apply(&mut cfg);
    let run = || -> Result<f64> {
        let (model, store, _) = train_stage2(&s.teacher, &s.train, &cfg, &TrainOptions::new(s.dir.path().join("B2")))?;
        Ok(mean_cd(&model, &store, &s.held)?.0)
    };
    match run() {
        Err(e) => outcome(false, e.to_string()),
        Ok(b2) => outcome(
            s.cd <= b2,
            format!("same budget and teacher: mean CD-L1 [2,2,4] {:.4e} vs [16] {b2:.4e} (need <=)", s.cd),
        ),
    }
}
