//! The second stage: a conditional field predictor turns partial-input
//! features into a transformation field, the field mirrors the keypoints
//! into a coarse completion, and a cascade of fuse-and-upsample blocks
//! refines it to the output resolution.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{PipelineConfig, PredictorKind};
use crate::data::Pair;
use crate::diffusion::{gaussian, proxy_loss, sample_ddim_var, DiffusionSchedule, TimestepWeights};
use crate::error::{Error, Result};
use crate::geometry::{chamfer_loss, Normalization, Point, PointCloud, Source, TransformField};
use crate::nn::{CrossAttention, Ctx, Extractor, FeatureSet, Fusion, LayerNorm, Linear, MambaForward, Mlp};
use crate::teacher::{Prepared, TransformTeacher, EXTRACTOR_SCOPE, FIELD_WIDTH, IDENTITY_ENTRY};
use crate::tensor::checkpoint::{config_hash, Checkpoint};
use crate::tensor::params::{Init, ParamStore};
use crate::tensor::{Tape, Tensor, Unary, Var};
use crate::train::{Run, TrainOptions, TrainReport};

pub(crate) const STAGE: &str = "stage2";

/// Sinusoidal embedding of a timestep: `[sin(t·ω_i), cos(t·ω_i)]` with
/// `ω_i = 10000^(−2i/dim)`.
pub fn timestep_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let w = 10000f64.powf(-2.0 * i as f64 / dim as f64);
        out[i] = (t as f64 * w).sin();
        out[half + i] = (t as f64 * w).cos();
    }
    out
}

/// Conditional predictor over `N_k × 12` fields.
///
/// Each keypoint token is the embedded field entry plus the timestep
/// embedding plus the keypoint's condition feature; it then attends to all
/// condition features and an MLP whose last layer starts at zero reads out
/// the noise estimate (or, for [`PredictorKind::Regression`], a correction
/// to the identity field).
#[derive(Clone, Debug)]
pub struct FieldDiffuser {
    pub kind: PredictorKind,
    pub input: Linear,
    pub time: Mlp,
    pub cross: CrossAttention,
    pub norm: LayerNorm,
    pub trunk: Mlp,
    pub dim: usize,
    /// Timestep fed to the regression variant, which never sees noise.
    pub regression_t: usize,
}

impl FieldDiffuser {
    pub fn new(init: &mut Init<'_>, name: &str, cfg: &PipelineConfig) -> Result<Self> {
        let d = cfg.model.dim;
        let mut s = init.scope(name);
        let trunk = Mlp::new(&mut s, "trunk", &[d, d, FIELD_WIDTH], Unary::Gelu, false)?;
        let last = &trunk.layers[trunk.layers.len() - 1];
        s.fill(last.w, 0.0);
        if let Some(b) = last.b {
            s.fill(b, 0.0);
        }
        Ok(Self {
            kind: cfg.stage2.predictor,
            input: Linear::new(&mut s, "input", FIELD_WIDTH, d, true)?,
            time: Mlp::new(&mut s, "time", &[d, d, d], Unary::Gelu, false)?,
            cross: CrossAttention::new(&mut s, "cross", d, cfg.model.heads)?,
            norm: LayerNorm::new(&mut s, "norm", d)?,
            trunk,
            dim: d,
            regression_t: cfg.diffusion.steps,
        })
    }

    /// Noise estimate for stacked fields: `zt` holds `ts.len()` consecutive
    /// blocks of `N_k` rows, block `b` at timestep `ts[b]`.
    pub fn predict_noise<'t>(
        &self,
        ctx: &Ctx<'t, '_>,
        zt: Var<'t>,
        ts: &[usize],
        cond: &FeatureSet<'t>,
    ) -> Result<Var<'t>> {
        let n = cond.len();
        if zt.shape() != [ts.len() * n, FIELD_WIDTH] {
            return Err(Error::Shape {
                op: "predict_noise",
                left: zt.shape(),
                right: vec![ts.len() * n, FIELD_WIDTH],
            });
        }
        let rows = ts.len() * n;
        let emb: Vec<f64> = ts.iter().flat_map(|&t| timestep_embedding(t, self.dim)).collect();
        let temb = self
            .time
            .forward(ctx, ctx.constant(Tensor::new(vec![ts.len(), self.dim], emb)?))?
            .gather_rows((0..rows).map(|r| r / n).collect::<Vec<_>>())?;
        let tiled = cond.features.gather_rows((0..rows).map(|r| r % n).collect::<Vec<_>>())?;
        let h = self.input.forward(ctx, zt)?.add(temb)?.add(tiled)?;
        let h = h.add(self.cross.forward(ctx, h, cond.features)?)?;
        self.trunk.forward(ctx, self.norm.forward(ctx, h)?)
    }

    /// One-shot field for the regression variant.
    pub fn regress<'t>(&self, ctx: &Ctx<'t, '_>, cond: &FeatureSet<'t>) -> Result<Var<'t>> {
        let zero = ctx.constant(Tensor::zeros(vec![cond.len(), FIELD_WIDTH]));
        self.predict_noise(ctx, zero, &[self.regression_t], cond)?
            .add(ctx.constant(Tensor::new(vec![FIELD_WIDTH], IDENTITY_ENTRY.to_vec())?))
    }
}

/// One refinement block: fusion with the keypoint and mirrored-point
/// guidance, then upsampling, then features for the children.
#[derive(Clone, Debug)]
pub struct RefineBlock {
    pub fusion: Fusion,
    pub up: MambaForward,
    /// Child features from `[child coordinates, parent features]`.
    pub child: Mlp,
}

/// Cascade of [`RefineBlock`]s; block `l` (from 0) upsamples by
/// `factors[l]` with offsets bounded by `radius / 2^l`.
#[derive(Clone, Debug)]
pub struct CascadeRefiner {
    pub blocks: Vec<RefineBlock>,
}

impl CascadeRefiner {
    pub fn new(init: &mut Init<'_>, name: &str, cfg: &PipelineConfig) -> Result<Self> {
        let m = &cfg.model;
        let r = &cfg.refiner;
        let mut s = init.scope(name);
        let blocks = r
            .factors
            .iter()
            .zip(&r.fusion)
            .enumerate()
            .map(|(l, (&factor, &kind))| {
                let mut b = s.scope(&format!("block{l}"));
                Ok(RefineBlock {
                    fusion: Fusion::new(&mut b, "fusion", kind, m.dim, m.heads, m.state, m.serialization)?,
                    up: MambaForward::new(
                        &mut b,
                        "up",
                        m.dim,
                        m.state,
                        factor,
                        r.radius / 2f64.powi(l as i32),
                        m.serialization,
                    )?,
                    child: Mlp::new(&mut b, "child", &[3 + m.dim, m.dim, m.dim], Unary::Gelu, false)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { blocks })
    }

    /// Runs every block from the coarse cloud. `base` carries the coarse
    /// points' features (its coordinates must match the rows of `coarse`).
    /// Returns the coordinates produced by each block.
    pub fn refine<'t>(
        &self,
        ctx: &Ctx<'t, '_>,
        coarse: Var<'t>,
        base: FeatureSet<'t>,
        kp: &FeatureSet<'t>,
        sym: &FeatureSet<'t>,
    ) -> Result<Vec<Var<'t>>> {
        if coarse.rows() != base.len() {
            return Err(Error::Cardinality {
                what: "coarse points with features",
                expected: base.len(),
                got: coarse.rows(),
            });
        }
        let mut parents = coarse;
        let mut feats = base;
        let mut outputs = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let fused = block.fusion.forward(ctx, &feats, kp, sym)?;
            let up = block.up.forward(ctx, parents, fused)?;
            let n_child = up.coords.rows();
            let f = n_child / parents.rows();
            let parent_feats = up.features.gather_rows((0..n_child).map(|r| r / f).collect::<Vec<_>>())?;
            let child = block.child.forward(ctx, Var::concat_cols(&[up.coords, parent_feats])?)?;
            feats = FeatureSet::new(child, up.coords.value().to_points())?;
            parents = up.coords;
            outputs.push(up.coords);
        }
        Ok(outputs)
    }
}

/// The trainable second-stage model.
#[derive(Clone, Debug)]
pub struct Pipeline {
    pub config: PipelineConfig,
    pub extractor: Extractor,
    pub diffuser: FieldDiffuser,
    pub refiner: CascadeRefiner,
    pub schedule: DiffusionSchedule,
}

/// Every cloud produced on the way to a completion, in the input frame.
#[derive(Clone, Debug)]
pub struct Completion {
    pub keypoints: PointCloud,
    pub field: TransformField,
    /// Keypoints moved by the field.
    pub mirrored: PointCloud,
    /// Keypoints joined with their images (`2·N_k` points).
    pub coarse: PointCloud,
    /// Output of each refinement block; the last one is the completion.
    pub stages: Vec<PointCloud>,
}

impl Completion {
    pub fn output(&self) -> &PointCloud {
        &self.stages[self.stages.len() - 1]
    }
}

/// Tape values computed for one example.
pub struct Forward<'t> {
    pub keypoints: Vec<Point>,
    pub field: Var<'t>,
    pub coarse: Var<'t>,
    pub stages: Vec<Var<'t>>,
}

impl Pipeline {
    pub fn new(init: &mut Init<'_>, cfg: &PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        let m = &cfg.model;
        let d = &cfg.diffusion;
        Ok(Self {
            config: cfg.clone(),
            extractor: Extractor::new(init, EXTRACTOR_SCOPE, m.dim, m.heads, m.k_neighbors)?,
            diffuser: FieldDiffuser::new(init, "diffuser", cfg)?,
            refiner: CascadeRefiner::new(init, "refiner", cfg)?,
            schedule: DiffusionSchedule::linear(d.steps, d.beta_start, d.beta_end)?,
        })
    }

    pub fn build(cfg: &PipelineConfig) -> Result<(Self, ParamStore)> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x2_57a6e);
        let model = Self::new(&mut Init::new(&mut store, &mut rng), cfg)?;
        Ok((model, store))
    }

    /// Reads a second-stage checkpoint; the model is rebuilt from the
    /// configuration embedded in it.
    pub fn load(path: &Path) -> Result<(Self, ParamStore)> {
        let ck = Checkpoint::read(path)?;
        if ck.meta("stage") != Some(STAGE) {
            return Err(Error::Checkpoint(format!(
                "{} is not a completion checkpoint",
                path.display()
            )));
        }
        let cfg = PipelineConfig::from_toml(&ck.config)?;
        let (model, mut store) = Self::build(&cfg)?;
        store.load(ck.params())?;
        Ok((model, store))
    }

    /// Noise-to-field sampling with the deterministic sampler; `ctx`
    /// decides whether the samples stay differentiable.
    pub fn sample_field<'t>(&self, ctx: &Ctx<'t, '_>, cond: &FeatureSet<'t>, noise: &[f64]) -> Result<Var<'t>> {
        match self.diffuser.kind {
            PredictorKind::Regression => self.diffuser.regress(ctx, cond),
            PredictorKind::Diffusion => {
                let z = ctx.constant(Tensor::new(vec![cond.len(), FIELD_WIDTH], noise.to_vec())?);
                sample_ddim_var(z, self.config.diffusion.sampler_steps, &self.schedule, |zt, ts| {
                    self.diffuser.predict_noise(ctx, zt, ts, cond)
                })
            }
        }
    }

    /// Coarse completion and refinement for a normalized partial cloud.
    ///
    /// `grad_field` controls whether the sampled field carries gradients
    /// back to the predictor and extractor (joint training); otherwise it
    /// enters the refiner as a constant.
    pub fn forward<'t>(
        &self,
        ctx: &Ctx<'t, '_>,
        partial: &[Point],
        groups: &crate::nn::Grouping,
        noise: &[f64],
        grad_field: bool,
    ) -> Result<(Forward<'t>, FeatureSet<'t>)> {
        let fk = self.extractor.forward_grouped(ctx, partial, groups)?;
        let kp = ctx.points(&fk.coords);
        let field = if grad_field || ctx.is_frozen() {
            self.sample_field(ctx, &fk, noise)?
        } else {
            let frozen = Ctx::frozen(ctx.tape, ctx.store);
            let cond = FeatureSet::new(fk.features.detach(), fk.coords.clone())?;
            self.sample_field(&frozen, &cond, noise)?.detach()
        };
        let moved = field.apply_field(kp)?;
        let mirrored = moved.value().to_points();
        let fs = self.extractor.forward(ctx, &mirrored, mirrored.len())?;
        let coarse_raw = Var::concat_rows(&[kp, moved])?;
        let coarse_pts = coarse_raw.value().to_points();
        let base_groups = self.extractor.group(&coarse_pts, coarse_pts.len())?;
        let base = self.extractor.forward_grouped(ctx, &coarse_pts, &base_groups)?;
        let coarse = coarse_raw.gather_rows(base_groups.anchors.clone())?;
        let stages = self.refiner.refine(ctx, coarse, base, &fk, &fs)?;
        Ok((
            Forward {
                keypoints: fk.coords.clone(),
                field,
                coarse: coarse_raw,
                stages,
            },
            fk,
        ))
    }

    /// Gaussian noise for the sampler, drawn from `seed`.
    pub fn noise(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        gaussian(&mut rng, self.config.model.n_keypoints * FIELD_WIDTH)
    }

    /// Full inference: normalize, sample the field, build the coarse cloud,
    /// refine, map back to the input frame.
    pub fn complete(&self, store: &ParamStore, partial: &PointCloud, seed: u64) -> Result<Completion> {
        let nk = self.config.model.n_keypoints;
        if partial.len() < nk {
            return Err(Error::Cardinality {
                what: "input points for the keypoint count",
                expected: nk,
                got: partial.len(),
            });
        }
        let norm = Normalization::fit(partial);
        let pts: Vec<Point> = partial.points().iter().map(|&p| norm.forward(p)).collect();
        let groups = self.extractor.group(&pts, nk)?;
        let tape = Tape::new();
        let ctx = Ctx::frozen(&tape, store);
        let (fwd, _) = self.forward(&ctx, &pts, &groups, &self.noise(seed), false)?;
        let back = |v: &[Point], source: Source| -> Result<PointCloud> {
            let out = PointCloud::new(v.iter().map(|&p| norm.inverse(p)).collect(), source)?;
            Ok(match partial.label() {
                Some(l) => out.with_label(l),
                None => out,
            })
        };
        let field = TransformField::from_tensor(&fwd.field.value())?;
        let coarse = fwd.coarse.value().to_points();
        Ok(Completion {
            keypoints: back(&fwd.keypoints, Source::Keypoints)?,
            field: crate::teacher::field_in_input_frame(&field, &norm),
            mirrored: back(&coarse[nk..], Source::Symmetric)?,
            coarse: back(&coarse, Source::Coarse)?,
            stages: fwd
                .stages
                .iter()
                .enumerate()
                .map(|(l, s)| back(&s.value().to_points(), Source::Refined(l as u8 + 1)))
                .collect::<Result<_>>()?,
        })
    }
}

/// Proxy (or regression) term plus the Chamfer distance of every refined
/// cloud to the complete cloud.
pub fn stage2_loss<'t>(proxy: Var<'t>, refined: &[Var<'t>], complete: &[Point], cfg: &PipelineConfig) -> Result<Var<'t>> {
    if refined.len() != cfg.refiner.factors.len() {
        return Err(Error::Cardinality {
            what: "refined clouds",
            expected: cfg.refiner.factors.len(),
            got: refined.len(),
        });
    }
    let mut total = proxy;
    for &r in refined {
        total = total.add(chamfer_loss(r, complete, cfg.stage2.chamfer)?)?;
    }
    Ok(total)
}

/// A prepared example together with its teacher field.
struct Example {
    prep: Prepared,
    target: Tensor,
}

/// Per-example noise stream, fixed by `(seed, epoch, sample)`.
fn example_rng(seed: u64, epoch: usize, sample: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0002);
    rng.set_stream(((epoch as u64) << 32) | sample as u64);
    rng
}

/// Loss of one example on `ctx`'s tape.
fn example_loss<'t>(
    model: &Pipeline,
    weights: &TimestepWeights,
    ctx: &Ctx<'t, '_>,
    ex: &Example,
    rng: &mut ChaCha8Rng,
) -> Result<Var<'t>> {
    let cfg = &model.config;
    let noise = gaussian(rng, cfg.model.n_keypoints * FIELD_WIDTH);
    let (fwd, fk) = model.forward(ctx, &ex.prep.partial, &ex.prep.partial_groups, &noise, cfg.stage2.joint_backprop)?;
    let target = ctx.constant(ex.target.clone());
    let proxy = match cfg.stage2.predictor {
        PredictorKind::Diffusion => proxy_loss(
            target,
            |zt, ts| model.diffuser.predict_noise(ctx, zt, ts, &fk),
            weights,
            &model.schedule,
            rng,
        )?,
        PredictorKind::Regression => model.diffuser.regress(ctx, &fk)?.sub(target)?.square()?.mean()?,
    };
    stage2_loss(proxy, &fwd.stages, &ex.prep.complete, cfg)
}

/// Trains the second stage against a frozen teacher checkpoint, writing
/// `stage2.ckpt` and `stage2_loss.csv`.
///
/// Teacher fields are computed once per example before training; the
/// teacher's parameters are only read. The extractor starts from the
/// teacher's extractor.
pub fn train_stage2(
    teacher_ckpt: &Path,
    pairs: &[Pair],
    cfg: &PipelineConfig,
    opts: &TrainOptions,
) -> Result<(Pipeline, ParamStore, TrainReport)> {
    cfg.validate()?;
    if !teacher_ckpt.exists() {
        return Err(Error::config(format!(
            "first-stage checkpoint {} not found; train stage 1 first",
            teacher_ckpt.display()
        )));
    }
    let (teacher, teacher_store) = TransformTeacher::load(teacher_ckpt, cfg)?;
    let teacher_hash = config_hash(&Checkpoint::read(teacher_ckpt)?.config);
    let examples = pairs
        .iter()
        .map(|p| {
            let prep = Prepared::new(p, cfg.model.n_keypoints, cfg.model.k_neighbors)?;
            let (_, field) = teacher.regress(&teacher_store, &prep)?;
            Ok(Example {
                prep,
                target: field.to_tensor(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let (model, mut store) = Pipeline::build(cfg)?;
    let ids: Vec<_> = store
        .iter()
        .filter(|(_, n, _)| n.starts_with(EXTRACTOR_SCOPE))
        .map(|(id, n, _)| (id, n.to_string()))
        .collect();
    for (id, name) in ids {
        let tid = teacher_store
            .id(&name)
            .ok_or_else(|| Error::Checkpoint(format!("teacher lacks {name}")))?;
        *store.value_mut(id) = teacher_store.value(tid).clone();
    }

    let weights = TimestepWeights::evenly_spaced(&model.schedule, cfg.diffusion.proxy_timesteps, cfg.diffusion.lambda)?;
    let run = Run {
        stage: STAGE,
        train: &cfg.stage2.train,
        seed: cfg.seed,
        config: cfg.to_toml(),
        meta: vec![("teacher_config_hash".into(), format!("{teacher_hash:016x}"))],
        opts,
    };
    let report = run.execute(&mut store, examples.len(), |store, batch, epoch, _| {
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, store);
        let mut total: Option<Var<'_>> = None;
        for &i in batch {
            let mut rng = example_rng(cfg.seed, epoch, i);
            let l = example_loss(&model, &weights, &ctx, &examples[i], &mut rng)?;
            total = Some(match total {
                Some(t) => t.add(l)?,
                None => l,
            });
        }
        let loss = total
            .ok_or_else(|| Error::contract("empty batch"))?
            .scale(1.0 / batch.len() as f64)?;
        let value = loss.item();
        Ok((value, tape.backward(loss)?))
    })?;
    Ok((model, store, report))
}

/// Output path of the second-stage checkpoint inside a run directory.
pub fn checkpoint_path(dir: &Path) -> PathBuf {
    dir.join(format!("{STAGE}.ckpt"))
}
