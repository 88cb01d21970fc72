//! The first-stage teacher: sees both the partial input and the complete
//! cloud and regresses the transformation field that maps the partial
//! keypoints onto the missing surface.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::PipelineConfig;
use crate::data::Pair;
use crate::error::{Error, Result};
use crate::geometry::{chamfer_loss, ChamferKind, Normalization, Point, PointCloud, TransformField};
use crate::nn::{CrossAttention, Ctx, Extractor, FeatureSet, Grouping, Mlp};
use crate::tensor::checkpoint::Checkpoint;
use crate::tensor::params::{Init, ParamStore};
use crate::tensor::{Tape, Tensor, Unary, Var};
use crate::train::{Run, TrainOptions, TrainReport};

/// Field entries per keypoint: a row-major 3×3 matrix and a translation.
pub const FIELD_WIDTH: usize = 12;

/// The identity transform in field layout.
pub const IDENTITY_ENTRY: [f64; FIELD_WIDTH] = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0];

/// Parameter-name prefix of the shared extractor.
pub const EXTRACTOR_SCOPE: &str = "extractor";

/// One normalized training example with its neighborhoods precomputed.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub id: String,
    /// Fitted to the partial cloud and applied to both clouds.
    pub norm: Normalization,
    pub partial: Vec<Point>,
    pub complete: Vec<Point>,
    pub partial_groups: Grouping,
    pub complete_groups: Grouping,
}

impl Prepared {
    pub fn new(pair: &Pair, n_keypoints: usize, k: usize) -> Result<Self> {
        if pair.partial.len() < n_keypoints {
            return Err(Error::Cardinality {
                what: "partial points for the keypoint count",
                expected: n_keypoints,
                got: pair.partial.len(),
            });
        }
        let norm = Normalization::fit(&pair.partial);
        let partial: Vec<Point> = pair.partial.points().iter().map(|&p| norm.forward(p)).collect();
        let complete: Vec<Point> = pair.complete.points().iter().map(|&p| norm.forward(p)).collect();
        Ok(Self {
            id: pair.id.clone(),
            norm,
            partial_groups: Grouping::new(&partial, n_keypoints, k)?,
            complete_groups: Grouping::new(&complete, n_keypoints, k)?,
            partial,
            complete,
        })
    }

    /// Keypoints of the partial cloud (its farthest point sample).
    pub fn keypoints(&self) -> Vec<Point> {
        self.partial_groups.anchor_points(&self.partial)
    }
}

/// Regresses a per-keypoint affine field from partial and complete clouds.
///
/// One extractor serves both inputs. Keypoint features attend to the
/// complete cloud's features and are joined with its mean and max pool and
/// with the keypoint's own coordinates. A head whose last layer starts at
/// zero adds a correction to the identity.
#[derive(Clone, Debug)]
pub struct TransformTeacher {
    pub extractor: Extractor,
    pub cross: CrossAttention,
    pub head: Mlp,
    pub dim: usize,
}

impl TransformTeacher {
    pub fn new(init: &mut Init<'_>, cfg: &PipelineConfig) -> Result<Self> {
        let m = &cfg.model;
        let extractor = Extractor::new(init, EXTRACTOR_SCOPE, m.dim, m.heads, m.k_neighbors)?;
        let mut s = init.scope("teacher");
        let cross = CrossAttention::new(&mut s, "cross", m.dim, m.heads)?;
        let head = Mlp::new(&mut s, "head", &[3 * m.dim + 3, m.dim, FIELD_WIDTH], Unary::Gelu, false)?;
        let last = &head.layers[head.layers.len() - 1];
        s.fill(last.w, 0.0);
        if let Some(b) = last.b {
            s.fill(b, 0.0);
        }
        Ok(Self {
            extractor,
            cross,
            head,
            dim: m.dim,
        })
    }

    /// Builds a freshly initialized teacher and its parameters.
    pub fn build(cfg: &PipelineConfig) -> Result<(Self, ParamStore)> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let model = Self::new(&mut Init::new(&mut store, &mut rng), cfg)?;
        Ok((model, store))
    }

    /// Loads a teacher checkpoint, checking that it was written for a model
    /// of the same shape as `cfg` describes.
    pub fn load(path: &Path, cfg: &PipelineConfig) -> Result<(Self, ParamStore)> {
        let ck = Checkpoint::read(path)?;
        if ck.meta("stage") != Some(STAGE) {
            return Err(Error::Checkpoint(format!("{} is not a teacher checkpoint", path.display())));
        }
        let stored = PipelineConfig::from_toml(&ck.config)?;
        if stored.model != cfg.model {
            return Err(Error::Checkpoint(format!(
                "{} was trained with different [model] settings",
                path.display()
            )));
        }
        let (model, mut store) = Self::build(&stored)?;
        store.load(ck.params())?;
        Ok((model, store))
    }

    /// Features of a cloud at its anchors.
    pub fn extract<'t>(&self, ctx: &Ctx<'t, '_>, points: &[Point], groups: &Grouping) -> Result<FeatureSet<'t>> {
        self.extractor.forward_grouped(ctx, points, groups)
    }

    /// `N_k × 12` field for the keypoints of `partial`, given the features
    /// of the complete cloud.
    pub fn field<'t>(&self, ctx: &Ctx<'t, '_>, fk: &FeatureSet<'t>, fgt: &FeatureSet<'t>) -> Result<Var<'t>> {
        let n = fk.len();
        let attended = self.cross.forward(ctx, fk.features, fgt.features)?;
        let fused = fk.features.add(attended)?;
        let global = Var::concat_cols(&[fgt.features.mean_rows()?, fgt.features.max_rows()?])?
            .reshape(vec![1, 2 * self.dim])?
            .gather_rows(vec![0; n])?;
        let raw = self.head.forward(ctx, Var::concat_cols(&[fused, global, ctx.points(&fk.coords)])?)?;
        raw.add(ctx.constant(Tensor::from_parts(vec![FIELD_WIDTH], IDENTITY_ENTRY.to_vec())))
    }

    /// Keypoints and field for one prepared example.
    pub fn forward<'t>(&self, ctx: &Ctx<'t, '_>, ex: &Prepared) -> Result<(Vec<Point>, Var<'t>)> {
        let fk = self.extract(ctx, &ex.partial, &ex.partial_groups)?;
        let fgt = self.extract(ctx, &ex.complete, &ex.complete_groups)?;
        let field = self.field(ctx, &fk, &fgt)?;
        Ok((fk.coords, field))
    }

    /// Evaluates the field without recording gradients.
    pub fn regress(&self, store: &ParamStore, ex: &Prepared) -> Result<(Vec<Point>, TransformField)> {
        let tape = Tape::new();
        let ctx = Ctx::frozen(&tape, store);
        let (kp, field) = self.forward(&ctx, ex)?;
        Ok((kp, TransformField::from_tensor(&field.value())?))
    }

    /// Regresses the field for a raw pair. Keypoints and field are returned
    /// in the input frame.
    pub fn regress_target_field(
        &self,
        store: &ParamStore,
        pair: &Pair,
        cfg: &PipelineConfig,
    ) -> Result<(PointCloud, TransformField)> {
        let ex = Prepared::new(pair, cfg.model.n_keypoints, cfg.model.k_neighbors)?;
        let (kp, field) = self.regress(store, &ex)?;
        let kp = kp.into_iter().map(|p| ex.norm.inverse(p)).collect();
        Ok((PointCloud::new(kp, pair.partial.source())?, field_in_input_frame(&field, &ex.norm)))
    }
}

/// Re-expresses a field acting on normalized coordinates as one acting on
/// the original coordinates: `A p + (T / s + c − A c)`.
pub fn field_in_input_frame(field: &TransformField, norm: &Normalization) -> TransformField {
    let c = norm.centroid;
    let entries = field
        .entries()
        .iter()
        .map(|e| {
            let mut out = *e;
            for r in 0..3 {
                let ac: f64 = (0..3).map(|k| e[3 * r + k] * c[k]).sum();
                out[9 + r] = e[9 + r] / norm.scale + c[r] - ac;
            }
            out
        })
        .collect();
    TransformField::new(entries)
}

/// Chamfer-ℓ1 between the keypoints joined with their transformed images
/// and the complete cloud; differentiable through the field.
pub fn stage1_loss<'t>(keypoints: Var<'t>, field: Var<'t>, complete: &[Point]) -> Result<Var<'t>> {
    if field.rows() != keypoints.rows() {
        return Err(Error::Cardinality {
            what: "field entries per keypoint",
            expected: keypoints.rows(),
            got: field.rows(),
        });
    }
    let moved = field.apply_field(keypoints)?;
    // Transformed points go first: at the identity start each one coincides
    // with its keypoint, and nearest-neighbour ties resolve to the lower
    // index, so the uncovered target points still pull on the field.
    chamfer_loss(Var::concat_rows(&[moved, keypoints])?, complete, ChamferKind::L1)
}

pub(crate) const STAGE: &str = "stage1";

/// Mean loss of the current teacher over prepared examples.
pub fn evaluate_stage1(model: &TransformTeacher, store: &ParamStore, data: &[Prepared]) -> Result<f64> {
    let mut total = 0.0;
    for ex in data {
        let tape = Tape::new();
        let ctx = Ctx::frozen(&tape, store);
        let (kp, field) = model.forward(&ctx, ex)?;
        total += stage1_loss(ctx.points(&kp), field, &ex.complete)?.item();
    }
    Ok(total / data.len().max(1) as f64)
}

/// Trains a teacher on `pairs`, writing `stage1.ckpt` and
/// `stage1_loss.csv` into the output directory.
pub fn train_stage1(pairs: &[Pair], cfg: &PipelineConfig, opts: &TrainOptions) -> Result<(TransformTeacher, ParamStore, TrainReport)> {
    cfg.validate()?;
    let data = pairs
        .iter()
        .map(|p| Prepared::new(p, cfg.model.n_keypoints, cfg.model.k_neighbors))
        .collect::<Result<Vec<_>>>()?;
    let (model, mut store) = TransformTeacher::build(cfg)?;
    let run = Run {
        stage: STAGE,
        train: &cfg.stage1,
        seed: cfg.seed,
        config: cfg.to_toml(),
        meta: Vec::new(),
        opts,
    };
    let report = run.execute(&mut store, data.len(), |store, batch, _, _| {
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, store);
        let mut losses = Vec::with_capacity(batch.len());
        for &i in batch {
            let (kp, field) = model.forward(&ctx, &data[i])?;
            losses.push(stage1_loss(ctx.points(&kp), field, &data[i].complete)?.reshape(vec![1, 1])?);
        }
        let loss = Var::concat_rows(&losses)?.mean()?;
        let value = loss.item();
        Ok((value, tape.backward(loss)?))
    })?;
    Ok((model, store, report))
}
