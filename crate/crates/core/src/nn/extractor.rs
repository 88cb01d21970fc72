use super::{Ctx, FeatureSet, Linear, Mlp, SelfAttentionBlock};
use crate::error::Result;
use crate::geometry::{farthest_point_indices, knn_indices, Point};
use crate::tensor::params::Init;
use crate::tensor::{Tensor, Unary, Var};

pub const LOCAL_WIDTHS: [usize; 3] = [3, 16, 32];

/// Anchor points and their neighborhoods, reusable across forward passes
/// over the same cloud.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Grouping {
    /// Indices of the anchors (farthest point sampling from index 0).
    pub anchors: Vec<usize>,
    /// `anchors.len() · k` neighbor indices, nearest first.
    pub neighbors: Vec<usize>,
    pub k: usize,
}

impl Grouping {
    /// Groups `points` around `n_anchors` anchors with `min(k, points)`
    /// neighbors each.
    pub fn new(points: &[Point], n_anchors: usize, k: usize) -> Result<Self> {
        let anchors = farthest_point_indices(points, n_anchors, 0)?;
        let k = k.min(points.len()).max(1);
        let anchor_pts: Vec<Point> = anchors.iter().map(|&i| points[i]).collect();
        let neighbors = knn_indices(&anchor_pts, points, k)?;
        Ok(Self { anchors, neighbors, k })
    }

    pub fn anchor_points(&self, points: &[Point]) -> Vec<Point> {
        self.anchors.iter().map(|&i| points[i]).collect()
    }
}

/// Per-anchor features of a point cloud: a shared MLP on neighbor offsets,
/// max-pooled per neighborhood, joined with the anchor position, projected
/// to the model width and mixed by one self-attention block.
///
/// Coordinates enter as constants; gradients reach only the weights.
#[derive(Clone, Debug)]
pub struct Extractor {
    pub local: Mlp,
    pub proj: Linear,
    pub mix: SelfAttentionBlock,
    pub k: usize,
}

impl Extractor {
    pub fn new(init: &mut Init<'_>, name: &str, dim: usize, heads: usize, k: usize) -> Result<Self> {
        let mut s = init.scope(name);
        let local_out = LOCAL_WIDTHS[LOCAL_WIDTHS.len() - 1];
        Ok(Self {
            local: Mlp::new(&mut s, "local", &LOCAL_WIDTHS, Unary::Relu, true)?,
            proj: Linear::new(&mut s, "proj", local_out + 3, dim, true)?,
            mix: SelfAttentionBlock::new(&mut s, "mix", dim, heads)?,
            k,
        })
    }

    pub fn group(&self, points: &[Point], n_anchors: usize) -> Result<Grouping> {
        Grouping::new(points, n_anchors, self.k)
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t, '_>, points: &[Point], n_anchors: usize) -> Result<FeatureSet<'t>> {
        let g = self.group(points, n_anchors)?;
        self.forward_grouped(ctx, points, &g)
    }

    pub fn forward_grouped<'t>(&self, ctx: &Ctx<'t, '_>, points: &[Point], g: &Grouping) -> Result<FeatureSet<'t>> {
        let anchors = g.anchor_points(points);
        let mut rel = Vec::with_capacity(g.neighbors.len() * 3);
        for (slot, &j) in g.neighbors.iter().enumerate() {
            let a = anchors[slot / g.k];
            rel.extend((0..3).map(|c| points[j][c] - a[c]));
        }
        let rel = ctx.constant(Tensor::new(vec![g.neighbors.len(), 3], rel)?);
        let local = self.local.forward(ctx, rel)?.group_max(g.k)?;
        let joined = Var::concat_cols(&[local, ctx.points(&anchors)])?;
        let features = self.mix.forward(ctx, self.proj.forward(ctx, joined)?)?;
        FeatureSet::new(features, anchors)
    }
}
