use serde::{Deserialize, Serialize};

use super::{serialization_order, Ctx, CrossAttention, FeatureSet, Mlp, SerializationOrder, SsmBlock};
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::tensor::params::Init;
use crate::tensor::{Unary, Var};

/// How a refinement block mixes its own features with the keypoint and
/// symmetric-point guidance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionKind {
    /// Cross-attention from the block's points to each guidance set.
    Ca,
    /// Interleaved state-space scan over block and guidance tokens.
    MFusion,
    /// Concatenation with max-pooled guidance, no point-to-point exchange.
    Mlp,
}

impl std::fmt::Display for FusionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FusionKind::Ca => "ca",
            FusionKind::MFusion => "mfusion",
            FusionKind::Mlp => "mlp",
        })
    }
}

/// A fusion module. Each variant runs one branch per guidance set and
/// merges the branches with the MLP `psi`.
#[derive(Clone, Debug)]
pub enum Fusion {
    Ca {
        kp: CrossAttention,
        sym: CrossAttention,
        psi: Mlp,
    },
    MFusion {
        pos: Mlp,
        kp: SsmBlock,
        sym: SsmBlock,
        psi: Mlp,
        order: SerializationOrder,
    },
    Mlp {
        psi: Mlp,
    },
}

impl Fusion {
    pub fn new(
        init: &mut Init<'_>,
        name: &str,
        kind: FusionKind,
        dim: usize,
        heads: usize,
        state: usize,
        order: SerializationOrder,
    ) -> Result<Self> {
        let mut s = init.scope(name);
        Ok(match kind {
            FusionKind::Ca => Fusion::Ca {
                kp: CrossAttention::new(&mut s, "kp", dim, heads)?,
                sym: CrossAttention::new(&mut s, "sym", dim, heads)?,
                psi: Mlp::new(&mut s, "psi", &[2 * dim, dim, dim], Unary::Gelu, false)?,
            },
            FusionKind::MFusion => Fusion::MFusion {
                pos: Mlp::new(&mut s, "pos", &[3, dim, dim], Unary::Gelu, false)?,
                kp: SsmBlock::new(&mut s, "kp", dim, state)?,
                sym: SsmBlock::new(&mut s, "sym", dim, state)?,
                psi: Mlp::new(&mut s, "psi", &[2 * dim, dim, dim], Unary::Gelu, false)?,
                order,
            },
            FusionKind::Mlp => Fusion::Mlp {
                psi: Mlp::new(&mut s, "psi", &[3 * dim, dim, dim], Unary::Gelu, false)?,
            },
        })
    }

    pub fn kind(&self) -> FusionKind {
        match self {
            Fusion::Ca { .. } => FusionKind::Ca,
            Fusion::MFusion { .. } => FusionKind::MFusion,
            Fusion::Mlp { .. } => FusionKind::Mlp,
        }
    }

    /// Fused features, one row per point of `base`.
    pub fn forward<'t>(
        &self,
        ctx: &Ctx<'t, '_>,
        base: &FeatureSet<'t>,
        kp: &FeatureSet<'t>,
        sym: &FeatureSet<'t>,
    ) -> Result<Var<'t>> {
        match self {
            Fusion::Ca { kp: ak, sym: asym, psi } => {
                let a = ak.forward(ctx, base.features, kp.features)?;
                let b = asym.forward(ctx, base.features, sym.features)?;
                psi.forward(ctx, Var::concat_cols(&[a, b])?)
            }
            Fusion::MFusion {
                pos,
                kp: sk,
                sym: ss,
                psi,
                order,
            } => {
                let a = mamba_branch(ctx, pos, sk, *order, base, kp)?;
                let b = mamba_branch(ctx, pos, ss, *order, base, sym)?;
                psi.forward(ctx, Var::concat_cols(&[a, b])?)
            }
            Fusion::Mlp { psi } => {
                let a = pooled(kp, base.len())?;
                let b = pooled(sym, base.len())?;
                psi.forward(ctx, Var::concat_cols(&[base.features, a, b])?)
            }
        }
    }
}

/// Max-pooled guidance broadcast to `rows` rows.
fn pooled<'t>(guide: &FeatureSet<'t>, rows: usize) -> Result<Var<'t>> {
    if guide.is_empty() {
        return Err(Error::contract("fusion with an empty guidance set"));
    }
    let g = guide.features.max_rows()?.reshape(vec![1, guide.dim()])?;
    g.gather_rows(vec![0; rows])
}

/// Token sequence that strictly alternates base and guide tokens. Index
/// `i < base.len()` is base point `i`; larger indices are guide points.
///
/// Both streams keep their relative order from a joint serialization of
/// the union. When one stream runs out, the rest of the other is appended.
pub fn interleave_order(base: &[Point], guide: &[Point], order: SerializationOrder) -> Result<Vec<usize>> {
    let nb = base.len();
    let joint: Vec<Point> = base.iter().chain(guide).copied().collect();
    let seq = serialization_order(&joint, order)?;
    let (bs, gs): (Vec<usize>, Vec<usize>) = seq.into_iter().partition(|&i| i < nb);
    let mut out = Vec::with_capacity(joint.len());
    let (mut bi, mut gi) = (bs.into_iter(), gs.into_iter());
    loop {
        match (bi.next(), gi.next()) {
            (None, None) => break,
            (b, g) => out.extend(b.into_iter().chain(g)),
        }
    }
    Ok(out)
}

fn mamba_branch<'t>(
    ctx: &Ctx<'t, '_>,
    pos: &Mlp,
    ssm: &SsmBlock,
    order: SerializationOrder,
    base: &FeatureSet<'t>,
    guide: &FeatureSet<'t>,
) -> Result<Var<'t>> {
    if guide.is_empty() {
        return Err(Error::contract("fusion with an empty guidance set"));
    }
    let bf = base.features.add(pos.forward(ctx, ctx.points(&base.coords))?)?;
    let gf = guide.features.add(pos.forward(ctx, ctx.points(&guide.coords))?)?;
    let seq = interleave_order(&base.coords, &guide.coords, order)?;
    let mut where_base = vec![0; base.len()];
    for (slot, &i) in seq.iter().enumerate() {
        if i < base.len() {
            where_base[i] = slot;
        }
    }
    let tokens = Var::concat_rows(&[bf, gf])?.gather_rows(seq)?;
    ssm.forward(ctx, tokens)?.gather_rows(where_base)
}
