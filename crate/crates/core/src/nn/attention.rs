use super::{Ctx, LayerNorm, Linear};
use crate::error::{Error, Result};
use crate::tensor::params::Init;
use crate::tensor::Var;

/// Multi-head scaled dot-product attention from query rows onto guide rows.
///
/// The output has one row per query. Permuting guide rows leaves it
/// unchanged; permuting query rows permutes it the same way.
#[derive(Clone, Debug)]
pub struct CrossAttention {
    pub heads: usize,
    pub dim: usize,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
}

impl CrossAttention {
    pub fn new(init: &mut Init<'_>, name: &str, dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::config(format!(
                "attention {name}: width {dim} is not divisible by {heads} heads"
            )));
        }
        let mut s = init.scope(name);
        Ok(Self {
            heads,
            dim,
            q: Linear::new(&mut s, "q", dim, dim, true)?,
            k: Linear::new(&mut s, "k", dim, dim, true)?,
            v: Linear::new(&mut s, "v", dim, dim, true)?,
            out: Linear::new(&mut s, "out", dim, dim, true)?,
        })
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t, '_>, query: Var<'t>, guide: Var<'t>) -> Result<Var<'t>> {
        Ok(self.forward_with_weights(ctx, query, guide)?.0)
    }

    /// Also returns the per-head attention matrices (queries × guide rows).
    pub fn forward_with_weights<'t>(
        &self,
        ctx: &Ctx<'t, '_>,
        query: Var<'t>,
        guide: Var<'t>,
    ) -> Result<(Var<'t>, Vec<Var<'t>>)> {
        if guide.rows() == 0 {
            return Err(Error::contract("attention over an empty guide set"));
        }
        let q = self.q.forward(ctx, query)?;
        let k = self.k.forward(ctx, guide)?;
        let v = self.v.forward(ctx, guide)?;
        let dh = self.dim / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (lo, hi) = (h * dh, (h + 1) * dh);
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (q.slice_cols(lo, hi)?, k.slice_cols(lo, hi)?, v.slice_cols(lo, hi)?)
            };
            let att = qh.matmul(kh.t()?)?.scale(scale)?.softmax()?;
            outs.push(att.matmul(vh)?);
            weights.push(att);
        }
        let joined = if outs.len() == 1 { outs[0] } else { Var::concat_cols(&outs)? };
        Ok((self.out.forward(ctx, joined)?, weights))
    }
}

/// Pre-norm residual self-attention: `x + attn(LN(x), LN(x))`.
#[derive(Clone, Debug)]
pub struct SelfAttentionBlock {
    pub norm: LayerNorm,
    pub attn: CrossAttention,
}

impl SelfAttentionBlock {
    pub fn new(init: &mut Init<'_>, name: &str, dim: usize, heads: usize) -> Result<Self> {
        let mut s = init.scope(name);
        Ok(Self {
            norm: LayerNorm::new(&mut s, "norm", dim)?,
            attn: CrossAttention::new(&mut s, "attn", dim, heads)?,
        })
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        let n = self.norm.forward(ctx, x)?;
        x.add(self.attn.forward(ctx, n, n)?)
    }
}
