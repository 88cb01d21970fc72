//! Learnable building blocks shared by the teacher, the field diffuser and
//! the refiner. Every block keeps only [`ParamId`]s; values live in a
//! [`ParamStore`] and forward passes read them through a [`Ctx`].

mod attention;
mod extractor;
mod fusion;
mod serialize;
mod ssm;
mod upsample;

pub use attention::{CrossAttention, SelfAttentionBlock};
pub use extractor::{Extractor, Grouping};
pub use fusion::{interleave_order, Fusion, FusionKind};
pub use serialize::{morton_code, serialization_order, serialize_points, SerializationOrder};
pub use ssm::SsmBlock;
pub use upsample::{MambaForward, UpsampleOutput};

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::tensor::params::{Init, ParamId, ParamStore};
use crate::tensor::{Tape, Tensor, Unary, Var};

/// Parameter access for one forward pass.
///
/// A frozen context hands out parameters as constants, so nothing upstream
/// of them receives gradients and the optimizer leaves them untouched.
#[derive(Clone, Copy)]
pub struct Ctx<'t, 's> {
    pub tape: &'t Tape,
    pub store: &'s ParamStore,
    frozen: bool,
}

impl<'t, 's> Ctx<'t, 's> {
    pub fn new(tape: &'t Tape, store: &'s ParamStore) -> Self {
        Self {
            tape,
            store,
            frozen: false,
        }
    }

    pub fn frozen(tape: &'t Tape, store: &'s ParamStore) -> Self {
        Self {
            tape,
            store,
            frozen: true,
        }
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn p(&self, id: ParamId) -> Var<'t> {
        if self.frozen {
            self.tape.frozen(self.store, id)
        } else {
            self.tape.param(self.store, id)
        }
    }

    pub fn constant(&self, t: Tensor) -> Var<'t> {
        self.tape.constant(t)
    }

    pub fn points(&self, points: &[Point]) -> Var<'t> {
        self.tape.constant(Tensor::from_points(points))
    }
}

/// Per-point feature rows together with the points they describe.
#[derive(Clone, Debug)]
pub struct FeatureSet<'t> {
    pub features: Var<'t>,
    pub coords: Vec<Point>,
}

impl<'t> FeatureSet<'t> {
    pub fn new(features: Var<'t>, coords: Vec<Point>) -> Result<Self> {
        if features.rows() != coords.len() {
            return Err(Error::Cardinality {
                what: "feature rows",
                expected: coords.len(),
                got: features.rows(),
            });
        }
        Ok(Self { features, coords })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }
}

/// Affine map `x·W + b` applied to every row.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new(init: &mut Init<'_>, name: &str, fan_in: usize, fan_out: usize, bias: bool) -> Result<Self> {
        if fan_in == 0 || fan_out == 0 {
            return Err(Error::config(format!(
                "layer {name} has a zero width ({fan_in} -> {fan_out})"
            )));
        }
        let mut s = init.scope(name);
        let w = s.weight("w", fan_in, fan_out)?;
        let b = if bias { Some(s.zeros("b", &[fan_out])?) } else { None };
        Ok(Self { w, b, fan_in, fan_out })
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        let y = x.matmul(ctx.p(self.w))?;
        match self.b {
            Some(b) => y.add(ctx.p(b)),
            None => Ok(y),
        }
    }
}

/// Row-wise layer normalization with learned gain and offset.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub offset: ParamId,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

impl LayerNorm {
    pub fn new(init: &mut Init<'_>, name: &str, dim: usize) -> Result<Self> {
        let mut s = init.scope(name);
        Ok(Self {
            gain: s.filled("gain", &[dim], 1.0)?,
            offset: s.zeros("offset", &[dim])?,
        })
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        x.layer_norm(LAYER_NORM_EPS)?
            .mul(ctx.p(self.gain))?
            .add(ctx.p(self.offset))
    }
}

/// Stack of linear layers with an activation between consecutive layers
/// (and optionally after the last one).
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub act: Unary,
    pub final_act: bool,
}

impl Mlp {
    /// `widths` lists input, hidden and output sizes, e.g. `[3, 16, 32]`.
    pub fn new(init: &mut Init<'_>, name: &str, widths: &[usize], act: Unary, final_act: bool) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::config(format!("mlp {name} needs at least input and output widths")));
        }
        let mut s = init.scope(name);
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(&mut s, &i.to_string(), w[0], w[1], true))
            .collect::<Result<_>>()?;
        Ok(Self {
            layers,
            act,
            final_act,
        })
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(ctx, h)?;
            if i + 1 < self.layers.len() || self.final_act {
                h = h.unary(self.act)?;
            }
        }
        Ok(h)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.fan_out)
    }
}

#[cfg(test)]
mod tests;
