use super::{serialization_order, Ctx, Linear, Mlp, SerializationOrder, SsmBlock};
use crate::error::{Error, Result};
use crate::tensor::params::Init;
use crate::tensor::{Unary, Var};

/// Feature transform followed by point splitting.
///
/// Each parent point emits `factor` children displaced by
/// `(radius / √3) · tanh(h·W + b)`, so no child moves more than `radius`
/// (Euclidean) from its parent.
#[derive(Clone, Debug)]
pub struct MambaForward {
    pub mlp: Mlp,
    pub ssm: SsmBlock,
    pub offset: Linear,
    pub factor: usize,
    pub radius: f64,
    pub order: SerializationOrder,
}

pub struct UpsampleOutput<'t> {
    /// `(parents · factor) × 3`; children of parent `i` occupy rows
    /// `i·factor .. (i+1)·factor`.
    pub coords: Var<'t>,
    /// One row per parent.
    pub features: Var<'t>,
}

impl MambaForward {
    pub fn new(
        init: &mut Init<'_>,
        name: &str,
        dim: usize,
        state: usize,
        factor: usize,
        radius: f64,
        order: SerializationOrder,
    ) -> Result<Self> {
        if factor == 0 {
            return Err(Error::config("upsampling factor must be at least 1"));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::config(format!("offset radius must be positive, got {radius}")));
        }
        let mut s = init.scope(name);
        Ok(Self {
            mlp: Mlp::new(&mut s, "mlp", &[dim, dim, dim], Unary::Gelu, false)?,
            ssm: SsmBlock::new(&mut s, "ssm", dim, state)?,
            offset: Linear::new(&mut s, "offset", dim, 3 * factor, true)?,
            factor,
            radius,
            order,
        })
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t, '_>, parents: Var<'t>, fused: Var<'t>) -> Result<UpsampleOutput<'t>> {
        let n = parents.rows();
        if fused.rows() != n {
            return Err(Error::Cardinality {
                what: "fused feature rows",
                expected: n,
                got: fused.rows(),
            });
        }
        let h = self.mlp.forward(ctx, fused)?;
        let seq = serialization_order(&parents.value().to_points(), self.order)?;
        let mut back = vec![0; n];
        for (slot, &i) in seq.iter().enumerate() {
            back[i] = slot;
        }
        let h = self.ssm.forward(ctx, h.gather_rows(seq)?)?.gather_rows(back)?;
        let offsets = self
            .offset
            .forward(ctx, h)?
            .tanh()?
            .scale(self.radius / 3f64.sqrt())?
            .reshape(vec![n * self.factor, 3])?;
        let repeat: Vec<usize> = (0..n * self.factor).map(|r| r / self.factor).collect();
        let coords = parents.gather_rows(repeat)?.add(offsets)?;
        Ok(UpsampleOutput { coords, features: h })
    }
}
