use super::{Ctx, LayerNorm, Linear};
use crate::error::Result;
use crate::tensor::params::{Init, ParamId};
use crate::tensor::{Tensor, Var};

/// Residual selective state-space block over a token sequence (`L × D`).
///
/// `x + out(scan(u, Δ, A, B, C, D))` with `u = in(LN(x))`,
/// `Δ = softplus(u·W_Δ + b_Δ)`, `B = u·W_B`, `C = u·W_C` and
/// `A = -exp(A_log)`, so every channel decays.
#[derive(Clone, Debug)]
pub struct SsmBlock {
    pub dim: usize,
    pub state: usize,
    pub norm: LayerNorm,
    pub input: Linear,
    pub delta: Linear,
    pub b: Linear,
    pub c: Linear,
    pub a_log: ParamId,
    pub skip: ParamId,
    pub out: Linear,
}

/// Δ starts near softplus(-3) ≈ 0.049.
const DELTA_BIAS_INIT: f64 = -3.0;

impl SsmBlock {
    pub fn new(init: &mut Init<'_>, name: &str, dim: usize, state: usize) -> Result<Self> {
        let mut s = init.scope(name);
        let norm = LayerNorm::new(&mut s, "norm", dim)?;
        let input = Linear::new(&mut s, "in", dim, dim, true)?;
        let delta = Linear::new(&mut s, "delta", dim, dim, true)?;
        if let Some(b) = delta.b {
            s.fill(b, DELTA_BIAS_INIT);
        }
        let b = Linear::new(&mut s, "b", dim, state, false)?;
        let c = Linear::new(&mut s, "c", dim, state, false)?;
        // A_{d,n} = -(n + 1): a spread of decay rates per state index.
        let a_init = (0..dim * state)
            .map(|i| ((i % state) as f64 + 1.0).ln())
            .collect();
        let a_log = s.tensor("a_log", Tensor::new(vec![dim, state], a_init)?)?;
        let skip = s.filled("skip", &[dim], 1.0)?;
        let out = Linear::new(&mut s, "out", dim, dim, true)?;
        Ok(Self {
            dim,
            state,
            norm,
            input,
            delta,
            b,
            c,
            a_log,
            skip,
            out,
        })
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        let u = self.input.forward(ctx, self.norm.forward(ctx, x)?)?;
        let delta = self.delta.forward(ctx, u)?.softplus()?;
        let a = ctx.p(self.a_log).exp()?.neg()?;
        let b = self.b.forward(ctx, u)?;
        let c = self.c.forward(ctx, u)?;
        let y = u.selective_scan(delta, a, b, c, ctx.p(self.skip))?;
        x.add(self.out.forward(ctx, y)?)
    }
}
