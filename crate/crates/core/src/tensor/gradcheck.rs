//! Central finite-difference checks for tape gradients.

use super::params::ParamStore;
use super::{Tape, Tensor, Var};
use crate::error::Result;

/// Worst mismatch found by a check. `input` indexes the inputs first and
/// then the parameters of the store in registration order.
#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Largest `|analytic − numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_error: f64,
    pub what: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// Number of scalar entries compared.
    pub entries: usize,
}

/// Compares the tape gradient of a scalar function against central
/// differences with step `h`, over every entry of every input.
///
/// Relative errors use a denominator floored at `floor`, so entries whose
/// true gradient is essentially zero are compared absolutely.
pub fn check<F>(inputs: &[Tensor], h: f64, floor: f64, f: F) -> Result<GradCheck>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let mut store = ParamStore::new();
    check_model(&mut store, inputs, h, floor, |tape, _, vars| f(tape, vars))
}

/// Like [`check`], additionally differentiating with respect to every
/// parameter of `store` (the closure should read them with [`Tape::param`]).
pub fn check_model<F>(
    store: &mut ParamStore,
    inputs: &[Tensor],
    h: f64,
    floor: f64,
    f: F,
) -> Result<GradCheck>
where
    F: for<'t> Fn(&'t Tape, &ParamStore, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = f(&tape, store, &vars)?;
    let grads = tape.backward(loss)?;

    let mut worst = GradCheck {
        max_rel_error: 0.0,
        what: String::new(),
        index: 0,
        analytic: 0.0,
        numeric: 0.0,
        entries: 0,
    };
    let mut record = |what: &str, index: usize, a: f64, numeric: f64| {
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
        worst.entries += 1;
        if rel > worst.max_rel_error || worst.what.is_empty() {
            worst.max_rel_error = rel;
            worst.what = what.to_string();
            worst.index = index;
            worst.analytic = a;
            worst.numeric = numeric;
        }
    };

    let mut work = inputs.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(*var).map(<[f64]>::to_vec);
        for i in 0..inputs[k].len() {
            let x = inputs[k].data()[i];
            let mut at = |v: f64| -> Result<f64> {
                work[k].data_mut()[i] = v;
                let tape = Tape::new();
                let vars: Vec<Var<'_>> = work.iter().map(|t| tape.constant(t.clone())).collect();
                Ok(f(&tape, store, &vars)?.item())
            };
            let numeric = (at(x + h)? - at(x - h)?) / (2.0 * h);
            work[k].data_mut()[i] = x;
            record(
                &format!("input {k}"),
                i,
                analytic.as_ref().map_or(0.0, |g| g[i]),
                numeric,
            );
        }
    }

    let ids: Vec<_> = store.iter().map(|(id, name, _)| (id, name.to_string())).collect();
    for (id, name) in ids {
        let analytic = grads.param(id).map(<[f64]>::to_vec);
        for i in 0..store.value(id).len() {
            let x = store.value(id).data()[i];
            let mut at = |v: f64| -> Result<f64> {
                store.value_mut(id).data_mut()[i] = v;
                let tape = Tape::new();
                let vars: Vec<Var<'_>> = work.iter().map(|t| tape.constant(t.clone())).collect();
                Ok(f(&tape, store, &vars)?.item())
            };
            let numeric = (at(x + h)? - at(x - h)?) / (2.0 * h);
            store.value_mut(id).data_mut()[i] = x;
            record(&name, i, analytic.as_ref().map_or(0.0, |g| g[i]), numeric);
        }
    }
    Ok(worst)
}
