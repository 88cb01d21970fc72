//! Denoising diffusion over flattened transformation fields: the linear
//! variance schedule, closed-form forward sampling, the ancestral reverse
//! step, deterministic accelerated sampling and the timestep-weighted proxy
//! loss that supervises recovered clean fields.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tensor, Var};

/// Per-timestep constants for `t = 1..=T`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    sigma: Vec<f64>,
}

impl DiffusionSchedule {
    /// Linear `β` from `beta_start` to `beta_end` over `steps` timesteps.
    /// `σ_t² = β_t (1 − ᾱ_{t−1}) / (1 − ᾱ_t)`, which is zero at `t = 1`.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::config("diffusion needs at least one timestep"));
        }
        if !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::config(format!(
                "beta range must satisfy 0 < start <= end < 1, got [{beta_start}, {beta_end}]"
            )));
        }
        let beta: Vec<f64> = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(steps);
        let mut prod = 1.0;
        for a in &alpha {
            prod *= a;
            alpha_bar.push(prod);
        }
        let sigma = (0..steps)
            .map(|i| {
                let prev = if i == 0 { 1.0 } else { alpha_bar[i - 1] };
                (beta[i] * (1.0 - prev) / (1.0 - alpha_bar[i])).sqrt()
            })
            .collect();
        Ok(Self {
            beta,
            alpha,
            alpha_bar,
            sigma,
        })
    }

    /// Number of timesteps `T`.
    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    fn idx(&self, t: usize) -> usize {
        assert!(
            (1..=self.steps()).contains(&t),
            "timestep {t} outside 1..={}",
            self.steps()
        );
        t - 1
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[self.idx(t)]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[self.idx(t)]
    }

    /// `ᾱ_t`, with `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[self.idx(t)]
        }
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma[self.idx(t)]
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::contract(format!(
                "timestep {t} outside 1..={}",
                self.steps()
            )));
        }
        Ok(())
    }

    /// `t,beta,alpha,alpha_bar,sigma` rows with round-trip precision.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,beta,alpha,alpha_bar,sigma\n");
        for i in 0..self.steps() {
            let _ = writeln!(
                s,
                "{},{:e},{:e},{:e},{:e}",
                i + 1,
                self.beta[i],
                self.alpha[i],
                self.alpha_bar[i],
                self.sigma[i]
            );
        }
        s
    }
}

fn same_len(op: &'static str, a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape {
            op,
            left: vec![a.len()],
            right: vec![b.len()],
        });
    }
    Ok(())
}

/// `z_t = √ᾱ_t · z0 + √(1 − ᾱ_t) · ε`.
pub fn forward_sample(z0: &[f64], t: usize, eps: &[f64], sched: &DiffusionSchedule) -> Result<Vec<f64>> {
    same_len("forward_sample", z0, eps)?;
    sched.check_t(t)?;
    let ab = sched.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(z0.iter().zip(eps).map(|(z, e)| a * z + b * e).collect())
}

/// Inverse of [`forward_sample`] given a noise estimate:
/// `(z_t − √(1 − ᾱ_t) · ε̂) / √ᾱ_t`.
pub fn recover_clean(zt: &[f64], t: usize, eps_pred: &[f64], sched: &DiffusionSchedule) -> Result<Vec<f64>> {
    same_len("recover_clean", zt, eps_pred)?;
    sched.check_t(t)?;
    let ab = sched.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(zt.iter().zip(eps_pred).map(|(z, e)| (z - b * e) / a).collect())
}

/// Ancestral step `t → t−1`:
/// `(z_t − (1 − α_t)/√(1 − ᾱ_t) · ε̂) / √α_t + σ_t · noise`, with the noise
/// term dropped at `t = 1`.
pub fn reverse_step_ddpm(
    zt: &[f64],
    t: usize,
    eps_pred: &[f64],
    noise: &[f64],
    sched: &DiffusionSchedule,
) -> Result<Vec<f64>> {
    same_len("reverse_step_ddpm", zt, eps_pred)?;
    sched.check_t(t)?;
    let a = sched.alpha(t);
    let coef = (1.0 - a) / (1.0 - sched.alpha_bar(t)).sqrt();
    let mut out: Vec<f64> = zt
        .iter()
        .zip(eps_pred)
        .map(|(z, e)| (z - coef * e) / a.sqrt())
        .collect();
    if t > 1 {
        same_len("reverse_step_ddpm", zt, noise)?;
        let s = sched.sigma(t);
        for (o, n) in out.iter_mut().zip(noise) {
            *o += s * n;
        }
    }
    Ok(out)
}

/// Evenly spaced descending timesteps `T − i·T/steps` for `i = 0..steps`
/// (integer division), so 25 steps over 100 visit 100, 96, …, 4.
pub fn ddim_timesteps(total: usize, steps: usize) -> Result<Vec<usize>> {
    if steps == 0 || steps > total {
        return Err(Error::config(format!(
            "sampler steps must lie in 1..={total}, got {steps}"
        )));
    }
    Ok((0..steps).map(|i| total - (i * total) / steps).collect())
}

/// Deterministic (η = 0) update from `t` to `t_prev` (0 meaning the clean
/// end of the chain, `ᾱ_0 = 1`).
pub fn ddim_step(
    zt: &[f64],
    t: usize,
    t_prev: usize,
    eps_pred: &[f64],
    sched: &DiffusionSchedule,
) -> Result<Vec<f64>> {
    let (c_z, c_e) = ddim_coefficients(sched, t, t_prev);
    same_len("ddim_step", zt, eps_pred)?;
    Ok(zt.iter().zip(eps_pred).map(|(z, e)| c_z * z + c_e * e).collect())
}

/// `z_prev = c_z · z_t + c_e · ε̂` for the deterministic update.
fn ddim_coefficients(sched: &DiffusionSchedule, t: usize, t_prev: usize) -> (f64, f64) {
    let (ab, ab_prev) = (sched.alpha_bar(t), sched.alpha_bar(t_prev));
    let c_z = (ab_prev / ab).sqrt();
    let c_e = (1.0 - ab_prev).sqrt() - c_z * (1.0 - ab).sqrt();
    (c_z, c_e)
}

/// Runs the deterministic sampler from `noise` over [`ddim_timesteps`],
/// calling `predictor(z_t, t)` for each noise estimate.
pub fn sample_ddim(
    noise: &[f64],
    steps: usize,
    sched: &DiffusionSchedule,
    mut predictor: impl FnMut(&[f64], usize) -> Result<Vec<f64>>,
) -> Result<Vec<f64>> {
    let ts = ddim_timesteps(sched.steps(), steps)?;
    let mut z = noise.to_vec();
    for (i, &t) in ts.iter().enumerate() {
        let eps = predictor(&z, t)?;
        if eps.len() != z.len() {
            return Err(Error::contract(format!(
                "noise predictor returned {} values for a field of {}",
                eps.len(),
                z.len()
            )));
        }
        let t_prev = ts.get(i + 1).copied().unwrap_or(0);
        z = ddim_step(&z, t, t_prev, &eps, sched)?;
    }
    Ok(z)
}

/// [`sample_ddim`] on a tape, so the sampled field can stay differentiable
/// with respect to the predictor's parameters. `predictor` receives the
/// current field and a one-element timestep list.
pub fn sample_ddim_var<'t>(
    noise: Var<'t>,
    steps: usize,
    sched: &DiffusionSchedule,
    mut predictor: impl FnMut(Var<'t>, &[usize]) -> Result<Var<'t>>,
) -> Result<Var<'t>> {
    let ts = ddim_timesteps(sched.steps(), steps)?;
    let mut z = noise;
    for (i, &t) in ts.iter().enumerate() {
        let eps = predictor(z, &[t])?;
        if eps.shape() != z.shape() {
            return Err(Error::contract(format!(
                "noise predictor returned shape {:?} for a field of shape {:?}",
                eps.shape(),
                z.shape()
            )));
        }
        let t_prev = ts.get(i + 1).copied().unwrap_or(0);
        let (c_z, c_e) = ddim_coefficients(sched, t, t_prev);
        z = z.scale(c_z)?.add(eps.scale(c_e)?)?;
    }
    Ok(z)
}

/// How proxy-loss timesteps are weighted.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LambdaMode {
    /// `λ(t) = min(ᾱ_t / (1 − ᾱ_t), 5)`.
    #[default]
    Snr,
    /// `λ(t) = 1`.
    Uniform,
}

pub const SNR_CLAMP: f64 = 5.0;

/// Fixed timesteps and weights of the proxy loss.
#[derive(Clone, Debug, PartialEq)]
pub struct TimestepWeights {
    pub timesteps: Vec<usize>,
    pub lambda: Vec<f64>,
}

impl TimestepWeights {
    /// `k` evenly spaced timesteps `T/k, 2T/k, …, T`.
    pub fn evenly_spaced(sched: &DiffusionSchedule, k: usize, mode: LambdaMode) -> Result<Self> {
        let total = sched.steps();
        if k == 0 || k > total {
            return Err(Error::config(format!(
                "proxy-loss timestep count must lie in 1..={total}, got {k}"
            )));
        }
        let timesteps: Vec<usize> = (1..=k).map(|i| (i * total) / k).collect();
        Self::new(sched, timesteps, mode)
    }

    pub fn new(sched: &DiffusionSchedule, timesteps: Vec<usize>, mode: LambdaMode) -> Result<Self> {
        if timesteps.is_empty() {
            return Err(Error::config("proxy loss needs at least one timestep"));
        }
        for &t in &timesteps {
            if t == 0 || t > sched.steps() {
                return Err(Error::config(format!(
                    "proxy-loss timestep {t} outside 1..={}",
                    sched.steps()
                )));
            }
        }
        let lambda = timesteps
            .iter()
            .map(|&t| match mode {
                LambdaMode::Snr => {
                    let ab = sched.alpha_bar(t);
                    (ab / (1.0 - ab)).min(SNR_CLAMP)
                }
                LambdaMode::Uniform => 1.0,
            })
            .collect();
        Ok(Self { timesteps, lambda })
    }
}

/// Draws one standard-normal value per entry.
pub fn gaussian<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Proxy loss with freshly drawn noise: one `N × 12` noise draw per
/// timestep, in timestep order.
pub fn proxy_loss<'t, R: Rng + ?Sized>(
    target: Var<'t>,
    predictor: impl FnMut(Var<'t>, &[usize]) -> Result<Var<'t>>,
    weights: &TimestepWeights,
    sched: &DiffusionSchedule,
    rng: &mut R,
) -> Result<Var<'t>> {
    let n = target.value().len();
    let noise: Vec<Vec<f64>> = weights.timesteps.iter().map(|_| gaussian(rng, n)).collect();
    proxy_loss_with_noise(target, predictor, weights, sched, &noise)
}

/// `Σ_k λ(t_k) · mean((𝒯 − 𝒯̂_k)²)` where `𝒯̂_k` is the clean field
/// recovered from the predictor's noise estimate at `t_k`.
///
/// All timesteps go through the predictor in one call: the noisy fields are
/// stacked row-wise (`K·N × 12`) and the timestep list gives the `t` of
/// each consecutive block of `N` rows.
pub fn proxy_loss_with_noise<'t>(
    target: Var<'t>,
    mut predictor: impl FnMut(Var<'t>, &[usize]) -> Result<Var<'t>>,
    weights: &TimestepWeights,
    sched: &DiffusionSchedule,
    noise: &[Vec<f64>],
) -> Result<Var<'t>> {
    let tv = target.value();
    let (rows, cols) = (tv.rows(), tv.cols());
    let n = tv.len();
    let k = weights.timesteps.len();
    if noise.len() != k || noise.iter().any(|e| e.len() != n) {
        return Err(Error::contract("one noise draw per timestep, shaped like the target"));
    }
    let mut stacked = Vec::with_capacity(k * n);
    let mut eps_coef = Vec::with_capacity(k * n);
    let mut z_coef = Vec::with_capacity(k * n);
    let mut w = Vec::with_capacity(k * n);
    for (i, &t) in weights.timesteps.iter().enumerate() {
        stacked.extend(forward_sample(tv.data(), t, &noise[i], sched)?);
        let ab = sched.alpha_bar(t);
        eps_coef.extend(std::iter::repeat_n(-(1.0 - ab).sqrt() / ab.sqrt(), n));
        z_coef.extend(std::iter::repeat_n(1.0 / ab.sqrt(), n));
        w.extend(std::iter::repeat_n(weights.lambda[i] / n as f64, n));
    }
    let tape = target.tape();
    let shape = vec![k * rows, cols];
    let z = tape.constant(Tensor::new(shape.clone(), stacked)?);
    let eps = predictor(z, &weights.timesteps)?;
    if eps.shape() != shape {
        return Err(Error::contract(format!(
            "noise predictor returned shape {:?}, expected {shape:?}",
            eps.shape()
        )));
    }
    let scaled_z = z.mul(tape.constant(Tensor::from_parts(shape.clone(), z_coef)))?;
    let recovered = eps
        .mul(tape.constant(Tensor::from_parts(shape.clone(), eps_coef)))?
        .add(scaled_z)?;
    let tiled: Vec<Var<'t>> = vec![target; k];
    let diff = recovered.sub(Var::concat_rows(&tiled)?)?;
    diff.square()?
        .mul(tape.constant(Tensor::from_parts(shape, w)))?
        .sum()
}
