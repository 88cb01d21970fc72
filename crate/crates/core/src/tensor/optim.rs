//! AdamW and the warmup + cosine learning-rate schedule.

use serde::{Deserialize, Serialize};

use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};

/// Adam with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    state: Vec<Option<Moments>>,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Moments {
    pub(crate) step: u64,
    pub(crate) m: Vec<f64>,
    pub(crate) v: Vec<f64>,
}

impl Default for AdamW {
    fn default() -> Self {
        Self::new(5e-4)
    }
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            state: Vec::new(),
        }
    }

    /// Updates every parameter that has a gradient; parameters without one
    /// (frozen or unused this step) are left untouched, decay included.
    pub fn step<'g>(
        &mut self,
        store: &mut ParamStore,
        grads: impl IntoIterator<Item = (ParamId, &'g [f64])>,
        lr: f64,
    ) {
        for (id, g) in grads {
            let idx = id.index();
            if self.state.len() <= idx {
                self.state.resize(idx + 1, None);
            }
            let w = store.value_mut(id).data_mut();
            assert_eq!(w.len(), g.len(), "gradient length for parameter {idx}");
            let st = self.state[idx].get_or_insert_with(|| Moments {
                step: 0,
                m: vec![0.0; g.len()],
                v: vec![0.0; g.len()],
            });
            st.step += 1;
            let bc1 = 1.0 - self.beta1.powi(st.step as i32);
            let bc2 = 1.0 - self.beta2.powi(st.step as i32);
            for i in 0..w.len() {
                w[i] -= lr * self.weight_decay * w[i];
                st.m[i] = self.beta1 * st.m[i] + (1.0 - self.beta1) * g[i];
                st.v[i] = self.beta2 * st.v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = st.m[i] / bc1;
                let vhat = st.v[i] / bc2;
                w[i] -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }

    pub(crate) fn moments(&self, id: ParamId) -> Option<&Moments> {
        self.state.get(id.index()).and_then(Option::as_ref)
    }

    pub(crate) fn set_moments(&mut self, id: ParamId, moments: Moments) {
        if self.state.len() <= id.index() {
            self.state.resize(id.index() + 1, None);
        }
        self.state[id.index()] = Some(moments);
    }
}

/// Linear warmup to a peak followed by cosine decay to a floor, in epochs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrSchedule {
    pub warmup_epochs: usize,
    pub peak: f64,
    pub floor: f64,
    pub total_epochs: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            warmup_epochs: 20,
            peak: 2e-4,
            floor: 1e-5,
            total_epochs: 300,
        }
    }
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.peak > 0.0 && self.floor >= 0.0 && self.floor <= self.peak) {
            return Err(Error::config(format!(
                "learning rates need 0 <= floor <= peak, peak > 0 (got floor {}, peak {})",
                self.floor, self.peak
            )));
        }
        if self.total_epochs == 0 {
            return Err(Error::config("total_epochs must be positive"));
        }
        Ok(())
    }

    /// Rate for a zero-based epoch. The last epoch (`total_epochs − 1`) and
    /// anything after it get the floor.
    pub fn at(&self, epoch: usize) -> f64 {
        let last = self.total_epochs.saturating_sub(1);
        if epoch < self.warmup_epochs && epoch < last {
            return self.peak * epoch as f64 / self.warmup_epochs as f64;
        }
        if epoch >= last {
            return self.floor;
        }
        let span = (last - self.warmup_epochs) as f64;
        let progress = (epoch - self.warmup_epochs) as f64 / span;
        self.floor + 0.5 * (self.peak - self.floor) * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}
