//! Every hyperparameter and ablation switch, read from strict TOML.
//!
//! Unknown keys are errors. The canonical text written into checkpoints
//! is the re-serialized config, so its hash identifies a run.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::diffusion::LambdaMode;
use crate::error::{Error, Result};
use crate::geometry::ChamferKind;
use crate::nn::{FusionKind, SerializationOrder};
use crate::tensor::checkpoint::config_hash;
use crate::tensor::optim::LrSchedule;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Keypoints sampled from the partial input (`N_k`).
    pub n_keypoints: usize,
    /// Feature width.
    pub dim: usize,
    pub heads: usize,
    /// State size of the state-space blocks.
    pub state: usize,
    /// Neighbors per anchor in the feature extractor.
    pub k_neighbors: usize,
    pub serialization: SerializationOrder,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_keypoints: 128,
            dim: 64,
            heads: 2,
            state: 8,
            k_neighbors: 16,
            serialization: SerializationOrder::Morton,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffusionConfig {
    /// Number of noising steps `T`.
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    /// Deterministic sampler steps used for training and inference.
    pub sampler_steps: usize,
    pub lambda: LambdaMode,
    /// Timesteps in the proxy loss (`K`), evenly spaced up to `T`.
    pub proxy_timesteps: usize,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            steps: 100,
            beta_start: 1e-4,
            beta_end: 0.02,
            sampler_steps: 25,
            lambda: LambdaMode::Snr,
            proxy_timesteps: 10,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictorKind {
    /// Conditional denoiser sampled with the deterministic sampler.
    #[default]
    Diffusion,
    /// The same trunk regressing the field in one shot.
    Regression,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefinerConfig {
    /// Upsampling factor of each block.
    pub factors: Vec<usize>,
    /// Product the factors must reach.
    pub total_factor: usize,
    /// Fusion strategy of each block.
    pub fusion: Vec<FusionKind>,
    /// Offset radius of the first block; block `l` (from 0) uses
    /// `radius / 2^l`.
    pub radius: f64,
}

impl Default for RefinerConfig {
    fn default() -> Self {
        Self {
            factors: vec![2, 2, 4],
            total_factor: 16,
            fusion: default_fusion(3),
            radius: 0.1,
        }
    }
}

/// Cross-attention fusion everywhere except the last block, which fuses by
/// state-space scan.
pub fn default_fusion(blocks: usize) -> Vec<FusionKind> {
    (0..blocks)
        .map(|i| if i + 1 == blocks { FusionKind::MFusion } else { FusionKind::Ca })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    pub lr_peak: f64,
    pub lr_floor: f64,
    /// Write a resumable checkpoint every this many epochs (0: only at the end).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            batch_size: 8,
            weight_decay: 5e-4,
            warmup_epochs: 20,
            lr_peak: 2e-4,
            lr_floor: 1e-5,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            warmup_epochs: self.warmup_epochs,
            peak: self.lr_peak,
            floor: self.lr_floor,
            total_epochs: self.epochs,
        }
    }

    fn validate(&self, section: &str) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config(format!("[{section}] batch_size must be positive")));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config(format!("[{section}] weight_decay must be non-negative")));
        }
        self.schedule()
            .validate()
            .map_err(|e| Error::config(format!("[{section}] {e}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Stage2Config {
    #[serde(flatten)]
    pub train: TrainConfig,
    pub predictor: PredictorKind,
    /// Let the refiner's losses reach the predictor through the sampler.
    pub joint_backprop: bool,
    pub chamfer: ChamferKind,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            predictor: PredictorKind::Diffusion,
            joint_backprop: false,
            chamfer: ChamferKind::L1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub diffusion: DiffusionConfig,
    pub refiner: RefinerConfig,
    pub stage1: TrainConfig,
    pub stage2: Stage2Config,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    /// Canonical text: every field, defaults included.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn hash(&self) -> u64 {
        config_hash(&self.to_toml())
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        if m.n_keypoints == 0 || m.dim == 0 || m.state == 0 || m.k_neighbors == 0 {
            return Err(Error::config("[model] sizes must be positive"));
        }
        if m.heads == 0 || m.dim % m.heads != 0 {
            return Err(Error::config(format!(
                "[model] dim {} is not divisible by {} heads",
                m.dim, m.heads
            )));
        }
        let d = &self.diffusion;
        if d.sampler_steps == 0 || d.sampler_steps > d.steps {
            return Err(Error::config(format!(
                "[diffusion] sampler_steps must be within 1..={}",
                d.steps
            )));
        }
        if d.proxy_timesteps == 0 || d.proxy_timesteps > d.steps {
            return Err(Error::config(format!(
                "[diffusion] proxy_timesteps must be within 1..={}",
                d.steps
            )));
        }
        let r = &self.refiner;
        if r.factors.is_empty() || r.factors.contains(&0) {
            return Err(Error::config("[refiner] factors must be a non-empty list of positive integers"));
        }
        let product: usize = r.factors.iter().product();
        if product != r.total_factor {
            return Err(Error::config(format!(
                "[refiner] factors {:?} multiply to {product}, not total_factor {}",
                r.factors, r.total_factor
            )));
        }
        if r.fusion.len() != r.factors.len() {
            return Err(Error::config(format!(
                "[refiner] {} fusion kinds for {} blocks",
                r.fusion.len(),
                r.factors.len()
            )));
        }
        if !(r.radius > 0.0 && r.radius.is_finite()) {
            return Err(Error::config("[refiner] radius must be positive"));
        }
        self.stage1.validate("stage1")?;
        self.stage2.train.validate("stage2")?;
        // The diffusion schedule checks its own ranges.
        crate::diffusion::DiffusionSchedule::linear(d.steps, d.beta_start, d.beta_end)?;
        Ok(())
    }

    /// Final output size: `2·N_k` coarse points times the total factor.
    pub fn output_points(&self) -> usize {
        2 * self.model.n_keypoints * self.refiner.factors.iter().product::<usize>()
    }
}

/// Named ablation variants of the prediction module (A), the upsampling
/// schedule (B) and the per-block fusion (C).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Ablation {
    A1,
    A2,
    B1,
    B2,
    B3,
    B4,
    C1,
    C2,
    C3,
    C4,
    C5,
}

impl Ablation {
    pub const ALL: [Ablation; 11] = [
        Ablation::A1,
        Ablation::A2,
        Ablation::B1,
        Ablation::B2,
        Ablation::B3,
        Ablation::B4,
        Ablation::C1,
        Ablation::C2,
        Ablation::C3,
        Ablation::C4,
        Ablation::C5,
    ];

    pub fn describe(self) -> &'static str {
        match self {
            Ablation::A1 => "diffusion predictor",
            Ablation::A2 => "direct regression predictor",
            Ablation::B1 => "schedule [2,2,4]",
            Ablation::B2 => "schedule [16]",
            Ablation::B3 => "schedule [2,8]",
            Ablation::B4 => "schedule [4,4]",
            Ablation::C1 => "fusion [ca,ca,mfusion]",
            Ablation::C2 => "fusion [mlp,mlp,mfusion]",
            Ablation::C3 => "fusion [ca,ca,mlp]",
            Ablation::C4 => "fusion [ca,ca,ca]",
            Ablation::C5 => "fusion [mfusion,mfusion,mfusion]",
        }
    }

    /// Rewrites the relevant part of `cfg`. Schedule variants reset the
    /// fusion list to the default for their block count; fusion variants
    /// restore the three-block schedule.
    pub fn apply(self, cfg: &mut PipelineConfig) {
        use FusionKind::{Ca, MFusion as Mf, Mlp};
        let mut set_schedule = |factors: &[usize]| {
            cfg.refiner.factors = factors.to_vec();
            cfg.refiner.total_factor = factors.iter().product();
            cfg.refiner.fusion = default_fusion(factors.len());
        };
        match self {
            Ablation::A1 => cfg.stage2.predictor = PredictorKind::Diffusion,
            Ablation::A2 => cfg.stage2.predictor = PredictorKind::Regression,
            Ablation::B1 => set_schedule(&[2, 2, 4]),
            Ablation::B2 => set_schedule(&[16]),
            Ablation::B3 => set_schedule(&[2, 8]),
            Ablation::B4 => set_schedule(&[4, 4]),
            c => {
                set_schedule(&[2, 2, 4]);
                cfg.refiner.fusion = match c {
                    Ablation::C1 => vec![Ca, Ca, Mf],
                    Ablation::C2 => vec![Mlp, Mlp, Mf],
                    Ablation::C3 => vec![Ca, Ca, Mlp],
                    Ablation::C4 => vec![Ca, Ca, Ca],
                    _ => vec![Mf, Mf, Mf],
                };
            }
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::config(format!("unknown ablation {s:?}; expected A1-A2, B1-B4 or C1-C5")))
    }
}
