//! Flat training configuration, presets and TOML loading.

use std::path::Path;
use std::str::FromStr;

use candle_core::DType;
use serde::{Deserialize, Serialize};

use crate::attention::{AttentionConfig, AttentionKind};
use crate::contrastive::PatchNceConfig;
use crate::discriminator::DiscriminatorConfig;
use crate::error::{Error, Result};
use crate::generator::{GeneratorConfig, DEFAULT_TAPS};
use crate::nn::NormKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// λ_X = 1 with the identity term λ_Y = 1.
    Lambda1_1,
    /// λ_X = 10 without the identity term.
    Lambda10_0,
}

impl Preset {
    pub fn lambdas(self) -> (f64, f64) {
        match self {
            Preset::Lambda1_1 => (1.0, 1.0),
            Preset::Lambda10_0 => (10.0, 0.0),
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lambda_1_1" => Ok(Preset::Lambda1_1),
            "lambda_10_0" => Ok(Preset::Lambda10_0),
            other => Err(Error::Config(format!(
                "unknown preset `{other}` (expected lambda_1_1 or lambda_10_0)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lambda_x: f64,
    pub lambda_y: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Linear decay of the learning rate to zero over the second half of training.
    pub lr_decay: bool,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop after this many steps; 0 means no cap.
    pub max_steps: u64,
    pub seed: u64,
    pub attention: AttentionKind,
    pub tau: f64,
    pub k: usize,
    pub nce_dim: usize,
    pub image_size: usize,
    pub random_crop: bool,
    pub ngf: usize,
    pub ndf: usize,
    pub n_downsampling: usize,
    pub n_residual_blocks: usize,
    pub n_layers_d: usize,
    pub init_std: f64,
    /// Checkpoint interval in steps; 0 writes only the initial and final checkpoints.
    pub checkpoint_every: u64,
    /// `f32` or `f64`.
    pub precision: String,
    pub train_x: String,
    pub train_y: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_x: 1.0,
            lambda_y: 1.0,
            lr: 0.002,
            beta1: 0.5,
            beta2: 0.999,
            lr_decay: false,
            batch_size: 1,
            epochs: 400,
            max_steps: 0,
            seed: 0,
            attention: AttentionKind::SelfAttention,
            tau: crate::contrastive::DEFAULT_TAU,
            k: crate::contrastive::DEFAULT_K,
            nce_dim: crate::contrastive::DEFAULT_NCE_DIM,
            image_size: 256,
            random_crop: false,
            ngf: 64,
            ndf: 64,
            n_downsampling: 2,
            n_residual_blocks: 9,
            n_layers_d: 3,
            init_std: 0.02,
            checkpoint_every: 5000,
            precision: "f32".into(),
            train_x: "trainX".into(),
            train_y: "trainY".into(),
        }
    }
}

pub const CONFIG_KEYS: [&str; 27] = [
    "lambda_x",
    "lambda_y",
    "lr",
    "beta1",
    "beta2",
    "lr_decay",
    "batch_size",
    "epochs",
    "max_steps",
    "seed",
    "attention",
    "tau",
    "k",
    "nce_dim",
    "image_size",
    "random_crop",
    "ngf",
    "ndf",
    "n_downsampling",
    "n_residual_blocks",
    "n_layers_d",
    "init_std",
    "checkpoint_every",
    "precision",
    "train_x",
    "train_y",
    "preset",
];

impl TrainConfig {
    /// Reduced network and 64×64 images for the synthetic task.
    pub fn toy() -> Self {
        Self {
            image_size: 64,
            epochs: 4,
            k: 64,
            nce_dim: 64,
            ngf: 8,
            ndf: 16,
            n_residual_blocks: 6,
            checkpoint_every: 100,
            ..Self::default()
        }
    }

    pub fn apply_preset(&mut self, preset: Preset) {
        (self.lambda_x, self.lambda_y) = preset.lambdas();
    }

    /// Parses a flat TOML table onto `self`; unknown keys are rejected.
    pub fn merge_toml(&mut self, text: &str) -> Result<()> {
        let table: toml::Table = text.parse().map_err(|e| Error::Config(format!("invalid TOML: {e}")))?;
        for key in table.keys() {
            if !CONFIG_KEYS.contains(&key.as_str()) {
                return Err(Error::Config(format!(
                    "unknown config key `{key}`; valid keys: {}",
                    CONFIG_KEYS.join(", ")
                )));
            }
        }
        let mut merged = toml::Table::try_from(&*self).map_err(|e| Error::Config(e.to_string()))?;
        let mut preset = None;
        for (key, value) in table {
            if key == "preset" {
                let name = value
                    .as_str()
                    .ok_or_else(|| Error::Config("`preset` must be a string".into()))?;
                preset = Some(name.parse::<Preset>()?);
            } else {
                merged.insert(key, value);
            }
        }
        let mut cfg: TrainConfig = merged
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("invalid config value: {}", e.message())))?;
        if let Some(p) = preset {
            cfg.apply_preset(p);
        }
        *self = cfg;
        Ok(())
    }

    pub fn merge_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.merge_toml(&text)
    }

    pub fn dtype(&self) -> Result<DType> {
        match self.precision.as_str() {
            "f32" => Ok(DType::F32),
            "f64" => Ok(DType::F64),
            other => Err(Error::Config(format!("precision must be f32 or f64, got `{other}`"))),
        }
    }

    pub fn generator(&self) -> GeneratorConfig {
        GeneratorConfig {
            n_downsampling: self.n_downsampling,
            n_residual_blocks: self.n_residual_blocks,
            base_channels: self.ngf,
            norm: NormKind::Instance,
            tap_layers: DEFAULT_TAPS.to_vec(),
            init_std: self.init_std,
        }
    }

    pub fn discriminator(&self) -> DiscriminatorConfig {
        DiscriminatorConfig {
            n_layers: self.n_layers_d,
            base_channels: self.ndf,
            norm: NormKind::Instance,
            init_std: self.init_std,
        }
    }

    pub fn attention_config(&self) -> AttentionConfig {
        AttentionConfig::with_kind(self.attention)
    }

    pub fn nce(&self) -> PatchNceConfig {
        PatchNceConfig {
            k: self.k,
            tau: self.tau,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.lambda_x, self.lambda_y, self.lr, self.beta1, self.beta2];
        if finite.iter().any(|v| !v.is_finite()) || self.lambda_x < 0.0 || self.lambda_y < 0.0 {
            return Err(Error::Config("lambdas must be finite and ≥ 0".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.nce_dim == 0 {
            return Err(Error::Config("batch_size, epochs and nce_dim must be ≥ 1".into()));
        }
        self.dtype()?;
        self.nce().validate()?;
        self.generator().validate()?;
        self.discriminator().validate()?;
        self.attention_config().validate()?;
        let m = self.generator().size_multiple();
        if self.image_size % m != 0 || self.image_size < 2 * m {
            return Err(Error::Config(format!(
                "image_size must be a multiple of {m} and ≥ {}, got {}",
                2 * m,
                self.image_size
            )));
        }
        if self.discriminator().score_map_size(self.image_size).is_none() {
            return Err(Error::Config(format!(
                "image_size {} is too small for the discriminator",
                self.image_size
            )));
        }
        Ok(())
    }
}
