//! PatchGAN discriminator: fully convolutional, one raw score per overlapping patch.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{leaky_relu, Conv2d, Norm, NormKind, ParamStore};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub n_layers: usize,
    pub base_channels: usize,
    pub norm: NormKind,
    pub init_std: f64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            n_layers: 3,
            base_channels: 64,
            norm: NormKind::Instance,
            init_std: 0.02,
        }
    }
}

const KERNEL: usize = 4;
const PAD: usize = 1;
const SLOPE: f64 = 0.2;

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.base_channels == 0 {
            return Err(Error::Config("discriminator n_layers and base_channels must be ≥ 1".into()));
        }
        Ok(())
    }

    /// Strides of the conv stack: `n_layers` stride-2 convs, then two stride-1 convs.
    fn strides(&self) -> Vec<usize> {
        let mut s = vec![2; self.n_layers];
        s.extend([1, 1]);
        s
    }

    /// Score-map edge length for a square input of edge `input`, if positive.
    pub fn score_map_size(&self, input: usize) -> Option<usize> {
        let mut n = input as isize;
        for s in self.strides() {
            n = (n + 2 * PAD as isize - KERNEL as isize).div_euclid(s as isize) + 1;
            if n <= 0 {
                return None;
            }
        }
        Some(n as usize)
    }

    /// Input pixels seen by one score along each axis (70 for the default).
    pub fn receptive_field(&self) -> usize {
        let mut rf = 1;
        let mut jump = 1;
        for s in self.strides() {
            rf += (KERNEL - 1) * jump;
            jump *= s;
        }
        rf
    }

    /// Input-pixel distance between adjacent scores.
    pub fn score_stride(&self) -> usize {
        self.strides().iter().product()
    }
}

struct Stage {
    conv: Conv2d,
    norm: Norm,
    activate: bool,
}

pub struct Discriminator {
    cfg: DiscriminatorConfig,
    stages: Vec<Stage>,
}

impl Discriminator {
    /// Registers all parameters under `disc.*` in `store`.
    pub fn new(cfg: DiscriminatorConfig, store: &mut ParamStore) -> Result<Self> {
        cfg.validate()?;
        let ndf = cfg.base_channels;
        let std = cfg.init_std;
        let width = |n: usize| ndf * (1usize << n.min(3));
        let mut stages = Vec::new();
        stages.push(Stage {
            conv: Conv2d::new(store, "disc.l0.conv", 3, ndf, KERNEL, 2, PAD, std)?,
            norm: Norm::Identity,
            activate: true,
        });
        for n in 1..=cfg.n_layers {
            let stride = if n < cfg.n_layers { 2 } else { 1 };
            let (c_in, c_out) = (width(n - 1), width(n));
            stages.push(Stage {
                conv: Conv2d::new(store, &format!("disc.l{n}.conv"), c_in, c_out, KERNEL, stride, PAD, std)?,
                norm: Norm::new(store, &format!("disc.l{n}.norm"), cfg.norm, c_out)?,
                activate: true,
            });
        }
        let c_last = width(cfg.n_layers);
        stages.push(Stage {
            conv: Conv2d::new(store, "disc.out.conv", c_last, 1, KERNEL, 1, PAD, std)?,
            norm: Norm::Identity,
            activate: false,
        });
        Ok(Self { cfg, stages })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.cfg
    }

    /// `img`: B×3×H×W → B×1×N×M raw (unsquashed) scores.
    pub fn discriminate(&self, img: &Tensor) -> Result<Tensor> {
        let dims = img.dims();
        if dims.len() != 4 || dims[1] != 3 {
            return Err(Error::Shape(format!("discriminator expects B×3×H×W, got {dims:?}")));
        }
        if self.cfg.score_map_size(dims[2]).is_none() || self.cfg.score_map_size(dims[3]).is_none() {
            return Err(Error::Shape(format!(
                "input {}x{} too small for a {}-layer PatchGAN",
                dims[2], dims[3], self.cfg.n_layers
            )));
        }
        let mut h = img.clone();
        for stage in &self.stages {
            h = stage.norm.forward(&stage.conv.forward(&h)?)?;
            if stage.activate {
                h = leaky_relu(&h, SLOPE)?;
            }
        }
        Ok(h)
    }
}
