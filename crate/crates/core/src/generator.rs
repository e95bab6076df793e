//! ResNet encoder/decoder generator with feature taps for the contrastive loss.
//!
//! Layout (defaults in brackets):
//!
//! ```text
//! reflect-pad 3, conv 7x7 3→ngf, norm, ReLU
//! n_downsampling × [conv 3x3 s1 (tap downN), norm, ReLU, blur-pool s2]       [2]
//! n_residual_blocks × residual block (tap resN on the block output)          [9]
//! n_downsampling × [transposed conv 3x3 s2, norm, ReLU]
//! reflect-pad 3, conv 7x7 ngf→3, tanh
//! ```
//!
//! The encoder is everything up to the deepest requested tap (residual block 5
//! for the default taps). Taps on the down blocks read the stride-1 convolution
//! output before its blur-pool, which gives the receptive fields 1, 9, 15, 35
//! and 99 for `input_rgb, down1, down2, res1, res5`.

use std::fmt;
use std::str::FromStr;

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{blur_downsample, reflect_pad2d, Conv2d, ConvTranspose2d, Norm, NormKind, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TapLayer {
    InputRgb,
    /// 1-based down block index.
    Down(usize),
    /// 1-based residual block index.
    Res(usize),
}

pub const DEFAULT_TAPS: [TapLayer; 5] = [
    TapLayer::InputRgb,
    TapLayer::Down(1),
    TapLayer::Down(2),
    TapLayer::Res(1),
    TapLayer::Res(5),
];

impl fmt::Display for TapLayer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TapLayer::InputRgb => write!(f, "input_rgb"),
            TapLayer::Down(i) => write!(f, "down{i}"),
            TapLayer::Res(i) => write!(f, "res{i}"),
        }
    }
}

impl FromStr for TapLayer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "input_rgb" {
            return Ok(TapLayer::InputRgb);
        }
        let parse_idx = |rest: &str| rest.parse::<usize>().ok().filter(|i| *i >= 1);
        if let Some(i) = s.strip_prefix("down").and_then(parse_idx) {
            return Ok(TapLayer::Down(i));
        }
        if let Some(i) = s.strip_prefix("res").and_then(parse_idx) {
            return Ok(TapLayer::Res(i));
        }
        Err(Error::UnknownTap(s.to_string()))
    }
}

impl Serialize for TapLayer {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for TapLayer {
    fn deserialize<De: serde::Deserializer<'de>>(d: De) -> std::result::Result<Self, De::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub n_downsampling: usize,
    pub n_residual_blocks: usize,
    pub base_channels: usize,
    pub norm: NormKind,
    pub tap_layers: Vec<TapLayer>,
    pub init_std: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_downsampling: 2,
            n_residual_blocks: 9,
            base_channels: 64,
            norm: NormKind::Instance,
            tap_layers: DEFAULT_TAPS.to_vec(),
            init_std: 0.02,
        }
    }
}

/// Kernel/stride of one spatial layer on the path from the input to a tap.
#[derive(Clone, Copy)]
struct Geom {
    kernel: usize,
    stride: usize,
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 {
            return Err(Error::Config("generator base_channels must be ≥ 1".into()));
        }
        if self.n_downsampling == 0 {
            return Err(Error::Config("generator n_downsampling must be ≥ 1".into()));
        }
        if self.tap_layers.is_empty() {
            return Err(Error::Config("generator needs at least one tap layer".into()));
        }
        for tap in &self.tap_layers {
            self.check_tap(*tap)?;
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return Err(Error::Config(format!("init_std must be positive, got {}", self.init_std)));
        }
        Ok(())
    }

    pub fn check_tap(&self, tap: TapLayer) -> Result<()> {
        match tap {
            TapLayer::InputRgb => Ok(()),
            TapLayer::Down(i) if (1..=self.n_downsampling).contains(&i) => Ok(()),
            TapLayer::Res(i) if (1..=self.n_residual_blocks).contains(&i) => Ok(()),
            other => Err(Error::UnknownTap(other.to_string())),
        }
    }

    /// Spatial divisor the input size must satisfy.
    pub fn size_multiple(&self) -> usize {
        1 << self.n_downsampling
    }

    fn path_to(&self, tap: TapLayer) -> Result<Vec<Geom>> {
        self.check_tap(tap)?;
        let mut path = Vec::new();
        if tap == TapLayer::InputRgb {
            return Ok(path);
        }
        path.push(Geom { kernel: 7, stride: 1 });
        for i in 1..=self.n_downsampling {
            path.push(Geom { kernel: 3, stride: 1 });
            if tap == TapLayer::Down(i) {
                return Ok(path);
            }
            path.push(Geom { kernel: 3, stride: 2 });
        }
        for i in 1..=self.n_residual_blocks {
            path.push(Geom { kernel: 3, stride: 1 });
            path.push(Geom { kernel: 3, stride: 1 });
            if tap == TapLayer::Res(i) {
                return Ok(path);
            }
        }
        Err(Error::UnknownTap(tap.to_string()))
    }

    /// Analytic receptive field (input pixels along one axis) of one tap location.
    pub fn receptive_field(&self, tap: TapLayer) -> Result<usize> {
        let mut rf = 1;
        let mut jump = 1;
        for g in self.path_to(tap)? {
            rf += (g.kernel - 1) * jump;
            jump *= g.stride;
        }
        Ok(rf)
    }

    /// Input-pixel distance between adjacent locations of a tap.
    pub fn tap_stride(&self, tap: TapLayer) -> Result<usize> {
        Ok(self.path_to(tap)?.iter().map(|g| g.stride).product())
    }

    pub fn tap_channels(&self, tap: TapLayer) -> Result<usize> {
        self.check_tap(tap)?;
        Ok(match tap {
            TapLayer::InputRgb => 3,
            TapLayer::Down(i) => self.base_channels << i,
            TapLayer::Res(_) => self.base_channels << self.n_downsampling,
        })
    }
}

/// Receptive field of a tap in the default generator geometry.
pub fn receptive_field(tap: TapLayer) -> Result<usize> {
    GeneratorConfig::default().receptive_field(tap)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TapMeta {
    pub layer: TapLayer,
    pub receptive_field: usize,
    pub stride: usize,
    pub channels: usize,
}

/// Per-tap feature maps, each `B × C_l × H_l × W_l`, in the requested order.
#[derive(Clone, Debug)]
pub struct FeatureStack {
    pub maps: Vec<Tensor>,
    pub meta: Vec<TapMeta>,
}

impl FeatureStack {
    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }
}

struct DownBlock {
    conv: Conv2d,
    norm: Norm,
}

struct ResBlock {
    conv1: Conv2d,
    norm1: Norm,
    conv2: Conv2d,
    norm2: Norm,
}

impl ResBlock {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.conv1.forward(&reflect_pad2d(x, 1)?)?;
        let h = self.norm1.forward(&h)?.relu()?;
        let h = self.conv2.forward(&reflect_pad2d(&h, 1)?)?;
        let h = self.norm2.forward(&h)?;
        Ok((x + h)?)
    }
}

struct UpBlock {
    conv: ConvTranspose2d,
    norm: Norm,
}

pub struct Generator {
    cfg: GeneratorConfig,
    stem_conv: Conv2d,
    stem_norm: Norm,
    downs: Vec<DownBlock>,
    blocks: Vec<ResBlock>,
    ups: Vec<UpBlock>,
    head_conv: Conv2d,
}

impl Generator {
    /// Registers all parameters under `gen.*` in `store`.
    pub fn new(cfg: GeneratorConfig, store: &mut ParamStore) -> Result<Self> {
        cfg.validate()?;
        let ngf = cfg.base_channels;
        let std = cfg.init_std;
        let stem_conv = Conv2d::new(store, "gen.stem.conv", 3, ngf, 7, 1, 0, std)?;
        let stem_norm = Norm::new(store, "gen.stem.norm", cfg.norm, ngf)?;

        let mut downs = Vec::new();
        for i in 1..=cfg.n_downsampling {
            let (c_in, c_out) = (ngf << (i - 1), ngf << i);
            downs.push(DownBlock {
                conv: Conv2d::new(store, &format!("gen.down{i}.conv"), c_in, c_out, 3, 1, 1, std)?,
                norm: Norm::new(store, &format!("gen.down{i}.norm"), cfg.norm, c_out)?,
            });
        }

        let trunk = ngf << cfg.n_downsampling;
        let mut blocks = Vec::new();
        for i in 1..=cfg.n_residual_blocks {
            let p = format!("gen.res{i}");
            blocks.push(ResBlock {
                conv1: Conv2d::new(store, &format!("{p}.conv1"), trunk, trunk, 3, 1, 0, std)?,
                norm1: Norm::new(store, &format!("{p}.norm1"), cfg.norm, trunk)?,
                conv2: Conv2d::new(store, &format!("{p}.conv2"), trunk, trunk, 3, 1, 0, std)?,
                norm2: Norm::new(store, &format!("{p}.norm2"), cfg.norm, trunk)?,
            });
        }

        let mut ups = Vec::new();
        for i in 1..=cfg.n_downsampling {
            let c_in = ngf << (cfg.n_downsampling - i + 1);
            let c_out = c_in / 2;
            ups.push(UpBlock {
                conv: ConvTranspose2d::new(store, &format!("gen.up{i}.conv"), c_in, c_out, std)?,
                norm: Norm::new(store, &format!("gen.up{i}.norm"), cfg.norm, c_out)?,
            });
        }
        let head_conv = Conv2d::new(store, "gen.head.conv", ngf, 3, 7, 1, 0, std)?;

        Ok(Self {
            cfg,
            stem_conv,
            stem_norm,
            downs,
            blocks,
            ups,
            head_conv,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    pub fn dtype(&self) -> DType {
        self.stem_conv.dtype()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let dims = x.dims();
        let m = self.cfg.size_multiple();
        if dims.len() != 4 || dims[1] != 3 {
            return Err(Error::Shape(format!("generator expects B×3×H×W, got {dims:?}")));
        }
        if dims[2] % m != 0 || dims[3] % m != 0 || dims[2] < 2 * m || dims[3] < 2 * m {
            return Err(Error::Shape(format!(
                "generator input spatial dims must be multiples of {m} and at least {}, got {}x{}",
                2 * m,
                dims[2],
                dims[3]
            )));
        }
        Ok(())
    }

    fn tap_meta(&self, tap: TapLayer) -> Result<TapMeta> {
        Ok(TapMeta {
            layer: tap,
            receptive_field: self.cfg.receptive_field(tap)?,
            stride: self.cfg.tap_stride(tap)?,
            channels: self.cfg.tap_channels(tap)?,
        })
    }

    /// Runs the network, collecting `taps` on the way. Stops after the deepest
    /// tap unless `full` is set.
    fn run(&self, x: &Tensor, taps: &[TapLayer], full: bool) -> Result<(Option<Tensor>, FeatureStack)> {
        self.check_input(x)?;
        let mut slots: Vec<Option<Tensor>> = vec![None; taps.len()];
        let mut meta = Vec::with_capacity(taps.len());
        for t in taps {
            meta.push(self.tap_meta(*t)?);
        }
        let deepest = taps
            .iter()
            .map(|t| match t {
                TapLayer::InputRgb => 0,
                TapLayer::Down(i) => *i,
                TapLayer::Res(i) => self.cfg.n_downsampling + i,
            })
            .max()
            .unwrap_or(0);
        let mut record = |layer: TapLayer, t: &Tensor| {
            for (slot, want) in slots.iter_mut().zip(taps) {
                if *want == layer {
                    *slot = Some(t.clone());
                }
            }
        };

        record(TapLayer::InputRgb, x);
        let mut h = x.clone();
        let mut depth = 0;
        if full || deepest > 0 {
            h = self.stem_conv.forward(&reflect_pad2d(&h, 3)?)?;
            h = self.stem_norm.forward(&h)?.relu()?;
            for (i, down) in self.downs.iter().enumerate() {
                let c = down.conv.forward(&h)?;
                record(TapLayer::Down(i + 1), &c);
                depth += 1;
                if !full && depth >= deepest {
                    break;
                }
                h = blur_downsample(&down.norm.forward(&c)?.relu()?)?;
            }
            if full || depth < deepest {
                for (i, block) in self.blocks.iter().enumerate() {
                    h = block.forward(&h)?;
                    record(TapLayer::Res(i + 1), &h);
                    depth += 1;
                    if !full && depth >= deepest {
                        break;
                    }
                }
            }
        }

        let maps = slots
            .into_iter()
            .zip(taps)
            .map(|(s, t)| s.ok_or_else(|| Error::UnknownTap(t.to_string())))
            .collect::<Result<Vec<_>>>()?;
        let stack = FeatureStack { maps, meta };
        if !full {
            return Ok((None, stack));
        }
        for up in &self.ups {
            h = up.norm.forward(&up.conv.forward(&h)?)?.relu()?;
        }
        let out = self.head_conv.forward(&reflect_pad2d(&h, 3)?)?.tanh()?;
        Ok((Some(out), stack))
    }

    pub fn translate(&self, x: &Tensor) -> Result<Tensor> {
        let (out, _) = self.run(x, &[], true)?;
        Ok(out.expect("full pass yields an output"))
    }

    /// Translation plus the configured taps from the same pass.
    pub fn forward_with_taps(&self, x: &Tensor) -> Result<(Tensor, FeatureStack)> {
        let (out, stack) = self.run(x, &self.cfg.tap_layers, true)?;
        Ok((out.expect("full pass yields an output"), stack))
    }

    /// Encoder-only pass returning the requested taps.
    pub fn encode_features(&self, x: &Tensor, taps: &[TapLayer]) -> Result<FeatureStack> {
        for t in taps {
            self.cfg.check_tap(*t)?;
        }
        Ok(self.run(x, taps, false)?.1)
    }

    pub fn tap_layers(&self) -> &[TapLayer] {
        &self.cfg.tap_layers
    }
}
