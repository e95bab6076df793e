//! Parameter storage and the handful of layers the networks are built from.

use std::collections::{BTreeMap, HashMap};

use candle_core::{DType, Device, Tensor, Var, D};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::rng_for;

/// Named trainable tensors of one network component.
///
/// Initial values are drawn from a stream keyed by `(seed, name)`, so the
/// value of a parameter does not depend on construction order.
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    dtype: DType,
    device: Device,
    seed: u64,
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType) -> Self {
        Self {
            vars: BTreeMap::new(),
            dtype,
            device: Device::Cpu,
            seed,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn normal(&mut self, name: &str, shape: &[usize], std: f64) -> Result<Tensor> {
        let dist = Normal::new(0.0, std)
            .map_err(|e| Error::InvalidArgument(format!("init std {std}: {e}")))?;
        let mut rng = rng_for(self.seed, name);
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| dist.sample(&mut rng)).collect();
        let t = Tensor::from_vec(data, shape, &self.device)?.to_dtype(self.dtype)?;
        self.insert(name, t)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> Result<Tensor> {
        let t = (Tensor::ones(shape, self.dtype, &self.device)? * value)?;
        self.insert(name, t)
    }

    fn insert(&mut self, name: &str, t: Tensor) -> Result<Tensor> {
        if self.vars.contains_key(name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter `{name}`")));
        }
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        self.vars.insert(name.to_string(), var);
        Ok(out)
    }

    pub fn num_params(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    /// SHA-256 over every parameter name and value, in name order.
    pub fn fingerprint(&self) -> Result<String> {
        let mut hasher = Sha256::new();
        for (name, var) in &self.vars {
            hasher.update(name.as_bytes());
            let values = var.as_tensor().flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
            for v in values {
                hasher.update(v.to_le_bytes());
            }
        }
        Ok(format!("{:x}", hasher.finalize()))
    }

    /// Overwrite every parameter from `tensors[prefix + name]`.
    pub fn load(&self, tensors: &HashMap<String, Tensor>, prefix: &str) -> Result<()> {
        for (name, var) in &self.vars {
            let key = format!("{prefix}{name}");
            let t = tensors
                .get(&key)
                .ok_or_else(|| Error::Shape(format!("missing tensor `{key}`")))?;
            if t.dims() != var.dims() {
                return Err(Error::Shape(format!(
                    "tensor `{key}` has shape {:?}, expected {:?}",
                    t.dims(),
                    var.dims()
                )));
            }
            var.set(&t.to_dtype(self.dtype)?)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    #[default]
    Instance,
    /// Identity. Only useful for probing the purely local structure of a
    /// network, since instance statistics couple every spatial location.
    None,
}

pub struct Conv2d {
    weight: Tensor,
    bias: Tensor,
    stride: usize,
    padding: usize,
    dilation: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        init_std: f64,
    ) -> Result<Self> {
        let weight = store.normal(&format!("{name}.weight"), &[c_out, c_in, kernel, kernel], init_std)?;
        let bias = store.constant(&format!("{name}.bias"), &[c_out], 0.0)?;
        Ok(Self {
            weight,
            bias,
            stride,
            padding,
            dilation: 1,
        })
    }

    pub fn dtype(&self) -> DType {
        self.weight.dtype()
    }

    pub fn with_dilation(mut self, dilation: usize) -> Self {
        self.dilation = dilation;
        self
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = conv2d_nchw(x, &self.weight, self.padding, self.stride, self.dilation)?;
        let c = self.bias.dim(0)?;
        Ok(y.broadcast_add(&self.bias.reshape((1, c, 1, 1))?)?)
    }
}

/// Stride-2 transposed convolution, 3×3, doubling the spatial size.
pub struct ConvTranspose2d {
    weight: Tensor,
    bias: Tensor,
}

impl ConvTranspose2d {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        init_std: f64,
    ) -> Result<Self> {
        let weight = store.normal(&format!("{name}.weight"), &[c_in, c_out, 3, 3], init_std)?;
        let bias = store.constant(&format!("{name}.bias"), &[c_out], 0.0)?;
        Ok(Self { weight, bias })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv_transpose2d(&self.weight, 1, 1, 2, 1)?;
        let c = self.bias.dim(0)?;
        Ok(y.broadcast_add(&self.bias.reshape((1, c, 1, 1))?)?)
    }
}

pub enum Norm {
    Instance { gamma: Tensor, beta: Tensor },
    Identity,
}

impl Norm {
    pub fn new(store: &mut ParamStore, name: &str, kind: NormKind, channels: usize) -> Result<Self> {
        Ok(match kind {
            NormKind::Instance => Norm::Instance {
                gamma: store.constant(&format!("{name}.weight"), &[channels], 1.0)?,
                beta: store.constant(&format!("{name}.bias"), &[channels], 0.0)?,
            },
            NormKind::None => Norm::Identity,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Norm::Identity => Ok(x.clone()),
            Norm::Instance { gamma, beta } => {
                let (_, c, _, _) = x.dims4()?;
                let xn = standardize_spatial(x)?;
                Ok(xn
                    .broadcast_mul(&gamma.reshape((1, c, 1, 1))?)?
                    .broadcast_add(&beta.reshape((1, c, 1, 1))?)?)
            }
        }
    }
}

/// Per-sample, per-channel zero-mean unit-variance over the spatial axes
/// (biased variance, eps 1e-5).
pub fn standardize_spatial(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let flat = x.reshape((b, c, h * w))?;
    let mean = flat.mean_keepdim(2)?;
    let centered = flat.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim(2)?;
    let out = centered.broadcast_div(&(var + 1e-5)?.sqrt()?)?;
    Ok(out.reshape((b, c, h, w))?)
}

pub struct Linear {
    weight: Tensor,
    bias: Tensor,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        init_std: f64,
    ) -> Result<Self> {
        let weight = store.normal(&format!("{name}.weight"), &[d_out, d_in], init_std)?;
        let bias = store.constant(&format!("{name}.bias"), &[d_out], 0.0)?;
        Ok(Self { weight, bias })
    }

    /// `x`: (N, d_in) → (N, d_out).
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.matmul(&self.weight.t()?)?.broadcast_add(&self.bias)?)
    }
}

fn reflect_indices(n: usize, pad: usize) -> Vec<u32> {
    (0..n + 2 * pad)
        .map(|i| {
            let j = i as isize - pad as isize;
            let r = if j < 0 {
                -j
            } else if j >= n as isize {
                2 * (n as isize - 1) - j
            } else {
                j
            };
            r as u32
        })
        .collect()
}

/// Reflection padding of the last two axes of a 4-D tensor.
pub fn reflect_pad2d(x: &Tensor, pad: usize) -> Result<Tensor> {
    if pad == 0 {
        return Ok(x.clone());
    }
    let (_, _, h, w) = x.dims4()?;
    if pad >= h || pad >= w {
        return Err(Error::Shape(format!("reflection pad {pad} needs spatial dims > pad, got {h}x{w}")));
    }
    let dev = x.device();
    let rows = Tensor::from_vec(reflect_indices(h, pad), h + 2 * pad, dev)?;
    let cols = Tensor::from_vec(reflect_indices(w, pad), w + 2 * pad, dev)?;
    Ok(x.index_select(&rows, 2)?.index_select(&cols, 3)?)
}

/// `conv2d` on an NCHW input.
///
/// candle's CPU kernel takes a contiguous input for channels-last when its
/// strides happen to coincide, which they do whenever `C == H == W`. Such
/// inputs get one extra zero row and column, which only ever fall in the
/// padding region, and the extra outputs are dropped. Both dims grow because
/// candle's backward pass assumes square maps.
pub fn conv2d_nchw(x: &Tensor, weight: &Tensor, padding: usize, stride: usize, dilation: usize) -> Result<Tensor> {
    let (_, c, h, w) = x.dims4()?;
    if c != h || h != w {
        return Ok(x.conv2d(weight, padding, stride, dilation, 1)?);
    }
    let (kh, kw) = (weight.dim(2)?, weight.dim(3)?);
    let out = |n: usize, k: usize| (n + 2 * padding - dilation * (k - 1) - 1) / stride + 1;
    let widened = x.pad_with_zeros(2, 0, 1)?.pad_with_zeros(3, 0, 1)?;
    Ok(widened
        .conv2d(weight, padding, stride, dilation, 1)?
        .narrow(2, 0, out(h, kh))?
        .narrow(3, 0, out(w, kw))?)
}

/// Anti-aliased stride-2 downsampling: reflect pad, binomial [1,2,1]⊗[1,2,1]/16
/// blur, keep every second sample.
pub fn blur_downsample(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let taps = [1.0, 2.0, 1.0];
    let kernel: Vec<f64> = taps
        .iter()
        .flat_map(|a| taps.iter().map(move |b| a * b / 16.0))
        .collect();
    let kernel = Tensor::from_vec(kernel, (1, 1, 3, 3), x.device())?.to_dtype(x.dtype())?;
    let padded = reflect_pad2d(x, 1)?.reshape((b * c, 1, h + 2, w + 2))?;
    let y = conv2d_nchw(&padded, &kernel, 0, 2, 1)?;
    let (_, _, oh, ow) = y.dims4()?;
    Ok(y.reshape((b, c, oh, ow))?)
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok(x.maximum(&(x * slope)?)?)
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok((x.neg()?.exp()? + 1.0)?.recip()?)
}

pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?;
    let e = x.broadcast_sub(&max)?.exp()?;
    let s = e.sum_keepdim(D::Minus1)?;
    Ok(e.broadcast_div(&s)?)
}

/// Row-wise L2 normalisation of the last axis, `x / √(‖x‖² + 1e-24)`; finite
/// gradient at zero rows.
pub fn l2_normalize_last(x: &Tensor) -> Result<Tensor> {
    let norm = (x.sqr()?.sum_keepdim(D::Minus1)? + 1e-24)?.sqrt()?;
    Ok(x.broadcast_div(&norm)?)
}
