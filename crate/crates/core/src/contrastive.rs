//! Projection heads, InfoNCE, and the multi-layer patch contrastive loss.
//!
//! For every tap layer the attention sampler picks `k` locations on the
//! source features. The same locations are gathered from the source and the
//! translated image, projected by that layer's MLP head to unit vectors, and
//! each translated patch (query) is classified against the source patch at
//! the same location (positive) and the other `k − 1` selected source patches
//! (negatives). The loss is the mean cross-entropy over all layers and
//! selected locations.

use candle_core::{DType, Device, Tensor, D};
use serde::{Deserialize, Serialize};

use crate::attention::{select_top_k, AttentionSampler, PatchSelection};
use crate::error::{Error, Result};
use crate::generator::{FeatureStack, Generator};
use crate::nn::{l2_normalize_last, Linear, ParamStore};
use crate::rng::derive_seed;

pub const DEFAULT_NCE_DIM: usize = 256;
pub const DEFAULT_TAU: f64 = 0.07;
pub const DEFAULT_K: usize = 256;
const UNIT_TOLERANCE: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchNceConfig {
    /// Locations per layer (clamped by the layer's spatial size).
    pub k: usize,
    pub tau: f64,
}

impl Default for PatchNceConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            tau: DEFAULT_TAU,
        }
    }
}

impl PatchNceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::InvalidArgument(format!(
                "patch contrastive loss needs ≥ 2 locations per layer, got k = {}",
                self.k
            )));
        }
        check_tau(self.tau)
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("temperature must be > 0, got {tau}")))
    }
}

struct Mlp {
    fc1: Linear,
    fc2: Linear,
}

/// Per-layer two-layer MLP `C_l → dim → dim` with a ReLU in between.
pub struct ProjectionHeads {
    mlps: Vec<Mlp>,
    dim: usize,
}

impl ProjectionHeads {
    /// Registers parameters under `heads.l{l}.*`.
    pub fn new(store: &mut ParamStore, channels: &[usize], dim: usize, init_std: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("projection dim must be ≥ 1".into()));
        }
        let mlps = channels
            .iter()
            .enumerate()
            .map(|(l, &c)| {
                Ok(Mlp {
                    fc1: Linear::new(store, &format!("heads.l{l}.fc1"), c, dim, init_std)?,
                    fc2: Linear::new(store, &format!("heads.l{l}.fc2"), dim, dim, init_std)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { mlps, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_layers(&self) -> usize {
        self.mlps.len()
    }

    /// `features`: `k × C_l` → `k × dim`, each row scaled to unit L2 norm.
    pub fn project(&self, layer: usize, features: &Tensor) -> Result<Tensor> {
        let mlp = self
            .mlps
            .get(layer)
            .ok_or_else(|| Error::InvalidArgument(format!("no projection head for layer {layer}")))?;
        let (k, _) = features.dims2()?;
        if k == 0 {
            return Err(Error::InvalidArgument("project needs at least one row".into()));
        }
        let h = mlp.fc1.forward(features)?.relu()?;
        l2_normalize_last(&mlp.fc2.forward(&h)?)
    }
}

fn log_sum_exp_last(x: &Tensor) -> Result<Tensor> {
    let m = x.max_keepdim(D::Minus1)?.detach();
    let s = x.broadcast_sub(&m)?.exp()?.sum_keepdim(D::Minus1)?.log()?;
    Ok((s + m)?.squeeze(D::Minus1)?)
}

/// Cross-entropy of each row of `logits` against target column 0.
pub fn cross_entropy_first(logits: &Tensor) -> Result<Tensor> {
    let first = logits.narrow(D::Minus1, 0, 1)?.squeeze(D::Minus1)?;
    Ok((log_sum_exp_last(logits)? - first)?)
}

/// Differentiable InfoNCE on tensors (`query`, `positive`: `D`; `negatives`:
/// `N × D`). No unit-norm check, so it can be differentiated freely.
pub fn info_nce_tensor(query: &Tensor, positive: &Tensor, negatives: &Tensor, tau: f64) -> Result<Tensor> {
    check_tau(tau)?;
    let q = query.unsqueeze(0)?;
    let keys = Tensor::cat(&[&positive.unsqueeze(0)?, negatives], 0)?;
    let logits = (q.matmul(&keys.t()?)? / tau)?;
    Ok(cross_entropy_first(&logits)?.squeeze(0)?)
}

fn check_unit(v: &[f64], what: &str) -> Result<()> {
    let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if (n - 1.0).abs() > UNIT_TOLERANCE || !n.is_finite() {
        return Err(Error::InvalidArgument(format!("{what} has L2 norm {n}, expected 1")));
    }
    Ok(())
}

/// `−log softmax` of the positive among `[v·v⁺, v·v₁⁻, …, v·v_N⁻] / τ`.
pub fn info_nce(query: &[f64], positive: &[f64], negatives: &[Vec<f64>], tau: f64) -> Result<f64> {
    check_tau(tau)?;
    if negatives.is_empty() {
        return Err(Error::InvalidArgument("info_nce needs at least one negative".into()));
    }
    let d = query.len();
    if positive.len() != d || negatives.iter().any(|n| n.len() != d) {
        return Err(Error::Shape("query, positive and negatives must share a dimension".into()));
    }
    check_unit(query, "query")?;
    check_unit(positive, "positive")?;
    for (i, n) in negatives.iter().enumerate() {
        check_unit(n, &format!("negative {i}"))?;
    }
    let dev = Device::Cpu;
    let q = Tensor::from_slice(query, d, &dev)?;
    let p = Tensor::from_slice(positive, d, &dev)?;
    let flat: Vec<f64> = negatives.iter().flatten().copied().collect();
    let n = Tensor::from_vec(flat, (negatives.len(), d), &dev)?;
    Ok(info_nce_tensor(&q, &p, &n, tau)?.to_scalar::<f64>()?)
}

/// Row losses for queries `q` (`k × D`) against keys `keys` (`k × D`) where
/// key `i` is the positive of query `i` and every other key a negative.
pub fn patch_info_nce_rows(q: &Tensor, keys: &Tensor, tau: f64) -> Result<Tensor> {
    let (k, _) = q.dims2()?;
    let logits = (q.matmul(&keys.t()?)? / tau)?;
    let eye = Tensor::eye(k, logits.dtype(), logits.device())?;
    let positive = (&logits * &eye)?.sum(1)?;
    Ok((log_sum_exp_last(&logits)? - positive)?)
}

pub struct PatchNceOutput {
    /// Scalar mean loss (attached to the autograd graph).
    pub loss: Tensor,
    /// One selection per batch item.
    pub selections: Vec<PatchSelection>,
    /// Number of (layer, location, item) terms averaged.
    pub terms: usize,
}

/// Seed the attention sampler sees for one (layer, item) pair.
pub fn selection_seed(seed: u64, layer: usize, item: usize) -> u64 {
    derive_seed(seed, &format!("select/l{layer}/b{item}"))
}

fn gather_rows(map: &Tensor, idx: &Tensor) -> Result<Tensor> {
    let (c, h, w) = map.dims3()?;
    Ok(map.reshape((c, h * w))?.index_select(idx, 1)?.t()?.contiguous()?)
}

/// Patch contrastive loss from already-tapped features of the source image
/// (`source`, used for significance and positives/negatives) and of its
/// translation (`translated`, used for queries).
pub fn patch_nce_from_features(
    source: &FeatureStack,
    translated: &FeatureStack,
    heads: &ProjectionHeads,
    sampler: &AttentionSampler,
    cfg: &PatchNceConfig,
    seed: u64,
) -> Result<PatchNceOutput> {
    cfg.validate()?;
    if source.len() != translated.len() || source.len() != heads.num_layers() || source.len() != sampler.num_layers()
    {
        return Err(Error::Shape(format!(
            "layer count mismatch: source {}, translated {}, heads {}, attention {}",
            source.len(),
            translated.len(),
            heads.num_layers(),
            sampler.num_layers()
        )));
    }
    let batch = source.maps.first().map(|m| m.dim(0)).transpose()?.unwrap_or(0);
    let mut selections = vec![
        PatchSelection {
            k: cfg.k,
            layers: Vec::new(),
        };
        batch
    ];
    let mut total: Option<Tensor> = None;
    let mut terms = 0usize;
    for (l, (src, out)) in source.maps.iter().zip(&translated.maps).enumerate() {
        if src.dims() != out.dims() {
            return Err(Error::Shape(format!(
                "layer {l}: source features {:?} vs translated {:?}",
                src.dims(),
                out.dims()
            )));
        }
        for (b, selection) in selections.iter_mut().enumerate() {
            let src_b = src.get(b)?;
            let significance = sampler.compute_significance(l, &src_b, selection_seed(seed, l, b))?;
            let chosen = select_top_k(&significance, cfg.k);
            let k = chosen.indices.len();
            if k < 2 {
                return Err(Error::InvalidArgument(format!(
                    "layer {l} has {k} location(s); need ≥ 2 locations for negatives"
                )));
            }
            let idx: Vec<u32> = chosen.indices.iter().map(|&i| i as u32).collect();
            let idx = Tensor::from_vec(idx, k, src.device())?;
            let keys = heads.project(l, &gather_rows(&src_b, &idx)?)?;
            let queries = heads.project(l, &gather_rows(&out.get(b)?, &idx)?)?;
            let rows = patch_info_nce_rows(&queries, &keys, cfg.tau)?.sum_all()?;
            total = Some(match total {
                None => rows,
                Some(t) => (t + rows)?,
            });
            terms += k;
            selection.layers.push(chosen);
        }
    }
    let total = total.ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
    Ok(PatchNceOutput {
        loss: (total / terms as f64)?,
        selections,
        terms,
    })
}

/// Contrastive loss between source `x` and its translation `y_hat`.
pub fn patch_nce_loss(
    gen: &Generator,
    heads: &ProjectionHeads,
    sampler: &AttentionSampler,
    x: &Tensor,
    y_hat: &Tensor,
    cfg: &PatchNceConfig,
    seed: u64,
) -> Result<PatchNceOutput> {
    if x.dims() != y_hat.dims() {
        return Err(Error::Shape(format!(
            "source {:?} and translation {:?} differ in shape",
            x.dims(),
            y_hat.dims()
        )));
    }
    let taps = gen.tap_layers().to_vec();
    let src = gen.encode_features(x, &taps)?;
    let out = gen.encode_features(y_hat, &taps)?;
    patch_nce_from_features(&src, &out, heads, sampler, cfg, seed)
}

/// Identity regulariser: the same loss between target-domain `y` and `G(y)`.
pub fn identity_patch_nce(
    gen: &Generator,
    heads: &ProjectionHeads,
    sampler: &AttentionSampler,
    y: &Tensor,
    cfg: &PatchNceConfig,
    seed: u64,
) -> Result<PatchNceOutput> {
    let y_hat = gen.translate(y)?;
    patch_nce_loss(gen, heads, sampler, y, &y_hat, cfg, seed)
}

/// Scalar value of a 0-d loss tensor as f64.
pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}
