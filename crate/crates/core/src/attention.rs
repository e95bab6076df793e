//! Attention-derived patch significance and top-k patch selection.
//!
//! Every mechanism turns one feature map `C × H × W` into one non-negative
//! score per spatial location:
//!
//! * self attention: `score(j) = Σ_i softmax_j(q_i · k_j)`, the attention mass
//!   location `j` receives from all queries;
//! * external attention: memory units attend over locations
//!   (`softmax` over the spatial axis), `score(s)` is the mass location `s`
//!   receives summed over memory units;
//! * BAM: the sigmoid of the spatial branch (1×1 reduce, two dilated 3×3, 1×1);
//! * triplet attention: mean of the three branch gates, each reduced to a
//!   per-location value by averaging over the channel axis;
//! * random: i.i.d. uniform scores, so top-k is a uniform sample without
//!   replacement (the unguided baseline).
//!
//! Mechanism parameters live in their own [`ParamStore`] and never in the
//! generator or discriminator. Selection is a hard top-k, so the contrastive
//! loss sends no gradient into them; they stay at their seeded values.

use std::fmt;
use std::str::FromStr;

use candle_core::{DType, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{sigmoid, softmax_last, standardize_spatial, Conv2d, ParamStore};
use crate::rng::rng_for;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionKind {
    #[serde(rename = "self", alias = "self_attention")]
    SelfAttention,
    #[serde(rename = "external", alias = "external_attention")]
    ExternalAttention,
    Bam,
    Triplet,
    Random,
}

impl AttentionKind {
    pub const ALL: [AttentionKind; 5] = [
        AttentionKind::SelfAttention,
        AttentionKind::ExternalAttention,
        AttentionKind::Bam,
        AttentionKind::Triplet,
        AttentionKind::Random,
    ];
}

impl fmt::Display for AttentionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttentionKind::SelfAttention => "self",
            AttentionKind::ExternalAttention => "external",
            AttentionKind::Bam => "bam",
            AttentionKind::Triplet => "triplet",
            AttentionKind::Random => "random",
        })
    }
}

impl FromStr for AttentionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "self" | "self_attention" => Ok(AttentionKind::SelfAttention),
            "external" | "external_attention" => Ok(AttentionKind::ExternalAttention),
            "bam" => Ok(AttentionKind::Bam),
            "triplet" => Ok(AttentionKind::Triplet),
            "random" => Ok(AttentionKind::Random),
            other => Err(Error::Config(format!(
                "unknown attention `{other}` (expected self, external, bam, triplet or random)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub kind: AttentionKind,
    /// Self attention key/query width is `max(C / key_reduction, 1)`.
    pub key_reduction: usize,
    /// External attention memory size.
    pub memory_units: usize,
    /// BAM hidden width is `max(C / bam_reduction, 1)`.
    pub bam_reduction: usize,
    pub bam_dilation: usize,
    pub triplet_kernel: usize,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self {
            kind: AttentionKind::SelfAttention,
            key_reduction: 8,
            memory_units: 64,
            bam_reduction: 16,
            bam_dilation: 4,
            triplet_kernel: 7,
        }
    }
}

impl AttentionConfig {
    pub fn with_kind(kind: AttentionKind) -> Self {
        Self {
            kind,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.key_reduction == 0 || self.memory_units == 0 || self.bam_reduction == 0 || self.bam_dilation == 0 {
            return Err(Error::Config("attention hyperparameters must be ≥ 1".into()));
        }
        if self.triplet_kernel % 2 == 0 {
            return Err(Error::Config("triplet_kernel must be odd".into()));
        }
        Ok(())
    }
}

/// Smallest channel count any mechanism accepts.
pub const MIN_CHANNELS: usize = 1;

fn check_features(features: &Tensor, channels: usize) -> Result<(usize, usize, usize)> {
    let (c, h, w) = features.dims3()?;
    if c < MIN_CHANNELS {
        return Err(Error::InvalidArgument(format!(
            "attention needs at least {MIN_CHANNELS} channel(s), got {c}"
        )));
    }
    if c != channels {
        return Err(Error::Shape(format!("attention built for {channels} channels, got {c}")));
    }
    let total = features.to_dtype(DType::F64)?.sum_all()?.to_scalar::<f64>()?;
    if !total.is_finite() {
        return Err(Error::NonFinite("features passed to attention".into()));
    }
    Ok((c, h, w))
}

fn to_scores(t: &Tensor) -> Result<Vec<f64>> {
    let v = t.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("attention significance".into()));
    }
    Ok(v)
}

pub struct SelfAttentionScorer {
    wq: Tensor,
    bq: Tensor,
    wk: Tensor,
    bk: Tensor,
    channels: usize,
}

impl SelfAttentionScorer {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, cfg: &AttentionConfig) -> Result<Self> {
        let d = (channels / cfg.key_reduction).max(1);
        let std = 1.0 / (channels as f64).sqrt();
        Ok(Self {
            wq: store.normal(&format!("{name}.query.weight"), &[d, channels], std)?,
            bq: store.constant(&format!("{name}.query.bias"), &[d, 1], 0.0)?,
            wk: store.normal(&format!("{name}.key.weight"), &[d, channels], std)?,
            bk: store.constant(&format!("{name}.key.bias"), &[d, 1], 0.0)?,
            channels,
        })
    }

    pub fn scores(&self, features: &Tensor) -> Result<Vec<f64>> {
        let (c, h, w) = check_features(features, self.channels)?;
        let s = h * w;
        let x = features.to_dtype(self.wq.dtype())?.reshape((c, s))?;
        let q = self.wq.matmul(&x)?.broadcast_add(&self.bq)?.t()?.contiguous()?; // S × d
        let k = self.wk.matmul(&x)?.broadcast_add(&self.bk)?; // d × S
        let d = q.dim(1)?;
        let q = q.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
        let k = k.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
        let mut received = vec![0.0f64; s];
        let mut row = vec![0.0f64; s];
        for qi in q.chunks_exact(d) {
            row.fill(0.0);
            for (a, kd) in qi.iter().zip(k.chunks_exact(s)) {
                for (e, b) in row.iter_mut().zip(kd) {
                    *e += a * b;
                }
            }
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for e in row.iter_mut() {
                *e = (*e - max).exp();
                total += *e;
            }
            let inv = 1.0 / total;
            for (r, e) in received.iter_mut().zip(&row) {
                *r += e * inv;
            }
        }
        if received.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("attention significance".into()));
        }
        Ok(received)
    }
}

pub struct ExternalAttentionScorer {
    memory: Tensor,
    channels: usize,
}

impl ExternalAttentionScorer {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, cfg: &AttentionConfig) -> Result<Self> {
        let std = 1.0 / (channels as f64).sqrt();
        Ok(Self {
            memory: store.normal(&format!("{name}.memory_key.weight"), &[cfg.memory_units, channels], std)?,
            channels,
        })
    }

    pub fn scores(&self, features: &Tensor) -> Result<Vec<f64>> {
        let (c, h, w) = check_features(features, self.channels)?;
        let x = features.to_dtype(self.memory.dtype())?.reshape((c, h * w))?;
        let logits = self.memory.matmul(&x)?; // m × S
        let attn = softmax_last(&logits)?;
        to_scores(&attn.sum(0)?)
    }
}

fn pad_same(x: &Tensor, pad: usize) -> Result<Tensor> {
    Ok(x.pad_with_same(2, pad, pad)?.pad_with_same(3, pad, pad)?)
}

pub struct BamScorer {
    reduce: Conv2d,
    dilated: [Conv2d; 2],
    out: Conv2d,
    dilation: usize,
    channels: usize,
}

impl BamScorer {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, cfg: &AttentionConfig) -> Result<Self> {
        let hidden = (channels / cfg.bam_reduction).max(1);
        let d = cfg.bam_dilation;
        let std_in = 1.0 / (channels as f64).sqrt();
        let std_h = 1.0 / ((hidden * 9) as f64).sqrt();
        let reduce = Conv2d::new(store, &format!("{name}.reduce"), channels, hidden, 1, 1, 0, std_in)?;
        let dilated = [
            Conv2d::new(store, &format!("{name}.dilated1"), hidden, hidden, 3, 1, 0, std_h)?.with_dilation(d),
            Conv2d::new(store, &format!("{name}.dilated2"), hidden, hidden, 3, 1, 0, std_h)?.with_dilation(d),
        ];
        let out = Conv2d::new(
            store,
            &format!("{name}.out"),
            hidden,
            1,
            1,
            1,
            0,
            1.0 / (hidden as f64).sqrt(),
        )?;
        Ok(Self {
            reduce,
            dilated,
            out,
            dilation: d,
            channels,
        })
    }

    pub fn scores(&self, features: &Tensor) -> Result<Vec<f64>> {
        let (c, h, w) = check_features(features, self.channels)?;
        let x = features.to_dtype(self.reduce.dtype())?.reshape((1, c, h, w))?;
        let mut a = standardize_spatial(&self.reduce.forward(&x)?)?.relu()?;
        for conv in &self.dilated {
            a = standardize_spatial(&conv.forward(&pad_same(&a, self.dilation)?)?)?.relu()?;
        }
        let spatial = self.out.forward(&a)?;
        to_scores(&sigmoid(&spatial)?)
    }
}

pub struct TripletScorer {
    /// Gates over the (C, W), (H, C) and (H, W) planes.
    branches: [Conv2d; 3],
    pad: usize,
    channels: usize,
}

impl TripletScorer {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, cfg: &AttentionConfig) -> Result<Self> {
        let k = cfg.triplet_kernel;
        let std = 1.0 / ((2 * k * k) as f64).sqrt();
        let mk = |store: &mut ParamStore, b: &str| Conv2d::new(store, &format!("{name}.{b}"), 2, 1, k, 1, 0, std);
        Ok(Self {
            branches: [mk(store, "cw")?, mk(store, "hc")?, mk(store, "hw")?],
            pad: k / 2,
            channels,
        })
    }

    /// Z-pool over axis 1 then conv, standardise, sigmoid: `1×P×Q×R → 1×1×Q×R`.
    fn gate(&self, branch: usize, x: &Tensor) -> Result<Tensor> {
        let pooled = Tensor::cat(&[&x.max_keepdim(1)?, &x.mean_keepdim(1)?], 1)?;
        let y = self.branches[branch].forward(&pad_same(&pooled, self.pad)?)?;
        sigmoid(&standardize_spatial(&y)?)
    }

    pub fn scores(&self, features: &Tensor) -> Result<Vec<f64>> {
        let (c, h, w) = check_features(features, self.channels)?;
        let x = features.to_dtype(self.branches[0].dtype())?.reshape((1, c, h, w))?;
        // (C, W) plane, pooled over H → one value per column w.
        let g_cw = self.gate(0, &x.permute((0, 2, 1, 3))?.contiguous()?)?; // 1×1×C×W
        let per_w = g_cw.mean(2)?.reshape((1, w))?;
        // (H, C) plane, pooled over W → one value per row h.
        let g_hc = self.gate(1, &x.permute((0, 3, 2, 1))?.contiguous()?)?; // 1×1×H×C
        let per_h = g_hc.mean(3)?.reshape((h, 1))?;
        let g_hw = self.gate(2, &x)?.reshape((h, w))?;
        let combined = ((g_hw.broadcast_add(&per_w)?.broadcast_add(&per_h)?) / 3.0)?;
        to_scores(&combined)
    }
}

pub enum Mechanism {
    SelfAttention(SelfAttentionScorer),
    ExternalAttention(ExternalAttentionScorer),
    Bam(BamScorer),
    Triplet(TripletScorer),
    Random { channels: usize },
}

impl Mechanism {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, cfg: &AttentionConfig) -> Result<Self> {
        if channels < MIN_CHANNELS {
            return Err(Error::InvalidArgument(format!(
                "attention needs at least {MIN_CHANNELS} channel(s), got {channels}"
            )));
        }
        Ok(match cfg.kind {
            AttentionKind::SelfAttention => Mechanism::SelfAttention(SelfAttentionScorer::new(store, name, channels, cfg)?),
            AttentionKind::ExternalAttention => {
                Mechanism::ExternalAttention(ExternalAttentionScorer::new(store, name, channels, cfg)?)
            }
            AttentionKind::Bam => Mechanism::Bam(BamScorer::new(store, name, channels, cfg)?),
            AttentionKind::Triplet => Mechanism::Triplet(TripletScorer::new(store, name, channels, cfg)?),
            AttentionKind::Random => Mechanism::Random { channels },
        })
    }

    /// Significance of every location of one `C × H × W` map. `seed` only
    /// matters for the random mechanism.
    pub fn significance(&self, features: &Tensor, seed: u64) -> Result<Vec<f64>> {
        match self {
            Mechanism::SelfAttention(m) => m.scores(features),
            Mechanism::ExternalAttention(m) => m.scores(features),
            Mechanism::Bam(m) => m.scores(features),
            Mechanism::Triplet(m) => m.scores(features),
            Mechanism::Random { channels } => {
                let (_, h, w) = check_features(features, *channels)?;
                let mut rng = rng_for(seed, "random-significance");
                Ok((0..h * w).map(|_| rng.random::<f64>()).collect())
            }
        }
    }
}

/// One attention mechanism per generator tap.
pub struct AttentionSampler {
    cfg: AttentionConfig,
    mechanisms: Vec<Mechanism>,
}

impl AttentionSampler {
    /// `channels[l]` is the channel count of tap `l`. Parameters are registered
    /// under `attn.l{l}.*`.
    pub fn new(cfg: AttentionConfig, channels: &[usize], store: &mut ParamStore) -> Result<Self> {
        cfg.validate()?;
        let mechanisms = channels
            .iter()
            .enumerate()
            .map(|(l, c)| Mechanism::new(store, &format!("attn.l{l}"), *c, &cfg))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { cfg, mechanisms })
    }

    pub fn config(&self) -> &AttentionConfig {
        &self.cfg
    }

    pub fn kind(&self) -> AttentionKind {
        self.cfg.kind
    }

    pub fn num_layers(&self) -> usize {
        self.mechanisms.len()
    }

    pub fn mechanism(&self, layer: usize) -> &Mechanism {
        &self.mechanisms[layer]
    }

    /// Significance for tap `layer` of a single (unbatched) map.
    pub fn compute_significance(&self, layer: usize, features: &Tensor, seed: u64) -> Result<Vec<f64>> {
        let m = self
            .mechanisms
            .get(layer)
            .ok_or_else(|| Error::InvalidArgument(format!("no attention for tap index {layer}")))?;
        m.significance(&features.detach(), seed)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerSelection {
    /// Flat spatial positions (`row * W + col`), most significant first.
    pub indices: Vec<usize>,
    pub significance: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatchSelection {
    pub k: usize,
    pub layers: Vec<LayerSelection>,
}

/// Top-`k` locations by descending significance; ties go to the lower index.
pub fn select_top_k(significance: &[f64], k: usize) -> LayerSelection {
    let mut order: Vec<usize> = (0..significance.len()).collect();
    order.sort_by(|&a, &b| significance[b].total_cmp(&significance[a]).then(a.cmp(&b)));
    order.truncate(k.min(significance.len()));
    LayerSelection {
        significance: order.iter().map(|&i| significance[i]).collect(),
        indices: order,
    }
}

pub fn select_patches(significance: &[Vec<f64>], k: usize) -> Result<PatchSelection> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be ≥ 1".into()));
    }
    Ok(PatchSelection {
        k,
        layers: significance.iter().map(|s| select_top_k(s, k)).collect(),
    })
}

/// Convenience for the `(features, mechanism, seed)` view: builds the
/// mechanism's parameters from `seed` and scores one map.
pub fn compute_significance(features: &Tensor, cfg: &AttentionConfig, seed: u64) -> Result<Vec<f64>> {
    let (c, _, _) = features.dims3()?;
    let mut store = ParamStore::new(seed, features.dtype());
    let mech = Mechanism::new(&mut store, "attn", c, cfg)?;
    mech.significance(&features.detach(), seed)
}

/// Transposes the two spatial axes of a `C × H × W` map.
pub fn transpose_spatial(features: &Tensor) -> Result<Tensor> {
    Ok(features.transpose(1, 2)?.contiguous()?)
}

/// Maps the flat index of an `H × W` map to the transposed `W × H` map.
pub fn transposed_index(idx: usize, h: usize, w: usize) -> usize {
    let (r, c) = (idx / w, idx % w);
    c * h + r
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    fn fixture(c: usize, h: usize, w: usize, seed: u64) -> Tensor {
        let mut s = ParamStore::new(seed, DType::F64);
        s.normal("f", &[c, h, w], 1.0).unwrap()
    }

    fn all_mechanisms(c: usize) -> Vec<(AttentionKind, Mechanism)> {
        AttentionKind::ALL
            .iter()
            .map(|k| {
                let mut store = ParamStore::new(5, DType::F64);
                (*k, Mechanism::new(&mut store, "m", c, &AttentionConfig::with_kind(*k)).unwrap())
            })
            .collect()
    }

    #[test]
    fn tie_break_by_ascending_index() {
        let sel = select_top_k(&[0.1, 0.9, 0.9, 0.2], 2);
        assert_eq!(sel.indices, vec![1, 2]);
        let all = select_top_k(&[0.5, 0.5, 0.5], 10);
        assert_eq!(all.indices, vec![0, 1, 2]);
        assert!(select_patches(&[vec![1.0]], 0).is_err());
    }

    #[test]
    fn all_mechanisms_same_length_and_nonnegative() {
        let f = fixture(6, 5, 7, 1);
        for (kind, m) in all_mechanisms(6) {
            let s = m.significance(&f, 3).unwrap();
            assert_eq!(s.len(), 35, "{kind}");
            assert!(s.iter().all(|v| v.is_finite() && *v >= 0.0), "{kind}");
        }
    }

    #[test]
    fn constant_map_gives_equal_scores() {
        let f = (Tensor::ones((4, 6, 6), DType::F64, &Device::Cpu).unwrap() * 0.3).unwrap();
        for (kind, m) in all_mechanisms(4) {
            if kind == AttentionKind::Random {
                continue;
            }
            let s = m.significance(&f, 0).unwrap();
            let spread = s.iter().cloned().fold(f64::MIN, f64::max) - s.iter().cloned().fold(f64::MAX, f64::min);
            assert!(spread < 1e-9, "{kind}: {spread}");
        }
    }

    #[test]
    fn zero_input_self_attention_is_uniform() {
        let f = Tensor::zeros((8, 4, 4), DType::F64, &Device::Cpu).unwrap();
        let mut store = ParamStore::new(1, DType::F64);
        let m = SelfAttentionScorer::new(&mut store, "s", 8, &AttentionConfig::default()).unwrap();
        let s = m.scores(&f).unwrap();
        assert!(s.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn random_is_seed_deterministic() {
        let f = fixture(3, 4, 4, 2);
        let mut store = ParamStore::new(0, DType::F64);
        let m = Mechanism::new(&mut store, "r", 3, &AttentionConfig::with_kind(AttentionKind::Random)).unwrap();
        assert_eq!(m.significance(&f, 9).unwrap(), m.significance(&f, 9).unwrap());
        assert_ne!(m.significance(&f, 9).unwrap(), m.significance(&f, 10).unwrap());
        assert!(store.is_empty());
    }

    #[test]
    fn rejects_non_finite_and_wrong_channels() {
        let mut store = ParamStore::new(0, DType::F64);
        let m = Mechanism::new(&mut store, "s", 3, &AttentionConfig::default()).unwrap();
        let bad = Tensor::new(&[[[f64::NAN, 0.0]], [[0.0, 0.0]], [[0.0, 0.0]]], &Device::Cpu).unwrap();
        assert!(matches!(m.significance(&bad, 0), Err(Error::NonFinite(_))));
        assert!(matches!(m.significance(&fixture(4, 2, 2, 0), 0), Err(Error::Shape(_))));
        assert!(Mechanism::new(&mut store, "z", 0, &AttentionConfig::default()).is_err());
    }

    /// Column sums of the row-softmaxed energy, written out with plain loops.
    fn direct_self_attention(m: &SelfAttentionScorer, f: &Tensor) -> Vec<f64> {
        let (c, h, w) = f.dims3().unwrap();
        let s = h * w;
        let x: Vec<f64> = f.flatten_all().unwrap().to_vec1().unwrap();
        let wq: Vec<Vec<f64>> = m.wq.to_vec2().unwrap();
        let wk: Vec<Vec<f64>> = m.wk.to_vec2().unwrap();
        let proj = |wm: &Vec<Vec<f64>>, j: usize| -> Vec<f64> {
            wm.iter().map(|row| (0..c).map(|ch| row[ch] * x[ch * s + j]).sum()).collect()
        };
        let q: Vec<Vec<f64>> = (0..s).map(|j| proj(&wq, j)).collect();
        let k: Vec<Vec<f64>> = (0..s).map(|j| proj(&wk, j)).collect();
        let mut col = vec![0.0; s];
        for qi in &q {
            let e: Vec<f64> = k.iter().map(|kj| qi.iter().zip(kj).map(|(a, b)| a * b).sum()).collect();
            let mx = e.iter().cloned().fold(f64::MIN, f64::max);
            let z: f64 = e.iter().map(|v| (v - mx).exp()).sum();
            for (j, v) in e.iter().enumerate() {
                col[j] += (v - mx).exp() / z;
            }
        }
        col
    }

    #[test]
    fn self_attention_matches_direct_column_sums_and_ranks_high_norm_first() {
        let c = 16;
        let mut store = ParamStore::new(4, DType::F64);
        let m = SelfAttentionScorer::new(&mut store, "s", c, &AttentionConfig::default()).unwrap();
        let f = fixture(c, 5, 5, 8);
        let got = m.scores(&f).unwrap();
        let want = direct_self_attention(&m, &f);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-10);
        }

        // Every location points along `v`; location 12 is 4x longer. With
        // v·Wqᵀ Wk·v > 0 every query's energy is largest at location 12.
        let mut trial = 0;
        let (v, gain) = loop {
            let v: Vec<f64> = fixture(c, 1, 1, 100 + trial).flatten_all().unwrap().to_vec1().unwrap();
            let vt = Tensor::from_vec(v.clone(), (c, 1), &Device::Cpu).unwrap();
            let qv = m.wq.matmul(&vt).unwrap();
            let kv = m.wk.matmul(&vt).unwrap();
            let gain = (qv * kv).unwrap().sum_all().unwrap().to_scalar::<f64>().unwrap();
            if gain > 0.05 {
                break (v, gain);
            }
            trial += 1;
        };
        assert!(gain > 0.0);
        let mut data = vec![0.0; c * 25];
        for loc in 0..25 {
            let scale = if loc == 12 { 4.0 } else { 0.5 + 0.02 * loc as f64 };
            for ch in 0..c {
                data[ch * 25 + loc] = v[ch] * scale;
            }
        }
        let f = Tensor::from_vec(data, (c, 5, 5), &Device::Cpu).unwrap();
        let got = m.scores(&f).unwrap();
        let want = direct_self_attention(&m, &f);
        assert_eq!(select_top_k(&got, 1).indices, vec![12]);
        assert_eq!(select_top_k(&want, 1).indices, vec![12]);
    }

    #[test]
    fn large_maps_keep_total_mass() {
        let c = 3;
        let mut store = ParamStore::new(4, DType::F64);
        let m = SelfAttentionScorer::new(&mut store, "s", c, &AttentionConfig::default()).unwrap();
        let f = fixture(c, 50, 60, 3);
        let got = m.scores(&f).unwrap();
        let total: f64 = got.iter().sum();
        assert!((total - 3000.0).abs() < 1e-6);
        let small = f.narrow(1, 0, 10).unwrap().narrow(2, 0, 10).unwrap();
        let a = m.scores(&small).unwrap();
        let b = direct_self_attention(&m, &small);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn spatially_symmetric_mechanisms_are_transpose_equivariant() {
        for seed in 0..5 {
            let f = fixture(6, 4, 7, seed);
            let ft = transpose_spatial(&f).unwrap();
            for (kind, m) in all_mechanisms(6) {
                if !matches!(kind, AttentionKind::SelfAttention | AttentionKind::ExternalAttention) {
                    continue;
                }
                let s = m.significance(&f, 0).unwrap();
                let st = m.significance(&ft, 0).unwrap();
                for (idx, v) in s.iter().enumerate() {
                    let t = transposed_index(idx, 4, 7);
                    assert!((v - st[t]).abs() < 1e-10, "{kind} idx {idx}");
                }
            }
        }
    }

    #[test]
    fn external_attention_mass_sums_to_memory_units() {
        let mut store = ParamStore::new(2, DType::F64);
        let cfg = AttentionConfig::with_kind(AttentionKind::ExternalAttention);
        let m = ExternalAttentionScorer::new(&mut store, "e", 5, &cfg).unwrap();
        let s = m.scores(&fixture(5, 3, 3, 1)).unwrap();
        assert!((s.iter().sum::<f64>() - cfg.memory_units as f64).abs() < 1e-9);
    }

    #[test]
    fn bam_and_triplet_scores_are_gates() {
        let f = fixture(32, 6, 5, 3);
        for (kind, m) in all_mechanisms(32) {
            if matches!(kind, AttentionKind::Bam | AttentionKind::Triplet) {
                let s = m.significance(&f, 0).unwrap();
                assert!(s.iter().all(|v| *v > 0.0 && *v < 1.0), "{kind}");
                let spread = s.iter().cloned().fold(f64::MIN, f64::max) - s.iter().cloned().fold(f64::MAX, f64::min);
                assert!(spread > 1e-6, "{kind} should not be flat on random input");
            }
        }
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("self".parse::<AttentionKind>().unwrap(), AttentionKind::SelfAttention);
        assert_eq!("BAM".parse::<AttentionKind>().unwrap(), AttentionKind::Bam);
        assert!("cbam".parse::<AttentionKind>().is_err());
        for k in AttentionKind::ALL {
            assert_eq!(k.to_string().parse::<AttentionKind>().unwrap(), k);
        }
    }
}
