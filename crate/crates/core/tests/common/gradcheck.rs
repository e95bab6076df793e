//! Central finite-difference checks of the contrastive losses in float64.

use attncut::attention::{AttentionConfig, AttentionKind, AttentionSampler, PatchSelection};
use attncut::contrastive::{info_nce_tensor, patch_nce_from_features, PatchNceConfig, ProjectionHeads};
use attncut::generator::{FeatureStack, TapLayer, TapMeta};
use attncut::nn::ParamStore;
use candle_core::{DType, Device, Tensor, Var};
use rand::seq::IndexedRandom;
use rand::Rng;

use super::{rng, uniform_tensor, unit_vector};

pub const STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
/// Bound on the rounding error of one loss evaluation, in units of `ε·|L|`.
const ROUNDING_ULPS: f64 = 8.0;

#[derive(Debug, Default, Clone, Copy)]
pub struct GradCheck {
    pub checked: usize,
    /// Worst relative error over coordinates where it is resolvable.
    pub max_rel_err: f64,
    /// Coordinates whose derivative is below the difference quotient's
    /// rounding floor; these must agree to within that floor instead.
    pub below_floor: usize,
    pub floor_violations: usize,
}

impl GradCheck {
    fn record(&mut self, analytic: f64, numeric: f64, loss: f64) {
        let floor = ROUNDING_ULPS * f64::EPSILON * loss.abs().max(1.0) / STEP;
        let scale = analytic.abs().max(numeric.abs());
        let diff = (analytic - numeric).abs();
        if scale * REL_TOL < floor {
            self.below_floor += 1;
            if diff > floor {
                self.floor_violations += 1;
            }
        } else {
            self.max_rel_err = self.max_rel_err.max(diff / scale);
        }
        self.checked += 1;
    }

    pub fn merge(&mut self, other: GradCheck) {
        self.checked += other.checked;
        self.max_rel_err = self.max_rel_err.max(other.max_rel_err);
        self.below_floor += other.below_floor;
        self.floor_violations += other.floor_violations;
    }

    pub fn passes(&self) -> bool {
        self.checked > 0 && self.max_rel_err <= REL_TOL && self.floor_violations == 0
    }
}

fn set_entry(var: &Var, base: &[f64], idx: usize, value: f64) {
    let mut v = base.to_vec();
    v[idx] = value;
    var.set(&Tensor::from_vec(v, var.shape(), var.device()).unwrap()).unwrap();
}

fn values(var: &Var) -> Vec<f64> {
    var.as_tensor().flatten_all().unwrap().to_vec1().unwrap()
}

/// Compares the autograd derivative of `loss` with a central difference for
/// every listed `(var, flat index)` coordinate.
fn check_coordinates(loss: &dyn Fn() -> Tensor, coords: &[(&Var, usize)]) -> GradCheck {
    let value = loss();
    let at = value.to_scalar::<f64>().unwrap();
    let grads = value.backward().unwrap();
    let mut out = GradCheck::default();
    for (var, idx) in coords {
        let g: Vec<f64> = grads
            .get(var.as_tensor())
            .map(|g| g.flatten_all().unwrap().to_vec1().unwrap())
            .unwrap_or_else(|| vec![0.0; var.elem_count()]);
        let base = values(var);
        set_entry(var, &base, *idx, base[*idx] + STEP);
        let up = loss().to_scalar::<f64>().unwrap();
        set_entry(var, &base, *idx, base[*idx] - STEP);
        let down = loss().to_scalar::<f64>().unwrap();
        set_entry(var, &base, *idx, base[*idx]);
        out.record(g[*idx], (up - down) / (2.0 * STEP), at);
    }
    out
}

/// InfoNCE w.r.t. every query coordinate and a few key coordinates.
pub fn info_nce_fixture(seed: u64) -> GradCheck {
    let mut r = rng(seed);
    let d = r.random_range(4..24);
    let n = r.random_range(1..12);
    let tau = r.random_range(0.05..1.0);
    let dev = Device::Cpu;
    let var = |v: Vec<f64>, shape: &[usize]| Var::from_tensor(&Tensor::from_vec(v, shape, &dev).unwrap()).unwrap();
    let q = var(unit_vector(&mut r, d), &[d]);
    let p = var(unit_vector(&mut r, d), &[d]);
    let negs: Vec<f64> = (0..n).flat_map(|_| unit_vector(&mut r, d)).collect();
    let negs = var(negs, &[n, d]);
    let loss = || info_nce_tensor(q.as_tensor(), p.as_tensor(), negs.as_tensor(), tau).unwrap();
    let mut coords: Vec<(&Var, usize)> = (0..d).map(|i| (&q, i)).collect();
    coords.push((&p, r.random_range(0..d)));
    coords.push((&negs, r.random_range(0..n * d)));
    check_coordinates(&loss, &coords)
}

/// Patch contrastive loss w.r.t. translated-image features (the query side)
/// and projection-head parameters, for random feature stacks over five taps.
pub fn patch_nce_fixture(seed: u64) -> GradCheck {
    let mut r = rng(seed);
    let channels = [3usize, 4, 6, 6, 6];
    let sizes = [8usize, 8, 4, 2, 2];
    let taps = [TapLayer::InputRgb, TapLayer::Down(1), TapLayer::Down(2), TapLayer::Res(1), TapLayer::Res(5)];
    let meta: Vec<TapMeta> = taps
        .iter()
        .zip(channels)
        .map(|(t, c)| TapMeta {
            layer: *t,
            receptive_field: 1,
            stride: 1,
            channels: c,
        })
        .collect();
    let source = FeatureStack {
        maps: channels
            .iter()
            .zip(sizes)
            .map(|(&c, s)| uniform_tensor(&mut r, &[1, c, s, s], -1.0, 1.0))
            .collect(),
        meta: meta.clone(),
    };
    let translated_vars: Vec<Var> = channels
        .iter()
        .zip(sizes)
        .map(|(&c, s)| Var::from_tensor(&uniform_tensor(&mut r, &[1, c, s, s], -1.0, 1.0)).unwrap())
        .collect();
    let translated = FeatureStack {
        maps: translated_vars.iter().map(|v| v.as_tensor().clone()).collect(),
        meta,
    };
    let mut head_store = ParamStore::new(seed, DType::F64);
    let heads = ProjectionHeads::new(&mut head_store, &channels, 8, 0.5).unwrap();
    // Zero biases let a row with every hidden unit dead project to exactly 0,
    // where L2 normalisation is not differentiable.
    for (name, var) in head_store.iter() {
        if name.ends_with(".bias") {
            var.set(&uniform_tensor(&mut r, var.dims(), -0.5, 0.5)).unwrap();
        }
    }
    let mut attn_store = ParamStore::new(seed, DType::F64);
    let sampler = AttentionSampler::new(
        AttentionConfig::with_kind(AttentionKind::SelfAttention),
        &channels,
        &mut attn_store,
    )
    .unwrap();
    let cfg = PatchNceConfig {
        k: 4,
        tau: r.random_range(0.07..0.5),
    };
    let loss = || {
        patch_nce_from_features(&source, &translated, &heads, &sampler, &cfg, seed)
            .unwrap()
            .loss
    };
    let selections = patch_nce_from_features(&source, &translated, &heads, &sampler, &cfg, seed)
        .unwrap()
        .selections;
    let hinges = Hinges::new(&head_store, &source, &translated, &selections[0]);
    let head_vars: Vec<(&String, &Var)> = head_store.iter().collect();
    let mut coords = Vec::new();
    let (mut queries, mut params) = (0, 0);
    while queries < 10 || params < 10 {
        if queries < 10 {
            let l = r.random_range(0..translated_vars.len());
            let idx = r.random_range(0..translated_vars[l].elem_count());
            if hinges.query_is_smooth(l, idx) {
                coords.push((&translated_vars[l], idx));
                queries += 1;
            }
        }
        if params < 10 {
            let (name, var) = *head_vars.choose(&mut r).unwrap();
            let idx = r.random_range(0..var.elem_count());
            if hinges.param_is_smooth(name, idx) {
                coords.push((var, idx));
                params += 1;
            }
        }
    }
    check_coordinates(&loss, &coords)
}

/// fc1 pre-activations of every projected row, used to keep each finite
/// difference stencil on one side of every ReLU hinge. A central difference
/// across a hinge averages two one-sided slopes and is no oracle there.
struct Hinges {
    layers: Vec<HingeLayer>,
}

struct HingeLayer {
    weight: Vec<Vec<f64>>,
    side: usize,
    /// `(translated?, spatial index, features, pre-activations)`.
    rows: Vec<(bool, usize, Vec<f64>, Vec<f64>)>,
}

impl Hinges {
    fn new(heads: &ParamStore, source: &FeatureStack, translated: &FeatureStack, selection: &PatchSelection) -> Self {
        let layers = selection
            .layers
            .iter()
            .enumerate()
            .map(|(l, chosen)| {
                let weight: Vec<Vec<f64>> = heads
                    .get(&format!("heads.l{l}.fc1.weight"))
                    .unwrap()
                    .as_tensor()
                    .to_vec2()
                    .unwrap();
                let bias: Vec<f64> = heads.get(&format!("heads.l{l}.fc1.bias")).unwrap().as_tensor().to_vec1().unwrap();
                let side = source.maps[l].dim(3).unwrap();
                let mut rows = Vec::new();
                for (is_query, stack) in [(false, source), (true, translated)] {
                    let map: Vec<Vec<f64>> = stack.maps[l].get(0).unwrap().flatten_from(1).unwrap().to_vec2().unwrap();
                    for &s in &chosen.indices {
                        let x: Vec<f64> = map.iter().map(|ch| ch[s]).collect();
                        let pre = weight
                            .iter()
                            .zip(&bias)
                            .map(|(w, b)| b + w.iter().zip(&x).map(|(a, c)| a * c).sum::<f64>())
                            .collect();
                        rows.push((is_query, s, x, pre));
                    }
                }
                HingeLayer { weight, side, rows }
            })
            .collect();
        Self { layers }
    }

    fn query_is_smooth(&self, l: usize, idx: usize) -> bool {
        let layer = &self.layers[l];
        let area = layer.side * layer.side;
        let (c, s) = (idx / area, idx % area);
        layer
            .rows
            .iter()
            .filter(|row| row.0 && row.1 == s)
            .all(|row| row.3.iter().zip(&layer.weight).all(|(p, w)| p.abs() > STEP * w[c].abs()))
    }

    fn param_is_smooth(&self, name: &str, idx: usize) -> bool {
        let l: usize = name["heads.l".len()..].split('.').next().unwrap().parse().unwrap();
        let layer = &self.layers[l];
        if name.ends_with("fc1.weight") {
            let inputs = layer.weight[0].len();
            let (j, c) = (idx / inputs, idx % inputs);
            layer.rows.iter().all(|row| row.3[j].abs() > STEP * row.2[c].abs())
        } else if name.ends_with("fc1.bias") {
            layer.rows.iter().all(|row| row.3[idx].abs() > STEP)
        } else {
            true
        }
    }
}
