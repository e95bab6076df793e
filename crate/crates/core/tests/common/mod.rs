#![allow(dead_code)]

pub mod fields;
pub mod gradcheck;
pub mod oracles;
pub mod selection;

use std::path::Path;

use attncut::config::TrainConfig;
use attncut::nn::ParamStore;
use candle_core::{DType, Device, Tensor};
use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Small network that still has all five default taps.
pub fn tiny_config(image_size: usize) -> TrainConfig {
    TrainConfig {
        image_size,
        ngf: 2,
        ndf: 4,
        n_residual_blocks: 6,
        k: 8,
        nce_dim: 8,
        epochs: 1,
        checkpoint_every: 0,
        ..TrainConfig::default()
    }
}

pub fn uniform_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
}

pub fn image_batch(seed: u64, b: usize, size: usize, dtype: DType) -> Tensor {
    uniform_tensor(&mut rng(seed), &[b, 3, size, size], -1.0, 1.0).to_dtype(dtype).unwrap()
}

pub fn unit_vector(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

pub fn param_values(store: &ParamStore, name: &str) -> Vec<f64> {
    store
        .get(name)
        .unwrap_or_else(|| panic!("no parameter {name}"))
        .as_tensor()
        .flatten_all()
        .unwrap()
        .to_dtype(DType::F64)
        .unwrap()
        .to_vec1()
        .unwrap()
}

/// Writes `n` seeded noise images of edge `size` as PNG files.
pub fn write_images(dir: &Path, n: usize, size: u32, seed: u64) {
    std::fs::create_dir_all(dir).unwrap();
    let mut r = rng(seed);
    for i in 0..n {
        let img = RgbImage::from_fn(size, size, |_, _| Rgb([r.random(), r.random(), r.random()]));
        img.save(dir.join(format!("img_{i:02}.png"))).unwrap();
    }
}
