//! Unpaired image folders, deterministic preprocessing and batching.

use std::fs;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use image::imageops::FilterType;
use image::{ImageReader, RgbImage};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::rng_for;

pub const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];
pub const MIN_IMAGE_SIZE: usize = 8;

/// Train-time random crops resize the shorter edge to `size * 286 / 256` first.
const CROP_MARGIN: (usize, usize) = (286, 256);

fn is_image(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

/// PNG/JPEG files directly inside `dir`, sorted by path.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && is_image(&path) {
            paths.push(path);
        }
    }
    if paths.is_empty() {
        return Err(Error::EmptyDomain(dir.to_path_buf()));
    }
    paths.sort();
    Ok(paths)
}

/// Maps a pixel value in `[0, 255]` to `[-1, 1]`.
pub fn normalize_value(v: f64) -> Result<f64> {
    if !(0.0..=255.0).contains(&v) {
        return Err(Error::InvalidArgument(format!("pixel value {v} outside [0, 255]")));
    }
    Ok(v / 127.5 - 1.0)
}

pub fn normalize_image(pixels: &[f64]) -> Result<Vec<f64>> {
    pixels.iter().map(|v| normalize_value(*v)).collect()
}

pub fn denormalize_value(v: f64) -> f64 {
    (v + 1.0) * 127.5
}

pub fn denormalize_to_u8(v: f64) -> u8 {
    denormalize_value(v).round().clamp(0.0, 255.0) as u8
}

pub fn rgb_to_tensor(img: &RgbImage) -> Result<Tensor> {
    let (w, h) = img.dimensions();
    let (w, h) = (w as usize, h as usize);
    let raw = img.as_raw();
    let mut data = vec![0f32; 3 * h * w];
    for (i, px) in raw.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * h * w + i] = f32::from(px[c]) / 127.5 - 1.0;
        }
    }
    Ok(Tensor::from_vec(data, (3, h, w), &Device::Cpu)?)
}

/// `3 × H × W` tensor in `[-1, 1]` → 8-bit RGB.
pub fn tensor_to_rgb(t: &Tensor) -> Result<RgbImage> {
    let (c, h, w) = t.dims3()?;
    if c != 3 {
        return Err(Error::Shape(format!("expected 3 channels, got {c}")));
    }
    let v = t.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
    let mut img = RgbImage::new(w as u32, h as u32);
    for (i, px) in img.pixels_mut().enumerate() {
        for ch in 0..3 {
            px[ch] = denormalize_to_u8(v[ch * h * w + i]);
        }
    }
    Ok(img)
}

pub fn decode_rgb(path: &Path) -> Result<RgbImage> {
    let decode_err = |reason: String| Error::Decode {
        path: path.to_path_buf(),
        reason,
    };
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    Ok(reader.decode().map_err(|e| decode_err(e.to_string()))?.to_rgb8())
}

pub fn save_png(t: &Tensor, path: &Path) -> Result<()> {
    tensor_to_rgb(t)?.save(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        reason: format!("encode failed: {e}"),
    })
}

fn resize_shorter_edge(img: &RgbImage, edge: usize) -> RgbImage {
    let (w, h) = img.dimensions();
    let scale = edge as f64 / w.min(h) as f64;
    let nw = ((w as f64 * scale).round() as u32).max(edge as u32);
    let nh = ((h as f64 * scale).round() as u32).max(edge as u32);
    image::imageops::resize(img, nw, nh, FilterType::Triangle)
}

/// Shorter edge resized to `size`, then the central `size × size` square.
pub fn center_crop_resize(img: &RgbImage, size: usize) -> RgbImage {
    let r = resize_shorter_edge(img, size);
    let (w, h) = r.dimensions();
    let (x0, y0) = ((w - size as u32) / 2, (h - size as u32) / 2);
    image::imageops::crop_imm(&r, x0, y0, size as u32, size as u32).to_image()
}

fn random_crop_resize(img: &RgbImage, size: usize, rng: &mut impl Rng) -> RgbImage {
    let load = size * CROP_MARGIN.0 / CROP_MARGIN.1;
    let r = resize_shorter_edge(img, load);
    let (w, h) = r.dimensions();
    let x0 = rng.random_range(0..=(w - size as u32));
    let y0 = rng.random_range(0..=(h - size as u32));
    image::imageops::crop_imm(&r, x0, y0, size as u32, size as u32).to_image()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Domain {
    X,
    Y,
}

/// Two independent, unpaired image lists. Immutable after construction.
#[derive(Clone, Debug)]
pub struct UnpairedDataset {
    pub domain_x_paths: Vec<PathBuf>,
    pub domain_y_paths: Vec<PathBuf>,
    pub image_size: usize,
    pub seed: u64,
    pub random_crop: bool,
}

pub fn load_unpaired_dataset(root_x: &Path, root_y: &Path, image_size: usize, seed: u64) -> Result<UnpairedDataset> {
    UnpairedDataset::load(root_x, root_y, image_size, seed)
}

impl UnpairedDataset {
    pub fn load(root_x: &Path, root_y: &Path, image_size: usize, seed: u64) -> Result<Self> {
        if image_size < MIN_IMAGE_SIZE {
            return Err(Error::Config(format!("image_size must be ≥ {MIN_IMAGE_SIZE}, got {image_size}")));
        }
        let domain_x_paths = list_images(root_x)?;
        let domain_y_paths = list_images(root_y)?;
        for p in domain_x_paths.iter().chain(&domain_y_paths) {
            ImageReader::open(p)
                .map_err(|e| Error::io(p, e))?
                .with_guessed_format()
                .map_err(|e| Error::io(p, e))?
                .into_dimensions()
                .map_err(|e| Error::Decode {
                    path: p.clone(),
                    reason: e.to_string(),
                })?;
        }
        Ok(Self {
            domain_x_paths,
            domain_y_paths,
            image_size,
            seed,
            random_crop: false,
        })
    }

    pub fn with_random_crop(mut self, on: bool) -> Self {
        self.random_crop = on;
        self
    }

    pub fn len_x(&self) -> usize {
        self.domain_x_paths.len()
    }

    pub fn len_y(&self) -> usize {
        self.domain_y_paths.len()
    }

    /// An epoch walks every X image once, last batch possibly short.
    pub fn steps_per_epoch(&self, batch_size: usize) -> usize {
        self.len_x().div_ceil(batch_size.max(1))
    }

    /// Independent permutations of X and Y for `epoch`.
    pub fn epoch_order(&self, epoch: u64) -> (Vec<usize>, Vec<usize>) {
        let mut xs: Vec<usize> = (0..self.len_x()).collect();
        let mut ys: Vec<usize> = (0..self.len_y()).collect();
        xs.shuffle(&mut rng_for(self.seed, &format!("epoch{epoch}/x")));
        ys.shuffle(&mut rng_for(self.seed, &format!("epoch{epoch}/y")));
        (xs, ys)
    }

    /// Indices served at global step `step`.
    pub fn batch_indices(&self, step: u64, batch_size: usize) -> (u64, Vec<usize>, Vec<usize>) {
        let b = batch_size.max(1);
        let spe = self.steps_per_epoch(b) as u64;
        let epoch = step / spe;
        let pos = (step % spe) as usize;
        let (xs, ys) = self.epoch_order(epoch);
        let start = pos * b;
        let end = (start + b).min(xs.len());
        let xi = xs[start..end].to_vec();
        let yi = (start..end).map(|i| ys[i % ys.len()]).collect();
        (epoch, xi, yi)
    }

    pub fn load_item(&self, domain: Domain, index: usize, epoch: u64) -> Result<Tensor> {
        let path = match domain {
            Domain::X => &self.domain_x_paths[index],
            Domain::Y => &self.domain_y_paths[index],
        };
        let img = decode_rgb(path)?;
        let img = if self.random_crop {
            let mut rng = rng_for(self.seed, &format!("crop/{epoch}/{domain:?}/{index}"));
            random_crop_resize(&img, self.image_size, &mut rng)
        } else {
            center_crop_resize(&img, self.image_size)
        };
        rgb_to_tensor(&img)
    }

    /// `(x, y)` batches for global step `step`, each `B × 3 × S × S`.
    pub fn batch(&self, step: u64, batch_size: usize, dtype: DType) -> Result<(Tensor, Tensor)> {
        let (epoch, xi, yi) = self.batch_indices(step, batch_size);
        let load = |domain, idx: &[usize]| -> Result<Tensor> {
            let items = idx
                .iter()
                .map(|i| self.load_item(domain, *i, epoch))
                .collect::<Result<Vec<_>>>()?;
            Ok(Tensor::stack(&items, 0)?.to_dtype(dtype)?)
        };
        Ok((load(Domain::X, &xi)?, load(Domain::Y, &yi)?))
    }
}

/// Loads every image of a folder as one `M × 3 × S × S` tensor (center crop).
pub fn load_folder(dir: &Path, image_size: usize) -> Result<(Vec<PathBuf>, Tensor)> {
    let paths = list_images(dir)?;
    let items = paths
        .iter()
        .map(|p| rgb_to_tensor(&center_crop_resize(&decode_rgb(p)?, image_size)))
        .collect::<Result<Vec<_>>>()?;
    Ok((paths, Tensor::stack(&items, 0)?))
}
