//! Synthetic two-domain dataset: colored shapes on a dark background (X)
//! and the same shape distribution recolored on a light background (Y).

use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rng::rng_for;

pub const TOY_SPLITS: [&str; 4] = ["trainX", "trainY", "testX", "testY"];

#[derive(Clone, Debug, PartialEq)]
pub struct ToySpec {
    pub n_train: usize,
    pub n_test: usize,
    pub image_size: usize,
    pub seed: u64,
}

impl Default for ToySpec {
    fn default() -> Self {
        Self {
            n_train: 50,
            n_test: 50,
            image_size: 64,
            seed: 0,
        }
    }
}

const X_BACKGROUND: [u8; 3] = [24, 28, 56];
const Y_BACKGROUND: [u8; 3] = [226, 212, 172];
const X_PALETTE: [[u8; 3]; 3] = [[214, 48, 44], [52, 190, 70], [60, 92, 228]];
/// Domain shift applied shape-color by shape-color.
const Y_PALETTE: [[u8; 3]; 3] = [[236, 196, 36], [186, 52, 176], [40, 176, 196]];

#[derive(Clone, Copy)]
enum Shape {
    Disc,
    Square,
    Triangle,
}

fn covers(shape: Shape, cx: f64, cy: f64, r: f64, x: f64, y: f64) -> bool {
    let (dx, dy) = (x - cx, y - cy);
    match shape {
        Shape::Disc => dx * dx + dy * dy <= r * r,
        Shape::Square => dx.abs() <= r * 0.85 && dy.abs() <= r * 0.85,
        Shape::Triangle => dy <= r * 0.8 && dy >= -r && dx.abs() <= (dy + r) * 0.6,
    }
}

/// One image of the given domain; `y_domain` swaps background and palette.
pub fn render_toy_image(rng: &mut ChaCha8Rng, size: usize, y_domain: bool) -> RgbImage {
    let (bg, palette) = if y_domain {
        (Y_BACKGROUND, Y_PALETTE)
    } else {
        (X_BACKGROUND, X_PALETTE)
    };
    let s = size as f64;
    let n_shapes = rng.random_range(1..=3);
    let shapes: Vec<(Shape, f64, f64, f64, usize)> = (0..n_shapes)
        .map(|_| {
            let shape = match rng.random_range(0..3) {
                0 => Shape::Disc,
                1 => Shape::Square,
                _ => Shape::Triangle,
            };
            let r = rng.random_range(0.1..0.22) * s;
            let cx = rng.random_range(r..s - r);
            let cy = rng.random_range(r..s - r);
            (shape, cx, cy, r, rng.random_range(0..palette.len()))
        })
        .collect();
    let mut img = RgbImage::new(size as u32, size as u32);
    for (x, y, px) in img.enumerate_pixels_mut() {
        let (fx, fy) = (f64::from(x) + 0.5, f64::from(y) + 0.5);
        let mut color = bg;
        for &(shape, cx, cy, r, c) in &shapes {
            if covers(shape, cx, cy, r, fx, fy) {
                color = palette[c];
            }
        }
        let jitter: i16 = rng.random_range(-6..=6);
        *px = Rgb(color.map(|v| (i16::from(v) + jitter).clamp(0, 255) as u8));
    }
    img
}

/// Writes `root/{trainX,trainY,testX,testY}/NNNN.png`.
pub fn generate_toy_dataset(root: &Path, spec: &ToySpec) -> Result<()> {
    for split in TOY_SPLITS {
        let dir = root.join(split);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let n = if split.starts_with("train") {
            spec.n_train
        } else {
            spec.n_test
        };
        let y_domain = split.ends_with('Y');
        for i in 0..n {
            let mut rng = rng_for(spec.seed, &format!("toy/{split}/{i}"));
            let path = dir.join(format!("{i:04}.png"));
            render_toy_image(&mut rng, spec.image_size, y_domain)
                .save(&path)
                .map_err(|e| Error::Decode {
                    path: path.clone(),
                    reason: format!("encode failed: {e}"),
                })?;
        }
    }
    Ok(())
}
