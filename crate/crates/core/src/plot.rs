//! Line-chart PNGs for loss and metric series.

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::trainer::{LossReport, LOSS_CSV};

pub const PLOT_DIR: &str = "plots";
pub const METRICS_CSV: &str = "metrics.csv";
const WIDTH: u32 = 640;
const HEIGHT: u32 = 360;
const MARGIN: u32 = 32;
const TICKS: u32 = 5;

fn draw_line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), color: Rgb<u8>) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        if (0..i64::from(img.width())).contains(&x) && (0..i64::from(img.height())).contains(&y) {
            img.put_pixel(x as u32, y as u32, color);
        }
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// White canvas, axes with tick marks, and the series as a polyline.
/// Non-finite points are skipped.
pub fn render_series(xs: &[f64], ys: &[f64]) -> Result<RgbImage> {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .map(|(x, y)| (*x, *y))
        .collect();
    if pts.is_empty() {
        return Err(Error::InvalidArgument("nothing to plot".into()));
    }
    let span = |v: &mut dyn Iterator<Item = f64>| {
        let (lo, hi) = v.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
        if hi > lo {
            (lo, hi)
        } else {
            (lo - 0.5, hi + 0.5)
        }
    };
    let (x_lo, x_hi) = span(&mut pts.iter().map(|p| p.0));
    let (y_lo, y_hi) = span(&mut pts.iter().map(|p| p.1));
    let mut img = RgbImage::from_pixel(WIDTH, HEIGHT, Rgb([255, 255, 255]));
    let axis = Rgb([60, 60, 60]);
    let (left, bottom) = (i64::from(MARGIN), i64::from(HEIGHT - MARGIN));
    let (right, top) = (i64::from(WIDTH - MARGIN), i64::from(MARGIN));
    draw_line(&mut img, (left, bottom), (right, bottom), axis);
    draw_line(&mut img, (left, bottom), (left, top), axis);
    for t in 0..=TICKS {
        let fx = left + (right - left) * i64::from(t) / i64::from(TICKS);
        let fy = bottom - (bottom - top) * i64::from(t) / i64::from(TICKS);
        draw_line(&mut img, (fx, bottom), (fx, bottom + 5), axis);
        draw_line(&mut img, (left - 5, fy), (left, fy), axis);
        draw_line(&mut img, (left + 1, fy), (right, fy), Rgb([228, 228, 228]));
    }
    let to_px = |(x, y): (f64, f64)| {
        let px = left as f64 + (x - x_lo) / (x_hi - x_lo) * (right - left) as f64;
        let py = bottom as f64 - (y - y_lo) / (y_hi - y_lo) * (bottom - top) as f64;
        (px.round() as i64, py.round() as i64)
    };
    let line = Rgb([31, 119, 180]);
    let mut prev = to_px(pts[0]);
    for p in &pts[1..] {
        let cur = to_px(*p);
        draw_line(&mut img, prev, cur, line);
        prev = cur;
    }
    Ok(img)
}

fn save(img: &RgbImage, path: &Path) -> Result<()> {
    img.save(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        reason: format!("encode failed: {e}"),
    })
}

/// One PNG per loss column (`plots/<column>.png`) plus, when the run holds a
/// `metrics.csv`, one per metric column. Existing plots are overwritten.
pub fn plot_run(run_dir: &Path) -> Result<Vec<PathBuf>> {
    if !run_dir.is_dir() {
        return Err(Error::io(
            run_dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "run directory not found"),
        ));
    }
    let csv = run_dir.join(LOSS_CSV);
    let text = std::fs::read_to_string(&csv).map_err(|e| Error::io(&csv, e))?;
    let reports = LossReport::parse_csv(&text)?;
    if reports.is_empty() {
        return Err(Error::InvalidArgument(format!("{} has no rows", csv.display())));
    }
    let out_dir = run_dir.join(PLOT_DIR);
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let steps: Vec<f64> = reports.iter().map(|r| r.step as f64).collect();
    let columns: [(&str, fn(&LossReport) -> f64); 5] = [
        ("d_loss", |r| r.d_loss),
        ("g_gan", |r| r.g_gan),
        ("nce_x", |r| r.nce_x),
        ("nce_y", |r| r.nce_y),
        ("total_g", |r| r.total_g),
    ];
    let mut written = Vec::new();
    for (name, get) in columns {
        let ys: Vec<f64> = reports.iter().map(get).collect();
        let path = out_dir.join(format!("{name}.png"));
        save(&render_series(&steps, &ys)?, &path)?;
        written.push(path);
    }
    let metrics = run_dir.join(METRICS_CSV);
    if metrics.is_file() {
        let text = std::fs::read_to_string(&metrics).map_err(|e| Error::io(&metrics, e))?;
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
        let rows: Vec<Vec<f64>> = lines
            .map(|l| l.split(',').map(|v| v.trim().parse().unwrap_or(f64::NAN)).collect())
            .collect();
        let index: Vec<f64> = (0..rows.len()).map(|i| i as f64).collect();
        for (c, name) in header.iter().enumerate() {
            let ys: Vec<f64> = rows.iter().map(|r| r.get(c).copied().unwrap_or(f64::NAN)).collect();
            if ys.iter().any(|v| v.is_finite()) {
                let path = out_dir.join(format!("metric_{}.png", name.trim()));
                save(&render_series(&index, &ys)?, &path)?;
                written.push(path);
            }
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_flat_and_sloped_series() {
        let img = render_series(&[0.0, 1.0, 2.0], &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(img.dimensions(), (WIDTH, HEIGHT));
        let sloped = render_series(&[0.0, 1.0], &[0.0, 1.0]).unwrap();
        let blue = sloped.pixels().filter(|p| p.0 == [31, 119, 180]).count();
        assert!(blue > 200);
        assert!(render_series(&[0.0], &[f64::NAN]).is_err());
    }
}
