//! Straight-line reference implementations of the evaluation metrics.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::rng;

pub fn random_rows(seed: u64, m: usize, d: usize, scale: f64, shift: f64) -> Vec<Vec<f64>> {
    let mut r = rng(seed);
    (0..m)
        .map(|_| (0..d).map(|j| scale * r.random_range(-1.0..1.0) * (1.0 + j as f64) + shift).collect())
        .collect()
}

pub fn mean_cov_2d(rows: &[Vec<f64>]) -> ([f64; 2], [[f64; 2]; 2]) {
    let m = rows.len() as f64;
    let mu = [rows.iter().map(|r| r[0]).sum::<f64>() / m, rows.iter().map(|r| r[1]).sum::<f64>() / m];
    let mut c = [[0.0; 2]; 2];
    for r in rows {
        for i in 0..2 {
            for j in 0..2 {
                c[i][j] += (r[i] - mu[i]) * (r[j] - mu[j]) / (m - 1.0);
            }
        }
    }
    (mu, c)
}

/// 2-D Fréchet distance with `tr((ΣaΣb)^{1/2})` from the eigenvalues of the
/// 2×2 product: for eigenvalues λ₁, λ₂ ≥ 0, `tr √(P) = √λ₁ + √λ₂`, and
/// `(√λ₁ + √λ₂)² = tr P + 2 √det P`.
pub fn fid_2d_oracle(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let (ma, sa) = mean_cov_2d(a);
    let (mb, sb) = mean_cov_2d(b);
    let p = [
        [sa[0][0] * sb[0][0] + sa[0][1] * sb[1][0], sa[0][0] * sb[0][1] + sa[0][1] * sb[1][1]],
        [sa[1][0] * sb[0][0] + sa[1][1] * sb[1][0], sa[1][0] * sb[0][1] + sa[1][1] * sb[1][1]],
    ];
    let tr_p = p[0][0] + p[1][1];
    let det_p = p[0][0] * p[1][1] - p[0][1] * p[1][0];
    let tr_sqrt = (tr_p + 2.0 * det_p.sqrt()).sqrt();
    let diff = (ma[0] - mb[0]).powi(2) + (ma[1] - mb[1]).powi(2);
    diff + sa[0][0] + sa[1][1] + sb[0][0] + sb[1][1] - 2.0 * tr_sqrt
}

/// Inception Score with one split, term by term.
pub fn is_oracle(p: &[Vec<f64>]) -> f64 {
    let m = p.len() as f64;
    let c = p[0].len();
    let marginal: Vec<f64> = (0..c).map(|j| p.iter().map(|r| r[j]).sum::<f64>() / m).collect();
    let mut kl_sum = 0.0;
    for row in p {
        for j in 0..c {
            if row[j] > 0.0 {
                kl_sum += row[j] * (row[j].ln() - marginal[j].ln());
            }
        }
    }
    (kl_sum / m).exp()
}

/// Per-projection SWD: project, sort, root-mean-square of paired gaps.
pub fn swd_oracle(a: &[Vec<f64>], b: &[Vec<f64>], dirs: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for d in dirs {
        let mut pa: Vec<f64> = a.iter().map(|r| r.iter().zip(d).map(|(x, y)| x * y).sum()).collect();
        let mut pb: Vec<f64> = b.iter().map(|r| r.iter().zip(d).map(|(x, y)| x * y).sum()).collect();
        pa.sort_by(|x, y| x.partial_cmp(y).unwrap());
        pb.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let mut sq = 0.0;
        for i in 0..pa.len() {
            sq += (pa[i] - pb[i]).powi(2);
        }
        total += (sq / pa.len() as f64).sqrt();
    }
    total / dirs.len() as f64
}

pub fn gaussian_rows(seed: u64, m: usize, shift: &[f64]) -> Vec<Vec<f64>> {
    let mut r = rng(seed);
    (0..m)
        .map(|_| shift.iter().map(|s| { let z: f64 = StandardNormal.sample(&mut r); s + z }).collect())
        .collect()
}
