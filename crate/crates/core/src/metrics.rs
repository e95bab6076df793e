//! FID, Inception Score and Sliced Wasserstein Distance on embedded sets.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::index::sample;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_for;

pub const DEFAULT_PROJECTIONS: usize = 128;
pub const DEFAULT_IS_SPLITS: usize = 1;
/// Diagonal jitter added to both covariances when the product is not PSD.
pub const FID_EPS: f64 = 1e-6;
const SIMPLEX_TOLERANCE: f64 = 1e-6;

/// `M × D` feature matrix produced by one embedder.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddedSet {
    pub features: DMatrix<f64>,
    pub embedder: String,
}

impl EmbeddedSet {
    pub fn new(features: DMatrix<f64>, embedder: impl Into<String>) -> Result<Self> {
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedded features".into()));
        }
        Ok(Self {
            features,
            embedder: embedder.into(),
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], embedder: impl Into<String>) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::Shape("feature rows differ in length".into()));
        }
        Self::new(DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]), embedder)
    }

    /// `data` holds `m` rows of `dim` values, row after row.
    pub fn from_row_major(data: &[f64], m: usize, dim: usize, embedder: impl Into<String>) -> Result<Self> {
        if data.len() != m * dim {
            return Err(Error::Shape(format!("{} values cannot form {m}×{dim}", data.len())));
        }
        Self::new(DMatrix::from_row_slice(m, dim, data), embedder)
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }
}

/// Sample mean and unbiased covariance of the rows.
pub fn mean_and_covariance(x: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let m = x.nrows();
    let mean = x.row_mean().transpose();
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = centered.transpose() * &centered / (m as f64 - 1.0);
    (mean, cov)
}

fn symmetric(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Principal square root of a symmetric matrix whose eigenvalues are all
/// ≥ `-tol · max|λ|`; small negative eigenvalues are clamped to zero.
fn sqrt_psd(a: &DMatrix<f64>, what: &str) -> std::result::Result<DMatrix<f64>, String> {
    let eig = SymmetricEigen::new(symmetric(a));
    let scale = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if !min.is_finite() || min < -1e-8 * scale.max(1e-300) {
        return Err(format!(
            "{what} is not positive semi-definite: min eigenvalue {min:e}, max |eigenvalue| {scale:e}, condition {:e}",
            scale / min.abs().max(f64::MIN_POSITIVE)
        ));
    }
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

/// `tr((Σa Σb)^{1/2})` via the symmetric form `(Σa^{1/2} Σb Σa^{1/2})^{1/2}`.
fn trace_sqrt_product(sa: &DMatrix<f64>, sb: &DMatrix<f64>) -> std::result::Result<f64, String> {
    let ra = sqrt_psd(sa, "first covariance")?;
    let inner = &ra * sb * &ra;
    Ok(sqrt_psd(&inner, "covariance product")?.trace())
}

fn check_pair(a: &EmbeddedSet, b: &EmbeddedSet, min_rows: usize) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!("feature dimensions differ: {} vs {}", a.dim(), b.dim())));
    }
    if a.len() < min_rows || b.len() < min_rows {
        return Err(Error::InvalidArgument(format!(
            "need at least {min_rows} samples per set, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// Fréchet distance between Gaussian fits of two embedded sets.
pub fn fid(a: &EmbeddedSet, b: &EmbeddedSet) -> Result<f64> {
    check_pair(a, b, 2)?;
    let (mu_a, sa) = mean_and_covariance(&a.features);
    let (mu_b, sb) = mean_and_covariance(&b.features);
    let diff = (&mu_a - &mu_b).norm_squared();
    let tr = match trace_sqrt_product(&sa, &sb) {
        Ok(t) => t,
        Err(first) => {
            let jitter = DMatrix::identity(sa.nrows(), sa.ncols()) * FID_EPS;
            trace_sqrt_product(&(&sa + &jitter), &(&sb + &jitter))
                .map_err(|e| Error::Numeric(format!("FID matrix square root failed ({first}); after adding {FID_EPS:e}·I: {e}")))?
        }
    };
    let value = diff + sa.trace() + sb.trace() - 2.0 * tr;
    if !value.is_finite() {
        return Err(Error::NonFinite("FID".into()));
    }
    Ok(value.max(0.0))
}

/// Inception Score: mean and population std over `splits` contiguous parts
/// of `exp(mean KL(p(y|x) ‖ p̄(y)))`.
pub fn inception_score(class_probs: &[Vec<f64>], splits: usize) -> Result<(f64, f64)> {
    let m = class_probs.len();
    if splits == 0 || splits > m {
        return Err(Error::InvalidArgument(format!("splits must be in 1..={m}, got {splits}")));
    }
    let c = class_probs[0].len();
    for (i, row) in class_probs.iter().enumerate() {
        let sum: f64 = row.iter().sum();
        if row.len() != c || row.iter().any(|p| !(0.0..=1.0 + SIMPLEX_TOLERANCE).contains(p)) {
            return Err(Error::InvalidArgument(format!("row {i} is not a probability vector")));
        }
        if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(Error::InvalidArgument(format!("row {i} sums to {sum}, expected 1")));
        }
    }
    let scores: Vec<f64> = (0..splits)
        .map(|s| {
            let part = &class_probs[s * m / splits..(s + 1) * m / splits];
            let n = part.len() as f64;
            let marginal: Vec<f64> = (0..c).map(|j| part.iter().map(|r| r[j]).sum::<f64>() / n).collect();
            let kl: f64 = part
                .iter()
                .map(|r| {
                    r.iter()
                        .zip(&marginal)
                        .filter(|(p, _)| **p > 0.0)
                        .map(|(p, q)| p * (p / q).ln())
                        .sum::<f64>()
                })
                .sum::<f64>()
                / n;
            kl.exp()
        })
        .collect();
    let mean = scores.iter().sum::<f64>() / splits as f64;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / splits as f64;
    Ok((mean, var.sqrt()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum WassersteinOrder {
    One,
    Two,
}

/// Seeded unit directions, one per row.
pub fn random_directions(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng_for(seed, "swd/directions");
    (0..n)
        .map(|_| loop {
            let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                break v.into_iter().map(|x| x / norm).collect();
            }
        })
        .collect()
}

/// Rows of the larger set subsampled (seeded, without replacement, order kept)
/// to the size of the smaller one.
fn equalize(a: &DMatrix<f64>, b: &DMatrix<f64>, seed: u64) -> (DMatrix<f64>, DMatrix<f64>) {
    let shrink = |x: &DMatrix<f64>, m: usize| {
        let mut idx = sample(&mut rng_for(seed, "swd/resample"), x.nrows(), m).into_vec();
        idx.sort_unstable();
        x.select_rows(&idx)
    };
    match a.nrows().cmp(&b.nrows()) {
        std::cmp::Ordering::Greater => (shrink(a, b.nrows()), b.clone()),
        std::cmp::Ordering::Less => (a.clone(), shrink(b, a.nrows())),
        std::cmp::Ordering::Equal => (a.clone(), b.clone()),
    }
}

/// 1-D Wasserstein distance between equal-size samples by sorted pairing.
pub fn wasserstein_1d(a: &[f64], b: &[f64], order: WassersteinOrder) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Shape(format!("sample sizes differ or are empty: {} vs {}", a.len(), b.len())));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let n = a.len() as f64;
    Ok(match order {
        WassersteinOrder::One => a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / n,
        WassersteinOrder::Two => (a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / n).sqrt(),
    })
}

pub fn swd(a: &EmbeddedSet, b: &EmbeddedSet, n_projections: usize, seed: u64) -> Result<f64> {
    swd_with_order(a, b, n_projections, seed, WassersteinOrder::Two)
}

/// Mean over random unit directions of the 1-D Wasserstein distance
/// between the projected sets.
pub fn swd_with_order(
    a: &EmbeddedSet,
    b: &EmbeddedSet,
    n_projections: usize,
    seed: u64,
    order: WassersteinOrder,
) -> Result<f64> {
    check_pair(a, b, 1)?;
    if n_projections == 0 {
        return Err(Error::InvalidArgument("n_projections must be ≥ 1".into()));
    }
    let (fa, fb) = equalize(&a.features, &b.features, seed);
    if fa.nrows() != fb.nrows() {
        return Err(Error::Shape("sample counts differ after resampling".into()));
    }
    let dirs = random_directions(n_projections, a.dim(), seed);
    let mut total = 0.0;
    for d in &dirs {
        let d = DVector::from_column_slice(d);
        let pa = &fa * &d;
        let pb = &fb * &d;
        total += wasserstein_1d(pa.as_slice(), pb.as_slice(), order)?;
    }
    Ok(total / n_projections as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleCounts {
    pub real: usize,
    pub fake: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub fid: f64,
    pub is_mean: f64,
    pub is_std: f64,
    pub swd: f64,
    pub counts: SampleCounts,
    pub embedder: String,
    pub seed: u64,
}
