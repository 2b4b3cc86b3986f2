//! Cross-filter low-rank approximation.
//!
//! Every filter of a layer is approximated by a combination of `M` basis
//! filters, `W ≈ combination · basis` with `combination: N x M` and
//! `basis: M x CHW`. The layer then splits into an `M`-filter convolution
//! followed by a 1x1 convolution that mixes the `M` feature maps.

mod kmeans;
mod report;
mod split;

pub use kmeans::{kmeans, KMeansResult};
pub use report::{analyze_layer, LayerRank, RankReport};
pub use split::{split_grouped_layer, split_layer, DecomposedLayer};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::covariance_spectrum;
use crate::matrix::Matrix;
use crate::svd::svd_rows;

/// Default reconstruction-error fraction that defines a layer's rank.
pub const DEFAULT_TAU: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Pca,
    Svd,
    KMeans,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pca" => Ok(Method::Pca),
            "svd" => Ok(Method::Svd),
            "kmeans" | "k-means" => Ok(Method::KMeans),
            other => Err(Error::InvalidArgument(format!("unknown decomposition method {other:?}"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Pca => "pca",
            Method::Svd => "svd",
            Method::KMeans => "kmeans",
        })
    }
}

#[derive(Debug, Clone)]
pub struct LowRankFactorization {
    pub method: Method,
    pub rank: usize,
    /// `M x D`, rows are flattened basis filters.
    pub basis: Matrix,
    /// `N x M`, entry `(n, m)` weights basis filter `m` in filter `n`.
    pub combination: Matrix,
    /// Eigenvalues (PCA) or squared singular values (SVD), descending; empty for k-means.
    pub spectrum: Vec<f64>,
    /// `e_M / e_0`.
    pub reconstruction_error_pct: f64,
}

impl LowRankFactorization {
    pub fn reconstruction(&self) -> Matrix {
        self.combination
            .matmul(&self.basis)
            .expect("factor shapes agree by construction")
    }

    pub fn n_filters(&self) -> usize {
        self.combination.rows()
    }
}

fn check_rank(mat: &Matrix, rank: usize) -> Result<()> {
    if rank == 0 || rank > mat.rows() {
        return Err(Error::InvalidArgument(format!(
            "rank must be in 1..={}, got {rank}",
            mat.rows()
        )));
    }
    Ok(())
}

/// `e_M / e_0` for `M = 1..=N` from a descending spectrum.
///
/// The tail sums are accumulated from the smallest value upwards, so the
/// last entry is exactly zero. An all-zero spectrum yields all zeros.
pub fn error_curve(spectrum: &[f64]) -> Vec<f64> {
    let n = spectrum.len();
    let mut tails = vec![0.0; n + 1];
    for i in (0..n).rev() {
        tails[i] = tails[i + 1] + spectrum[i];
    }
    let total = tails[0];
    if total <= 0.0 {
        return vec![0.0; n];
    }
    (1..=n).map(|m| tails[m] / total).collect()
}

/// Smallest `M` whose error fraction is at most `tau`.
///
/// `curve[k]` is the error fraction for `M = k + 1`. An empty curve or a
/// layer without variance gives `1`.
pub fn select_rank(curve: &[f64], tau: f64) -> usize {
    curve
        .iter()
        .position(|&e| e <= tau)
        .map_or(curve.len().max(1), |k| k + 1)
}

/// Rank from a spectrum, treating a total below `1e-15` as rank 1.
pub fn select_rank_from_spectrum(spectrum: &[f64], tau: f64) -> usize {
    let total: f64 = spectrum.iter().sum();
    if total < 1e-15 {
        return 1;
    }
    select_rank(&error_curve(spectrum), tau)
}

/// Rank-`M` projection of the columns of `mat` onto the top eigenvectors of
/// its uncentered covariance.
pub fn pca_factorize(mat: &Matrix, rank: usize) -> Result<LowRankFactorization> {
    check_rank(mat, rank)?;
    let eig = covariance_spectrum(mat)?;
    let p = eig.eigenvectors.leading_columns(rank);
    let basis = p.transpose().matmul(mat)?;
    let curve = error_curve(&eig.eigenvalues);
    Ok(LowRankFactorization {
        method: Method::Pca,
        rank,
        basis,
        combination: p,
        reconstruction_error_pct: curve[rank - 1],
        spectrum: eig.eigenvalues,
    })
}

/// Truncated SVD `W ≈ U_M Σ_M V_Mᵀ`; combination `U_M`, basis `Σ_M V_Mᵀ`.
pub fn svd_factorize(mat: &Matrix, rank: usize) -> Result<LowRankFactorization> {
    check_rank(mat, rank)?;
    let svd = svd_rows(mat, 1e-15)?;
    let (n, d) = mat.shape();
    let combination = svd.u.leading_columns(rank);
    let basis = Matrix::from_fn(rank, d, |m, k| svd.singular_values[m] * svd.vt[(m, k)]);
    let spectrum: Vec<f64> = svd.singular_values.iter().map(|s| s * s).collect();
    debug_assert_eq!(spectrum.len(), n);
    let curve = error_curve(&spectrum);
    Ok(LowRankFactorization {
        method: Method::Svd,
        rank,
        basis,
        combination,
        reconstruction_error_pct: curve[rank - 1],
        spectrum,
    })
}

/// Centroid substitution: each row is replaced by the centroid of its cluster.
pub fn kmeans_factorize(
    mat: &Matrix,
    rank: usize,
    seed: u64,
    max_iters: usize,
) -> Result<LowRankFactorization> {
    check_rank(mat, rank)?;
    let km = kmeans(mat, rank, seed, max_iters);
    let n = mat.rows();
    let mut combination = Matrix::zeros(n, rank);
    for (i, &c) in km.assignments.iter().enumerate() {
        combination[(i, c)] = 1.0;
    }
    let total = mat.frobenius_norm_sq();
    let pct = if total > 0.0 { km.inertia / total } else { 0.0 };
    Ok(LowRankFactorization {
        method: Method::KMeans,
        rank,
        basis: km.centroids,
        combination,
        spectrum: Vec::new(),
        reconstruction_error_pct: pct,
    })
}

/// Dispatches to the factorization for `method`.
pub fn factorize(
    mat: &Matrix,
    method: Method,
    rank: usize,
    seed: u64,
) -> Result<LowRankFactorization> {
    match method {
        Method::Pca => pca_factorize(mat, rank),
        Method::Svd => svd_factorize(mat, rank),
        Method::KMeans => kmeans_factorize(mat, rank, seed, 300),
    }
}

/// `e_M / e_0` for every `M` under the given method. For k-means every `M`
/// is clustered separately.
pub fn method_error_curve(mat: &Matrix, method: Method, seed: u64) -> Result<Vec<f64>> {
    match method {
        Method::Pca => Ok(error_curve(&covariance_spectrum(mat)?.eigenvalues)),
        Method::Svd => {
            let svd = svd_rows(mat, 1e-15)?;
            let sq: Vec<f64> = svd.singular_values.iter().map(|s| s * s).collect();
            Ok(error_curve(&sq))
        }
        Method::KMeans => (1..=mat.rows())
            .map(|m| kmeans_factorize(mat, m, seed, 300).map(|f| f.reconstruction_error_pct))
            .collect(),
    }
}

/// Multiply-accumulate ratio of a full convolution to its rank-`M` split.
pub fn theoretical_speedup(
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    h_out: usize,
    w_out: usize,
    m: usize,
) -> f64 {
    let (n, c, h, w, ho, wo, m) = (n as f64, c as f64, h as f64, w as f64, h_out as f64, w_out as f64, m as f64);
    (n * c * h * w * ho * wo) / (m * c * h * w * ho * wo + n * m * ho * wo)
}

/// Largest rank (as a real) at which the split still saves work: `NCHW/(CHW+N)`.
pub fn break_even_rank(n: usize, c: usize, h: usize, w: usize) -> f64 {
    let chw = (c * h * w) as f64;
    n as f64 * chw / (chw + n as f64)
}
