//! Force regularization gradients and the pairwise-distance regularizers
//! they are related to.
//!
//! Each filter `W_i` is viewed through its direction `w_i = W_i/||W_i||`.
//! Every other filter pulls on it with a pairwise force `f_ji = f(w_j − w_i)`;
//! the regularization gradient keeps only the part of `S_i = Σ_j f_ji` that is
//! perpendicular to `w_i` and scales it by the filter length:
//!
//! ```text
//! ΔW_i = ||W_i|| · (S_i − (S_i · w_i) w_i)
//! ```
//!
//! so filters rotate on the hypersphere by the same angle whatever their
//! length. The update rule is `W ← W − η (∂E/∂W − λ_s ΔW)`; `λ_s > 0` pulls
//! filters together, `λ_s < 0` pushes them apart.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::{normalize_rows, NormalizedFilters, EPS_NORM};
use crate::matrix::{dot, norm, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ForceKind {
    /// `f(w_j − w_i) = w_j − w_i`
    L2,
    /// `f(w_j − w_i) = (w_j − w_i) / ||w_j − w_i||`
    L1,
}

impl std::str::FromStr for ForceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l2" => Ok(ForceKind::L2),
            "l1" => Ok(ForceKind::L1),
            other => Err(Error::InvalidArgument(format!("unknown force kind {other:?}"))),
        }
    }
}

/// Per-filter step scaler applied to the projected force.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepScaler {
    /// `||W_i||`: constant angular step.
    #[default]
    Length,
    /// `1/||W_i||`: the scaling of the true gradient of the distance regularizer.
    ReciprocalLength,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForceConfig {
    pub kind: ForceKind,
    pub lambda_s: f64,
    #[serde(default = "default_eps_dist")]
    pub eps_dist: f64,
    #[serde(default = "default_eps_norm")]
    pub eps_norm: f64,
    #[serde(default)]
    pub scaler: StepScaler,
}

fn default_eps_dist() -> f64 {
    1e-8
}

fn default_eps_norm() -> f64 {
    EPS_NORM
}

impl ForceConfig {
    pub fn new(kind: ForceKind, lambda_s: f64) -> Self {
        ForceConfig {
            kind,
            lambda_s,
            eps_dist: default_eps_dist(),
            eps_norm: default_eps_norm(),
            scaler: StepScaler::Length,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps_dist > 0.0 && self.eps_norm > 0.0) {
            return Err(Error::InvalidArgument("eps_dist and eps_norm must be positive".into()));
        }
        if !self.lambda_s.is_finite() {
            return Err(Error::InvalidArgument("lambda_s must be finite".into()));
        }
        Ok(())
    }
}

/// Regularization gradient rows `ΔW_i` and the per-row `|ΔW_i · w_i|`.
#[derive(Debug, Clone)]
pub struct ForceGradient {
    pub delta: Matrix,
    pub perp_residuals: Vec<f64>,
}

/// Force exerted on `w_i` by `w_j`.
pub fn pairwise_force(w_i: &[f64], w_j: &[f64], kind: ForceKind, eps_dist: f64) -> Vec<f64> {
    let diff: Vec<f64> = w_j.iter().zip(w_i).map(|(a, b)| a - b).collect();
    match kind {
        ForceKind::L2 => diff,
        ForceKind::L1 => {
            let d = norm(&diff);
            if d < eps_dist {
                vec![0.0; diff.len()]
            } else {
                diff.into_iter().map(|x| x / d).collect()
            }
        }
    }
}

/// Sum of the forces on every filter, `S_i = Σ_j f_ji`, over non-degenerate
/// `j` in index order. Degenerate rows get a zero sum.
fn force_sums(nf: &NormalizedFilters, kind: ForceKind, eps_dist: f64) -> Matrix {
    let (n, d) = nf.unit_rows.shape();
    let mut sums = Matrix::zeros(n, d);
    match kind {
        ForceKind::L2 => {
            // Σ_j (w_j − w_i) = (Σ_j w_j) − n_valid · w_i
            let mut total = vec![0.0; d];
            let mut n_valid = 0usize;
            for j in 0..n {
                if nf.is_degenerate(j) {
                    continue;
                }
                n_valid += 1;
                for (t, &x) in total.iter_mut().zip(nf.unit(j)) {
                    *t += x;
                }
            }
            let count = n_valid as f64;
            for i in 0..n {
                if nf.is_degenerate(i) {
                    continue;
                }
                for ((s, &t), &w) in sums.row_mut(i).iter_mut().zip(&total).zip(nf.unit(i)) {
                    *s = t - count * w;
                }
            }
        }
        ForceKind::L1 => {
            let mut diff = vec![0.0; d];
            for i in 0..n {
                if nf.is_degenerate(i) {
                    continue;
                }
                let w_i = nf.unit(i).to_vec();
                let row = sums.row_mut(i);
                for j in 0..n {
                    if j == i || nf.is_degenerate(j) {
                        continue;
                    }
                    for ((dd, a), b) in diff.iter_mut().zip(nf.unit(j)).zip(&w_i) {
                        *dd = a - b;
                    }
                    let dist = norm(&diff);
                    if dist < eps_dist {
                        continue;
                    }
                    for (s, dd) in row.iter_mut().zip(&diff) {
                        *s += dd / dist;
                    }
                }
            }
        }
    }
    sums
}

/// Force regularization gradient `ΔW` for every row of `mat`.
pub fn force_gradient(mat: &Matrix, cfg: &ForceConfig) -> ForceGradient {
    let nf = normalize_rows(mat, cfg.eps_norm);
    let sums = force_sums(&nf, cfg.kind, cfg.eps_dist);
    let (n, d) = mat.shape();
    let mut delta = Matrix::zeros(n, d);
    let mut perp_residuals = vec![0.0; n];
    for i in 0..n {
        if nf.is_degenerate(i) {
            continue;
        }
        let w = nf.unit(i);
        let s = sums.row(i);
        let along = dot(s, w);
        let scale = match cfg.scaler {
            StepScaler::Length => nf.lengths[i],
            StepScaler::ReciprocalLength => 1.0 / nf.lengths[i],
        };
        let row = delta.row_mut(i);
        for ((o, &si), &wi) in row.iter_mut().zip(s).zip(w) {
            *o = scale * (si - along * wi);
        }
        perp_residuals[i] = dot(row, w).abs();
    }
    ForceGradient {
        delta,
        perp_residuals,
    }
}

fn require_non_degenerate(mat: &Matrix) -> Result<NormalizedFilters> {
    let nf = normalize_rows(mat, EPS_NORM);
    if let Some(i) = nf.degenerate_mask.iter().position(|&d| d) {
        return Err(Error::DegenerateRow(i));
    }
    Ok(nf)
}

/// Pairwise-distance regularizer over the normalized rows, each unordered
/// pair counted once:
///
/// * `L2`: `R = ½ Σ_{i<j} ||w_i − w_j||²`
/// * `L1`: `R = Σ_{i<j} ||w_i − w_j||`
///
/// With this normalisation `ΔW_i = ||W_i||² · (−∂R/∂W_i)` holds exactly for
/// both force kinds.
pub fn reference_regularizer(mat: &Matrix, kind: ForceKind) -> Result<f64> {
    let nf = require_non_degenerate(mat)?;
    let n = mat.rows();
    let mut total = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let sq: f64 = nf
                .unit(i)
                .iter()
                .zip(nf.unit(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            total += match kind {
                ForceKind::L2 => 0.5 * sq,
                ForceKind::L1 => sq.sqrt(),
            };
        }
    }
    Ok(total)
}

/// Analytic `∂R/∂W` of [`reference_regularizer`].
///
/// Built from the chain rule through the normalisation Jacobian
/// `G_i = (I − w_iᵀ w_i)/||W_i||`, applied as an explicit `D x D` matrix.
/// At coincident directions the ℓ1 term takes the zero subgradient.
pub fn reference_regularizer_gradient(mat: &Matrix, kind: ForceKind) -> Result<Matrix> {
    let nf = require_non_degenerate(mat)?;
    let (n, d) = mat.shape();
    let mut grad = Matrix::zeros(n, d);
    for i in 0..n {
        let w_i = nf.unit(i);
        // ∂R/∂w_i
        let mut dr_dw = vec![0.0; d];
        for j in 0..n {
            if j == i {
                continue;
            }
            let f = pairwise_force(w_i, nf.unit(j), kind, 1e-15);
            for (g, fk) in dr_dw.iter_mut().zip(&f) {
                *g -= fk;
            }
        }
        let len = nf.lengths[i];
        let jac = Matrix::from_fn(d, d, |p, q| {
            let delta = if p == q { 1.0 } else { 0.0 };
            (delta - w_i[p] * w_i[q]) / len
        });
        for q in 0..d {
            grad[(i, q)] = (0..d).map(|p| dr_dw[p] * jac[(p, q)]).sum();
        }
    }
    Ok(grad)
}

/// `weights − η (loss_grad − λ_s ΔW)`.
pub fn apply_update(
    weights: &Matrix,
    loss_grad: &Matrix,
    force: &ForceGradient,
    eta: f64,
    lambda_s: f64,
) -> Result<Matrix> {
    weights.check_same_shape(loss_grad)?;
    weights.check_same_shape(&force.delta)?;
    if !(eta > 0.0) {
        return Err(Error::InvalidArgument(format!("learning rate must be positive, got {eta}")));
    }
    let data = weights
        .as_slice()
        .iter()
        .zip(loss_grad.as_slice())
        .zip(force.delta.as_slice())
        .map(|((&w, &g), &f)| w - eta * (g - lambda_s * f))
        .collect();
    Matrix::from_vec(weights.rows(), weights.cols(), data)
}

/// Mean cosine similarity over unordered pairs of non-degenerate rows.
pub fn mean_pairwise_cosine(mat: &Matrix) -> f64 {
    let nf = normalize_rows(mat, EPS_NORM);
    let n = mat.rows();
    let (mut sum, mut count) = (0.0, 0usize);
    for i in 0..n {
        for j in (i + 1)..n {
            if nf.is_degenerate(i) || nf.is_degenerate(j) {
                continue;
            }
            sum += dot(nf.unit(i), nf.unit(j));
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}
