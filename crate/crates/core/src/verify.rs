//! Seeded numerical self-checks of the force gradient, the decompositions
//! and the layer kernels. `forcelr verify` runs [`run_all`].

use std::time::Instant;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::Result;
use crate::filters::{covariance_spectrum, FilterBank};
use crate::force::{
    force_gradient, reference_regularizer, reference_regularizer_gradient, ForceConfig, ForceGradient, ForceKind,
};
use crate::lowrank::{
    break_even_rank, factorize, method_error_curve, pca_factorize, split_layer, theoretical_speedup, Method,
};
use crate::matrix::{dot, norm, Matrix};
use crate::nn::{relu_backward, relu_forward, Conv2d, Dense, MaxPool, SoftmaxCrossEntropy, Tensor};
use crate::rng::{derive_seed, rng, Rng};

/// The force gradient under test; swapped out by negative controls.
pub type ForceFn = fn(&Matrix, &ForceConfig) -> ForceGradient;

#[derive(Debug, Clone, Serialize)]
pub struct PropertyResult {
    pub name: &'static str,
    pub passed: bool,
    pub instances: usize,
    /// Largest residual seen, in the units of `tolerance`.
    pub worst_residual: f64,
    pub tolerance: f64,
    /// Smallest cosine between the force and the descent direction, for
    /// the gradient-identity properties.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_cosine: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub passed: bool,
    pub properties: Vec<PropertyResult>,
}

impl VerifyReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

fn gaussian(r: &mut Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(r)).collect();
    Matrix::from_vec(rows, cols, data).expect("sizes agree")
}

fn min_pair_distance(m: &Matrix) -> f64 {
    let unit: Vec<Vec<f64>> = (0..m.rows())
        .map(|i| {
            let n = norm(m.row(i));
            m.row(i).iter().map(|x| x / n).collect()
        })
        .collect();
    let mut best = f64::INFINITY;
    for i in 0..unit.len() {
        for j in (i + 1)..unit.len() {
            let d: f64 = unit[i].iter().zip(&unit[j]).map(|(a, b)| (a - b).powi(2)).sum();
            best = best.min(d.sqrt());
        }
    }
    best
}

fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let (na, nb) = (norm(a), norm(b));
    (na > 0.0 && nb > 0.0).then(|| dot(a, b) / (na * nb))
}

struct Tally {
    worst: f64,
    min_cos: Option<f64>,
}

impl Tally {
    fn new() -> Self {
        Tally {
            worst: 0.0,
            min_cos: None,
        }
    }
    fn residual(&mut self, r: f64) {
        // NaN must fail, so it is kept rather than ignored by max()
        if r.is_nan() || r > self.worst {
            self.worst = r;
        }
    }
    fn cosine(&mut self, c: f64) {
        self.min_cos = Some(self.min_cos.map_or(c, |m: f64| m.min(c)));
    }
}

fn finish(name: &'static str, instances: usize, tolerance: f64, t: Tally, start: Instant) -> PropertyResult {
    PropertyResult {
        name,
        passed: t.worst <= tolerance,
        instances,
        worst_residual: t.worst,
        tolerance,
        min_cosine: t.min_cos,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// `|ΔW_i · w_i| / (1 + ||ΔW_i||)` on random banks, both force kinds.
pub fn perpendicularity(seed: u64, instances: usize, force: ForceFn) -> PropertyResult {
    let start = Instant::now();
    let mut r = rng(derive_seed(seed, "perpendicularity"));
    let mut t = Tally::new();
    for _ in 0..instances {
        let (n, d) = (r.gen_range(2..=32), r.gen_range(4..=64));
        let w = gaussian(&mut r, n, d);
        for kind in [ForceKind::L2, ForceKind::L1] {
            let g = force(&w, &ForceConfig::new(kind, 1.0));
            for i in 0..n {
                let unit: Vec<f64> = w.row(i).iter().map(|x| x / norm(w.row(i))).collect();
                let delta = g.delta.row(i);
                t.residual(dot(delta, &unit).abs() / (1.0 + norm(delta)));
            }
        }
    }
    finish("perpendicularity", instances, 1e-9, t, start)
}

/// Row-wise `||ΔW_i − ||W_i||² (−∂R/∂W_i)|| / (1 + ||ΔW_i||)` for the ℓ2
/// force, `R` the sum of squared distances over unordered pairs.
pub fn scale_identity_l2(seed: u64, instances: usize, force: ForceFn) -> Result<PropertyResult> {
    let start = Instant::now();
    let mut r = rng(derive_seed(seed, "scale_identity_l2"));
    let mut t = Tally::new();
    for _ in 0..instances {
        let (n, d) = (r.gen_range(2..=16), r.gen_range(4..=32));
        let w = gaussian(&mut r, n, d);
        let g = force(&w, &ForceConfig::new(ForceKind::L2, 1.0));
        let grad = reference_regularizer_gradient(&w, ForceKind::L2)?;
        for i in 0..n {
            let s = norm(w.row(i)).powi(2);
            let expect: Vec<f64> = grad.row(i).iter().map(|x| -s * x).collect();
            let delta = g.delta.row(i);
            let diff: Vec<f64> = delta.iter().zip(&expect).map(|(a, b)| a - b).collect();
            t.residual(norm(&diff) / (1.0 + norm(delta)));
            if let Some(c) = cosine(delta, &expect) {
                t.cosine(c);
            }
        }
    }
    Ok(finish("scale_identity_l2", instances, 1e-10, t, start))
}

/// `1 − cos(ΔW_i, −∂R/∂W_i)` for the ℓ1 force on banks whose normalized
/// filters are at least 1e-3 apart.
pub fn direction_l1(seed: u64, instances: usize, force: ForceFn) -> Result<PropertyResult> {
    let start = Instant::now();
    let mut r = rng(derive_seed(seed, "direction_l1"));
    let mut t = Tally::new();
    let mut done = 0;
    while done < instances {
        let (n, d) = (r.gen_range(2..=16), r.gen_range(4..=32));
        let w = gaussian(&mut r, n, d);
        if min_pair_distance(&w) <= 1e-3 {
            continue;
        }
        done += 1;
        let g = force(&w, &ForceConfig::new(ForceKind::L1, 1.0));
        let grad = reference_regularizer_gradient(&w, ForceKind::L1)?;
        for i in 0..n {
            let descent: Vec<f64> = grad.row(i).iter().map(|x| -x).collect();
            if let Some(c) = cosine(g.delta.row(i), &descent) {
                t.cosine(c);
                t.residual(1.0 - c);
            }
        }
    }
    Ok(finish("direction_l1", instances, 1e-8, t, start))
}

/// Normwise relative error `||a − b|| / max(||a||, ||b||)`.
fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Central differences of `f` around `x`.
fn numeric_grad(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> Result<f64>) -> Result<Vec<f64>> {
    let mut p = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for k in 0..x.len() {
        p[k] = x[k] + h;
        let up = f(&p)?;
        p[k] = x[k] - h;
        let down = f(&p)?;
        p[k] = x[k];
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

fn random_vec(r: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(r)).collect()
}

fn tensor(shape: [usize; 4], data: Vec<f64>) -> Tensor<f64> {
    Tensor::new(shape, data).expect("sizes agree")
}

fn probe(g: &[f64], y: &Tensor<f64>) -> f64 {
    dot(g, &y.data)
}

/// Finite-difference checks: the regularizer gradient (h = 1e-6, 1e-5
/// relative) and every layer's backward pass (h = 1e-5, 1e-4 relative).
/// The residual is the worst ratio of error to tolerance.
pub fn gradient_checks(seed: u64, instances: usize) -> Result<PropertyResult> {
    let start = Instant::now();
    let mut r = rng(derive_seed(seed, "gradient_checks"));
    let mut t = Tally::new();
    for _ in 0..instances {
        let (n, d) = (r.gen_range(2..=6), r.gen_range(4..=9));
        let w = gaussian(&mut r, n, d);
        for kind in [ForceKind::L2, ForceKind::L1] {
            let analytic = reference_regularizer_gradient(&w, kind)?;
            let numeric = numeric_grad(w.as_slice(), 1e-6, |p| {
                reference_regularizer(&Matrix::from_vec(n, d, p.to_vec())?, kind)
            })?;
            t.residual(rel_err(analytic.as_slice(), &numeric) / 1e-5);
        }
        for err in layer_errors(&mut r)? {
            t.residual(err / 1e-4);
        }
    }
    Ok(finish("gradient_checks", instances, 1.0, t, start))
}

/// Relative errors of every layer's analytic gradients on one toy case.
fn layer_errors(r: &mut Rng) -> Result<Vec<f64>> {
    const H: f64 = 1e-5;
    let mut errs = Vec::new();

    // convolution: input, weight and bias, with stride, padding and groups
    let (b, c, n, groups) = (2, 4, 6, 2);
    let (stride, pad) = (r.gen_range(1..=2), r.gen_range(0..=1));
    let xs = [b, c, 5, 5];
    let x = random_vec(r, xs.iter().product());
    let wlen = n * (c / groups) * 9;
    let conv = Conv2d::new(random_vec(r, wlen), Some(random_vec(r, n)), n, c, (3, 3), stride, pad, groups)?;
    let y = conv.forward(&tensor(xs, x.clone()))?;
    let g = random_vec(r, y.data.len());
    let (gi, gw, gb) = conv.backward(&tensor(y.shape, g.clone()), &tensor(xs, x.clone()))?;
    let fx = numeric_grad(&x, H, |p| Ok(probe(&g, &conv.forward(&tensor(xs, p.to_vec()))?)))?;
    let fw = numeric_grad(&conv.weight, H, |p| {
        let mut k = conv.clone();
        k.weight = p.to_vec();
        Ok(probe(&g, &k.forward(&tensor(xs, x.clone()))?))
    })?;
    let bias = conv.bias.clone().expect("has bias");
    let fb = numeric_grad(&bias, H, |p| {
        let mut k = conv.clone();
        k.bias = Some(p.to_vec());
        Ok(probe(&g, &k.forward(&tensor(xs, x.clone()))?))
    })?;
    errs.push(rel_err(&gi.data, &fx));
    errs.push(rel_err(&gw, &fw));
    errs.push(rel_err(&gb.expect("has bias"), &fb));

    // max pooling and ReLU: inputs kept away from ties and kinks
    let ps = [2, 3, 4, 4];
    let x: Vec<f64> = {
        let mut v: Vec<f64> = (0..ps.iter().product::<usize>()).map(|k| k as f64 * 0.01 + 0.05).collect();
        for k in (1..v.len()).rev() {
            v.swap(k, r.gen_range(0..=k));
        }
        v.iter().map(|x| if r.gen_bool(0.5) { *x } else { -*x }).collect()
    };
    let pool = MaxPool { kernel: 2, stride: 2 };
    let (y, arg) = pool.forward(&tensor(ps, x.clone()))?;
    let g = random_vec(r, y.data.len());
    let gi = pool.backward(&tensor(y.shape, g.clone()), ps, &arg);
    let fx = numeric_grad(&x, H, |p| Ok(probe(&g, &pool.forward(&tensor(ps, p.to_vec()))?.0)))?;
    errs.push(rel_err(&gi.data, &fx));
    let g = random_vec(r, x.len());
    let gi = relu_backward(&tensor(ps, g.clone()), &tensor(ps, x.clone()));
    let fx = numeric_grad(&x, H, |p| Ok(probe(&g, &relu_forward(&tensor(ps, p.to_vec())))))?;
    errs.push(rel_err(&gi.data, &fx));

    // dense
    let (inputs, outputs) = (12, 5);
    let ds = [3, 3, 2, 2];
    let x = random_vec(r, 3 * inputs);
    let dense = Dense::new(random_vec(r, inputs * outputs), random_vec(r, outputs), inputs, outputs)?;
    let y = dense.forward(&tensor(ds, x.clone()))?;
    let g = random_vec(r, y.data.len());
    let (gi, gw, gb) = dense.backward(&tensor(y.shape, g.clone()), &tensor(ds, x.clone()));
    let fx = numeric_grad(&x, H, |p| Ok(probe(&g, &dense.forward(&tensor(ds, p.to_vec()))?)))?;
    let fw = numeric_grad(&dense.weight, H, |p| {
        let mut k = dense.clone();
        k.weight = p.to_vec();
        Ok(probe(&g, &k.forward(&tensor(ds, x.clone()))?))
    })?;
    let fb = numeric_grad(&dense.bias, H, |p| {
        let mut k = dense.clone();
        k.bias = p.to_vec();
        Ok(probe(&g, &k.forward(&tensor(ds, x.clone()))?))
    })?;
    errs.push(rel_err(&gi.data, &fx));
    errs.push(rel_err(&gw, &fw));
    errs.push(rel_err(&gb, &fb));

    // softmax cross-entropy
    let ls = [4, 3, 1, 1];
    let logits = random_vec(r, 12);
    let labels: Vec<usize> = (0..4).map(|_| r.gen_range(0..3)).collect();
    let (_, gl) = SoftmaxCrossEntropy.loss(&tensor(ls, logits.clone()), &labels)?;
    let fl = numeric_grad(&logits, H, |p| Ok(SoftmaxCrossEntropy.loss(&tensor(ls, p.to_vec()), &labels)?.0))?;
    errs.push(rel_err(&gl.data, &fl));
    Ok(errs)
}

/// `||W − PCA_M(W)||_F² = (D − 1) Σ_{i>M} λ_i` on random 8x18 banks, all
/// `M`; relative to the tail, floored at 1e-12 of the total energy.
pub fn pca_tail(seed: u64, instances: usize) -> Result<PropertyResult> {
    let start = Instant::now();
    let mut r = rng(derive_seed(seed, "pca_tail"));
    let mut t = Tally::new();
    for _ in 0..instances {
        let w = gaussian(&mut r, 8, 18);
        let spectrum = covariance_spectrum(&w)?.eigenvalues;
        let total = w.frobenius_norm_sq();
        for m in 1..=8 {
            let f = pca_factorize(&w, m)?;
            let err = w.sub(&f.reconstruction())?.frobenius_norm_sq();
            let tail = 17.0 * spectrum[m..].iter().sum::<f64>();
            t.residual((err - tail).abs() / tail.max(1e-12 * total));
        }
    }
    Ok(finish("pca_tail_identity", instances, 1e-8, t, start))
}

/// PCA and SVD error curves agree; k-means never beats PCA. Curves are
/// fractions of `e_0`; tails below 1e-6 are compared absolutely (1e-14),
/// since beyond the numerical rank both are round-off.
pub fn pca_svd_kmeans(seed: u64, instances: usize) -> Result<PropertyResult> {
    let start = Instant::now();
    let mut r = rng(derive_seed(seed, "pca_svd_kmeans"));
    let mut t = Tally::new();
    let mut kmeans_ok = true;
    for k in 0..instances {
        let (n, d) = (r.gen_range(2..=12), r.gen_range(4..=30));
        let w = gaussian(&mut r, n, d);
        let pca = method_error_curve(&w, Method::Pca, 0)?;
        let svd = method_error_curve(&w, Method::Svd, 0)?;
        let km = method_error_curve(&w, Method::KMeans, derive_seed(seed, &format!("kmeans/{k}")))?;
        for m in 0..n {
            t.residual((pca[m] - svd[m]).abs() / pca[m].max(svd[m]).max(1e-6));
            kmeans_ok &= km[m] >= pca[m] - 1e-12;
        }
    }
    if !kmeans_ok {
        t.residual(f64::INFINITY);
    }
    Ok(finish("pca_equals_svd", instances, 1e-8, t, start))
}

/// The basis/combine pair reproduces the convolution with reconstructed
/// filters, and the original one at full rank for PCA and SVD.
pub fn composition(seed: u64, instances: usize) -> Result<PropertyResult> {
    let start = Instant::now();
    let mut r = rng(derive_seed(seed, "composition"));
    let mut t = Tally::new();
    for k in 0..instances {
        let (n, c) = (r.gen_range(2..=8), r.gen_range(1..=4));
        let (stride, pad) = (r.gen_range(1..=2), r.gen_range(0..=1));
        let bank = FilterBank::new(random_vec(&mut r, n * c * 9), n, c, 3, 3, 1)?;
        let xs = [2, c, 7, 7];
        let x = tensor(xs, random_vec(&mut r, xs.iter().product()));
        let bias = random_vec(&mut r, n);
        let original = Conv2d::new(bank.data().to_vec(), Some(bias.clone()), n, c, (3, 3), stride, pad, 1)?;
        let y_orig = original.forward(&x)?;
        let mat = bank.reshape_to_matrix();
        let mut ranks = vec![1, n / 2, n];
        ranks.dedup();
        for method in [Method::Pca, Method::Svd, Method::KMeans] {
            for &m in ranks.iter().filter(|&&m| m >= 1) {
                let f = factorize(&mat, method, m, derive_seed(seed, &format!("{k}")))?;
                let split = split_layer(&bank, &f)?;
                let basis = Conv2d::new(split.basis_layer.data().to_vec(), None, m, c, (3, 3), stride, pad, 1)?;
                let combine =
                    Conv2d::new(split.combine_layer.data().to_vec(), Some(bias.clone()), n, m, (1, 1), 1, 0, 1)?;
                let composed = combine.forward(&basis.forward(&x)?)?;
                let recon = Conv2d::new(f.reconstruction().as_slice().to_vec(), Some(bias.clone()), n, c, (3, 3), stride, pad, 1)?;
                t.residual(rel_err(&composed.data, &recon.forward(&x)?.data));
                if m == n && method != Method::KMeans {
                    t.residual(rel_err(&composed.data, &y_orig.data));
                }
            }
        }
    }
    Ok(finish("composition", instances, 1e-6, t, start))
}

/// The speedup of a 64x32x3x3 layer crosses 1 between `M = 52` and `53`,
/// with break-even `18432 / 352`.
pub fn speedup_threshold() -> PropertyResult {
    let start = Instant::now();
    let mut t = Tally::new();
    for (ho, wo) in [(1, 1), (13, 13), (56, 56)] {
        let above = theoretical_speedup(64, 32, 3, 3, ho, wo, 52);
        let below = theoretical_speedup(64, 32, 3, 3, ho, wo, 53);
        if !(above > 1.0 && below < 1.0) {
            t.residual(f64::INFINITY);
        }
    }
    t.residual((break_even_rank(64, 32, 3, 3) - 18432.0 / 352.0).abs());
    finish("speedup_threshold", 1, 1e-12, t, start)
}

/// Every property with the default instance counts.
pub fn run_all(seed: u64) -> Result<VerifyReport> {
    run_with(seed, force_gradient)
}

pub fn run_with(seed: u64, force: ForceFn) -> Result<VerifyReport> {
    let properties = vec![
        perpendicularity(seed, 1000, force),
        scale_identity_l2(seed, 200, force)?,
        direction_l1(seed, 200, force)?,
        gradient_checks(seed, 20)?,
        pca_tail(seed, 100)?,
        pca_svd_kmeans(seed, 100)?,
        composition(seed, 20)?,
        speedup_threshold(),
    ];
    Ok(VerifyReport {
        seed,
        passed: properties.iter().all(|p| p.passed),
        properties,
    })
}
