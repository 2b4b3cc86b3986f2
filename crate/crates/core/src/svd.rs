//! Thin SVD by one-sided (Hestenes) Jacobi rotations of the rows.

use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};

const MAX_SWEEPS: usize = 80;

/// `a = u · diag(singular_values) · vt`, singular values descending.
///
/// For an `n x d` input `u` is `n x n` orthogonal and `vt` is `n x d`;
/// rows of `vt` belonging to zero singular values are zero.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Matrix,
    pub singular_values: Vec<f64>,
    pub vt: Matrix,
}

/// Orthogonalises the rows of `a` pairwise. After convergence the rotated
/// rows are `σ_k v_k` and the accumulated rotation is `uᵀ`.
pub fn svd_rows(a: &Matrix, tol: f64) -> Result<Svd> {
    let (n, d) = a.shape();
    if n == 0 || d == 0 {
        return Err(Error::Shape(format!("svd of empty {n}x{d} matrix")));
    }
    let mut w = a.clone();
    let mut j = Matrix::identity(n);
    // Rows that have collapsed to round-off (n > d or rank deficiency) carry
    // no direction; their cosines are noise and must not block convergence.
    let negligible = (f64::EPSILON * a.frobenius_norm()).powi(2) * n as f64;
    let mut sweeps = 0;
    loop {
        let mut worst = 0.0_f64;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha = dot(w.row(p), w.row(p));
                let beta = dot(w.row(q), w.row(q));
                let gamma = dot(w.row(p), w.row(q));
                if alpha <= negligible || beta <= negligible {
                    continue;
                }
                let cosine = gamma.abs() / (alpha * beta).sqrt();
                worst = worst.max(cosine);
                if cosine <= tol {
                    continue;
                }
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_rows(&mut w, p, q, c, s);
                rotate_rows(&mut j, p, q, c, s);
            }
        }
        if worst <= tol {
            break;
        }
        sweeps += 1;
        if sweeps == MAX_SWEEPS {
            return Err(Error::NonConvergence {
                method: "one-sided jacobi svd",
                sweeps,
                residual: worst,
            });
        }
    }

    let norms: Vec<f64> = (0..n).map(|i| dot(w.row(i), w.row(i)).sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]).then(x.cmp(&y)));

    let mut u = Matrix::zeros(n, n);
    let mut vt = Matrix::zeros(n, d);
    let mut singular_values = Vec::with_capacity(n);
    for (k, &src) in order.iter().enumerate() {
        let sigma = norms[src];
        singular_values.push(sigma);
        // Fix the sign so the largest entry of u_k is positive.
        let col: Vec<f64> = j.row(src).to_vec();
        let lead = col
            .iter()
            .enumerate()
            .fold((0, 0.0_f64), |(bi, bv), (i, &x)| if x.abs() > bv { (i, x.abs()) } else { (bi, bv) })
            .0;
        let sign = if col[lead] < 0.0 { -1.0 } else { 1.0 };
        for (i, x) in col.iter().enumerate() {
            u[(i, k)] = sign * x;
        }
        if sigma > 0.0 {
            for (dst, x) in vt.row_mut(k).iter_mut().zip(w.row(src)) {
                *dst = sign * x / sigma;
            }
        }
    }
    Ok(Svd {
        u,
        singular_values,
        vt,
    })
}

fn rotate_rows(m: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    let cols = m.cols();
    let data = m.as_mut_slice();
    let (head, tail) = data.split_at_mut(q * cols);
    let rp = &mut head[p * cols..(p + 1) * cols];
    let rq = &mut tail[..cols];
    for (x, y) in rp.iter_mut().zip(rq.iter_mut()) {
        let (a, b) = (*x, *y);
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}
