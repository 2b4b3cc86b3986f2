//! Symmetric eigendecomposition by cyclic Jacobi rotations.

use crate::error::{Error, Result};
use crate::matrix::Matrix;

const MAX_SWEEPS: usize = 64;

/// Eigenpairs of a symmetric matrix, sorted by descending eigenvalue.
///
/// Column `k` of `eigenvectors` pairs with `eigenvalues[k]`.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Matrix,
}

impl EigenDecomposition {
    /// Zeroes eigenvalues in `[-tol, 0)`; anything more negative is reported.
    pub fn clamp_psd(&mut self, tol: f64) -> Result<()> {
        for (k, l) in self.eigenvalues.iter_mut().enumerate() {
            if *l < 0.0 {
                if *l < -tol {
                    return Err(Error::InvalidArgument(format!(
                        "eigenvalue {k} = {l:e} is below -{tol:e}; matrix is not PSD"
                    )));
                }
                *l = 0.0;
            }
        }
        Ok(())
    }

    pub fn trace(&self) -> f64 {
        self.eigenvalues.iter().sum()
    }
}

fn off_diagonal_norm(a: &Matrix) -> f64 {
    let n = a.rows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[(i, j)] * a[(i, j)];
            }
        }
    }
    s.sqrt()
}

/// Eigendecomposition of the symmetric matrix `a`.
///
/// Sweeps cyclically over all `(p, q)` pairs until the off-diagonal
/// Frobenius norm of the rotated matrix is at most `tol · ||a||_F`.
/// Eigenvectors are sign-normalised so their largest-magnitude entry is
/// positive.
pub fn sym_eigen(a: &Matrix, tol: f64) -> Result<EigenDecomposition> {
    let n = a.rows();
    if n == 0 || a.cols() != n {
        return Err(Error::Shape(format!(
            "sym_eigen needs a non-empty square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    if !a.is_finite() {
        return Err(Error::InvalidArgument("matrix has non-finite entries".into()));
    }
    let scale = a.as_slice().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    for i in 0..n {
        for j in (i + 1)..n {
            if (a[(i, j)] - a[(j, i)]).abs() > 1e-10 * scale.max(1.0) {
                return Err(Error::InvalidArgument(format!(
                    "matrix is not symmetric at ({i}, {j})"
                )));
            }
        }
    }

    let mut m = a.clone();
    let mut v = Matrix::identity(n);
    let target = tol * a.frobenius_norm();
    let mut residual = off_diagonal_norm(&m);
    let mut sweeps = 0;
    while residual > target {
        if sweeps == MAX_SWEEPS {
            return Err(Error::NonConvergence {
                method: "jacobi eigensolver",
                sweeps,
                residual,
            });
        }
        for p in 0..n {
            for q in (p + 1)..n {
                rotate(&mut m, &mut v, p, q);
            }
        }
        sweeps += 1;
        residual = off_diagonal_norm(&m);
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].total_cmp(&m[(i, i)]).then(i.cmp(&j)));
    let eigenvalues = order.iter().map(|&i| m[(i, i)]).collect();
    let mut eigenvectors = Matrix::zeros(n, n);
    for (k, &src) in order.iter().enumerate() {
        let mut col = v.column(src);
        let lead = col
            .iter()
            .enumerate()
            .fold((0, 0.0_f64), |(bi, bv), (i, &x)| if x.abs() > bv { (i, x.abs()) } else { (bi, bv) })
            .0;
        if col[lead] < 0.0 {
            col.iter_mut().for_each(|x| *x = -*x);
        }
        for (i, x) in col.into_iter().enumerate() {
            eigenvectors[(i, k)] = x;
        }
    }
    Ok(EigenDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

/// One Jacobi rotation annihilating `m[(p, q)]`.
fn rotate(m: &mut Matrix, v: &mut Matrix, p: usize, q: usize) {
    let apq = m[(p, q)];
    if apq == 0.0 {
        return;
    }
    let n = m.rows();
    let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
    let t = if theta.abs() > 1e150 {
        0.5 / theta
    } else {
        theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
    };
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;
    for k in 0..n {
        let (kp, kq) = (m[(k, p)], m[(k, q)]);
        m[(k, p)] = c * kp - s * kq;
        m[(k, q)] = s * kp + c * kq;
    }
    for k in 0..n {
        let (pk, qk) = (m[(p, k)], m[(q, k)]);
        m[(p, k)] = c * pk - s * qk;
        m[(q, k)] = s * pk + c * qk;
    }
    m[(p, q)] = 0.0;
    m[(q, p)] = 0.0;
    for k in 0..n {
        let (kp, kq) = (v[(k, p)], v[(k, q)]);
        v[(k, p)] = c * kp - s * kq;
        v[(k, q)] = s * kp + c * kq;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng;
    use rand::Rng;

    fn random_symmetric(n: usize, seed: u64) -> Matrix {
        let mut r = rng(seed);
        let mut a = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let x: f64 = r.gen_range(-1.0..1.0);
                a[(i, j)] = x;
                a[(j, i)] = x;
            }
        }
        a
    }

    #[test]
    fn diagonal_input() {
        let a = Matrix::from_rows(&[vec![3.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 2.0]]).unwrap();
        let e = sym_eigen(&a, 1e-14).unwrap();
        assert_eq!(e.eigenvalues, vec![3.0, 2.0, 1.0]);
        assert_eq!(e.eigenvectors.column(0), vec![1.0, 0.0, 0.0]);
        assert_eq!(e.eigenvectors.column(1), vec![0.0, 0.0, 1.0]);
        assert_eq!(e.eigenvectors.column(2), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn classic_two_by_two() {
        let a = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let e = sym_eigen(&a, 1e-14).unwrap();
        assert!((e.eigenvalues[0] - 3.0).abs() < 1e-14);
        assert!((e.eigenvalues[1] - 1.0).abs() < 1e-14);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let v0 = e.eigenvectors.column(0);
        let v1 = e.eigenvectors.column(1);
        assert!((v0[0] - h).abs() < 1e-14 && (v0[1] - h).abs() < 1e-14);
        assert!((v1[0] - h).abs() < 1e-14 && (v1[1] + h).abs() < 1e-14);
    }

    #[test]
    fn random_reconstruction() {
        let a = random_symmetric(8, 11);
        let e = sym_eigen(&a, 1e-14).unwrap();
        let lambda = Matrix::from_fn(8, 8, |i, j| if i == j { e.eigenvalues[i] } else { 0.0 });
        let rec = e
            .eigenvectors
            .matmul(&lambda)
            .unwrap()
            .matmul(&e.eigenvectors.transpose())
            .unwrap();
        assert!(rec.max_abs_diff(&a) < 1e-8);
        let vtv = e.eigenvectors.transpose().matmul(&e.eigenvectors).unwrap();
        assert!(vtv.max_abs_diff(&Matrix::identity(8)) < 1e-8);
        for k in 0..8 {
            let vk = e.eigenvectors.column(k);
            let av = a.matmul(&Matrix::from_vec(8, 1, vk.clone()).unwrap()).unwrap();
            let res: f64 = av
                .as_slice()
                .iter()
                .zip(&vk)
                .map(|(x, y)| (x - e.eigenvalues[k] * y).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(res <= 1e-8 * (1.0 + e.eigenvalues[k].abs()));
        }
        assert!(e.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn trace_is_preserved() {
        for seed in 0..20 {
            let a = random_symmetric(1 + (seed as usize % 12), seed);
            let e = sym_eigen(&a, 1e-14).unwrap();
            let tr: f64 = (0..a.rows()).map(|i| a[(i, i)]).sum();
            assert!((e.trace() - tr).abs() <= 1e-9 * tr.abs().max(1.0));
        }
    }

    #[test]
    fn rejects_asymmetric() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(sym_eigen(&a, 1e-12), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn clamp_psd_zeroes_roundoff() {
        let mut e = EigenDecomposition {
            eigenvalues: vec![2.0, -1e-15],
            eigenvectors: Matrix::identity(2),
        };
        e.clamp_psd(1e-9).unwrap();
        assert_eq!(e.eigenvalues[1], 0.0);
        e.eigenvalues[1] = -1.0;
        assert!(e.clamp_psd(1e-9).is_err());
    }
}
