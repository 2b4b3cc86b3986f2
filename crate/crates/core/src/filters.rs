//! Filter banks, their 2-D reshaping, normalisation and covariance.

use std::ops::Deref;

use crate::eigen::{sym_eigen, EigenDecomposition};
use crate::error::{Error, Result};
use crate::matrix::{norm, Matrix};

/// Default threshold under which a filter is treated as degenerate.
pub const EPS_NORM: f64 = 1e-12;

/// Weights of one convolutional layer, `N x C x H x W`, row-major.
///
/// With `groups > 1`, filters `[k·N/g, (k+1)·N/g)` belong to group `k` and
/// `channels` is the per-group input channel count.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    data: Vec<f64>,
    n_filters: usize,
    channels: usize,
    height: usize,
    width: usize,
    groups: usize,
}

/// Spatial layout of one flattened filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FilterShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl FilterShape {
    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl FilterBank {
    pub fn new(
        data: Vec<f64>,
        n_filters: usize,
        channels: usize,
        height: usize,
        width: usize,
        groups: usize,
    ) -> Result<Self> {
        if n_filters == 0 || channels == 0 || height == 0 || width == 0 || groups == 0 {
            return Err(Error::Shape("filter bank dimensions must be positive".into()));
        }
        if n_filters % groups != 0 {
            return Err(Error::Shape(format!(
                "{n_filters} filters cannot be split into {groups} groups"
            )));
        }
        let len = [n_filters, channels, height, width]
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Shape("N·C·H·W overflows usize".into()))?;
        if data.len() != len {
            return Err(Error::Shape(format!(
                "{n_filters}x{channels}x{height}x{width} bank needs {len} values, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite weight at offset {i}")));
        }
        Ok(FilterBank {
            data,
            n_filters,
            channels,
            height,
            width,
            groups,
        })
    }

    /// Rebuilds a bank from its reshaped matrix (inverse of [`Self::reshape_to_matrix`]).
    pub fn from_matrix(mat: &Matrix, shape: FilterShape, groups: usize) -> Result<Self> {
        if mat.cols() != shape.len() {
            return Err(Error::Shape(format!(
                "matrix has {} columns but filters hold {} values",
                mat.cols(),
                shape.len()
            )));
        }
        Self::new(
            mat.as_slice().to_vec(),
            mat.rows(),
            shape.channels,
            shape.height,
            shape.width,
            groups,
        )
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn n_filters(&self) -> usize {
        self.n_filters
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn filter_shape(&self) -> FilterShape {
        FilterShape {
            channels: self.channels,
            height: self.height,
            width: self.width,
        }
    }

    pub fn filters_per_group(&self) -> usize {
        self.n_filters / self.groups
    }

    /// All filters as an `N x CHW` matrix, one `(c, h, w)`-ordered row each.
    pub fn reshape_to_matrix(&self) -> FilterMatrix {
        let d = self.filter_shape().len();
        FilterMatrix {
            matrix: Matrix::from_vec(self.n_filters, d, self.data.clone())
                .expect("validated at construction"),
            shape: self.filter_shape(),
            group: None,
        }
    }

    /// The rows of group `g` only.
    pub fn group_matrix(&self, g: usize) -> Result<FilterMatrix> {
        if g >= self.groups {
            return Err(Error::InvalidArgument(format!(
                "group {g} out of range for {} groups",
                self.groups
            )));
        }
        let d = self.filter_shape().len();
        let per = self.filters_per_group();
        let slice = &self.data[g * per * d..(g + 1) * per * d];
        Ok(FilterMatrix {
            matrix: Matrix::from_vec(per, d, slice.to_vec())?,
            shape: self.filter_shape(),
            group: Some(g),
        })
    }

    /// One matrix per group (a single matrix when `groups == 1`).
    pub fn group_matrices(&self) -> Vec<FilterMatrix> {
        if self.groups == 1 {
            return vec![self.reshape_to_matrix()];
        }
        (0..self.groups)
            .map(|g| self.group_matrix(g).expect("in range"))
            .collect()
    }
}

/// An `N x D` filter matrix together with the filter layout it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterMatrix {
    pub matrix: Matrix,
    pub shape: FilterShape,
    /// Source group, when taken from a grouped bank.
    pub group: Option<usize>,
}

impl FilterMatrix {
    /// Wraps a bare matrix whose rows are treated as `1 x 1 x D` filters.
    pub fn from_matrix(matrix: Matrix) -> Self {
        let shape = FilterShape {
            channels: 1,
            height: 1,
            width: matrix.cols(),
        };
        FilterMatrix {
            matrix,
            shape,
            group: None,
        }
    }

    pub fn to_bank(&self) -> Result<FilterBank> {
        FilterBank::from_matrix(&self.matrix, self.shape, 1)
    }
}

impl Deref for FilterMatrix {
    type Target = Matrix;

    fn deref(&self) -> &Matrix {
        &self.matrix
    }
}

/// Unit-length filter directions plus their original lengths.
#[derive(Debug, Clone)]
pub struct NormalizedFilters {
    pub unit_rows: Matrix,
    pub lengths: Vec<f64>,
    pub degenerate_mask: Vec<bool>,
}

impl NormalizedFilters {
    pub fn is_degenerate(&self, i: usize) -> bool {
        self.degenerate_mask[i]
    }

    pub fn unit(&self, i: usize) -> &[f64] {
        self.unit_rows.row(i)
    }
}

/// Scales each row to unit length; rows shorter than `eps_norm` are flagged
/// and left as zeros.
pub fn normalize_rows(mat: &Matrix, eps_norm: f64) -> NormalizedFilters {
    let (n, d) = mat.shape();
    let mut unit_rows = Matrix::zeros(n, d);
    let mut lengths = Vec::with_capacity(n);
    let mut degenerate_mask = Vec::with_capacity(n);
    for i in 0..n {
        let row = mat.row(i);
        let len = norm(row);
        lengths.push(len);
        let degenerate = len < eps_norm;
        degenerate_mask.push(degenerate);
        if !degenerate {
            for (u, &x) in unit_rows.row_mut(i).iter_mut().zip(row) {
                *u = x / len;
            }
        }
    }
    NormalizedFilters {
        unit_rows,
        lengths,
        degenerate_mask,
    }
}

/// Uncentered covariance `W·Wᵀ / (D − 1)` of the filter rows.
pub fn covariance(mat: &Matrix) -> Result<Matrix> {
    let (n, d) = mat.shape();
    if d < 2 {
        return Err(Error::DegenerateDivisor(d));
    }
    let denom = (d - 1) as f64;
    let mut cov = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = crate::matrix::dot(mat.row(i), mat.row(j)) / denom;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    Ok(cov)
}

/// Default PSD tolerance used when clamping covariance eigenvalues.
pub fn psd_tolerance(cov: &Matrix) -> f64 {
    let trace: f64 = (0..cov.rows()).map(|i| cov[(i, i)]).sum();
    1e-9 * trace.max(f64::MIN_POSITIVE)
}

/// Eigenpairs of the filter covariance with round-off negatives clamped to 0.
pub fn covariance_spectrum(mat: &Matrix) -> Result<EigenDecomposition> {
    let cov = covariance(mat)?;
    let mut eig = sym_eigen(&cov, 1e-15)?;
    eig.clamp_psd(psd_tolerance(&cov))?;
    Ok(eig)
}
