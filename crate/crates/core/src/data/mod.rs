//! Datasets: IDX (MNIST-style) files and seeded synthetic blob images.

mod idx;
mod synthetic;

pub use idx::{read_idx, read_idx_dataset, write_idx, IdxArray};
pub use synthetic::{synthetic_blobs, SyntheticConfig};

use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Labelled images, `n x C x H x W` stored as `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Vec<f32>,
    pub labels: Vec<usize>,
    pub shape: [usize; 3],
    pub classes: usize,
}

impl Dataset {
    pub fn new(images: Vec<f32>, labels: Vec<usize>, shape: [usize; 3], classes: usize) -> Result<Self> {
        let per: usize = shape.iter().product();
        if per == 0 || images.len() != labels.len() * per {
            return Err(Error::Shape(format!(
                "{} pixels for {} samples of shape {shape:?}",
                images.len(),
                labels.len()
            )));
        }
        if labels.is_empty() {
            return Err(Error::InvalidArgument("dataset is empty".into()));
        }
        if let Some(l) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::InvalidArgument(format!("label {l} >= {classes} classes")));
        }
        Ok(Dataset {
            images,
            labels,
            shape,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_len(&self) -> usize {
        self.shape.iter().product()
    }

    /// The samples at `indices` as one batch.
    pub fn batch(&self, indices: &[usize]) -> (Tensor<f32>, Vec<usize>) {
        let per = self.sample_len();
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            data.extend_from_slice(&self.images[i * per..(i + 1) * per]);
        }
        let [c, h, w] = self.shape;
        (
            Tensor {
                shape: [indices.len(), c, h, w],
                data,
            },
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }
}
