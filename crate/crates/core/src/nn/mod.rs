//! A small from-scratch CNN: direct convolution, ReLU, max pooling, a dense
//! classifier and softmax cross-entropy, trained with plain minibatch SGD.
//!
//! Layers are generic over [`Real`]; the trainer stores `f32` parameters
//! while gradient checks run the very same kernels in `f64`. Every
//! reduction is accumulated in `f64` in a fixed index order.

mod layers;
mod net;
mod train;

pub use layers::{relu_backward, relu_forward, Conv2d, Dense, MaxPool, SoftmaxCrossEntropy};
pub use net::{Layer, LayerGrad, NamedLayer, Net};
pub use train::{
    evaluate, finetune_decomposed, train, write_metrics_jsonl, Evaluation, LayerMetrics,
    MetricsRecord, Schedule, TrainConfig, TrainOutcome,
};

use crate::error::{Error, Result};

/// Floating-point storage type of activations and parameters.
pub trait Real:
    num_traits::Float + std::fmt::Debug + Default + Send + Sync + 'static
{
    fn of(v: f64) -> Self;
    fn f64(self) -> f64;
}

impl Real for f32 {
    fn of(v: f64) -> Self {
        v as f32
    }

    fn f64(self) -> f64 {
        f64::from(self)
    }
}

impl Real for f64 {
    fn of(v: f64) -> Self {
        v
    }

    fn f64(self) -> f64 {
        self
    }
}

/// Batch of feature maps, `B x C x H x W` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub shape: [usize; 4],
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Tensor {
            shape,
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn new(shape: [usize; 4], data: Vec<T>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if data.len() != len {
            return Err(Error::Shape(format!(
                "tensor {shape:?} needs {len} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    /// Values per sample.
    pub fn sample_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::of(v.f64())).collect(),
        }
    }
}
