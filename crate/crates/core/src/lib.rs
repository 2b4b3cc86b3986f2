//! Force regularization for convolutional filters and cross-filter low-rank
//! approximation, together with a tiny deterministic CNN to exercise both.

pub mod archive;
pub mod data;
pub mod decompose;
pub mod eigen;
pub mod error;
pub mod experiment;
pub mod filters;
pub mod force;
pub mod lowrank;
pub mod matrix;
pub mod nn;
pub mod rng;
pub mod svd;
pub mod verify;

pub use error::{Error, Result};
pub use filters::{FilterBank, FilterMatrix};
pub use force::{force_gradient, ForceConfig, ForceGradient, ForceKind, StepScaler};
pub use lowrank::{LowRankFactorization, Method};
pub use matrix::Matrix;
