use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::rng;

/// Gaussian-bump images: every class has its own bump position on a fixed
/// circle, so datasets drawn with different seeds pose the same task.
/// Samples jitter position and width and add pixel noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub classes: usize,
    pub samples: usize,
    pub image_size: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

pub fn synthetic_blobs(cfg: &SyntheticConfig) -> Result<Dataset> {
    if cfg.classes < 2 || cfg.samples == 0 || cfg.image_size < 4 {
        return Err(Error::InvalidArgument(
            "synthetic data needs >= 2 classes, >= 1 sample and images of at least 4x4".into(),
        ));
    }
    if !(cfg.noise_sigma >= 0.0 && cfg.noise_sigma.is_finite()) {
        return Err(Error::InvalidArgument("noise_sigma must be finite and >= 0".into()));
    }
    let mut r = rng(cfg.seed);
    let size = cfg.image_size as f64;
    let mid = (size - 1.0) / 2.0;
    let radius = size / 4.0;
    let phase = std::f64::consts::FRAC_PI_4;
    let centers: Vec<(f64, f64)> = (0..cfg.classes)
        .map(|k| {
            let a = phase + std::f64::consts::TAU * k as f64 / cfg.classes as f64;
            (mid + radius * a.sin(), mid + radius * a.cos())
        })
        .collect();
    let jitter = Normal::new(0.0, 0.5).expect("valid");
    let noise = Normal::new(0.0, cfg.noise_sigma).expect("valid");
    let n = cfg.image_size;
    let mut images = Vec::with_capacity(cfg.samples * n * n);
    let mut labels = Vec::with_capacity(cfg.samples);
    for i in 0..cfg.samples {
        let label = i % cfg.classes;
        let (cy, cx) = centers[label];
        let cy = cy + jitter.sample(&mut r);
        let cx = cx + jitter.sample(&mut r);
        let width = size / 8.0 * r.gen_range(0.8..1.25);
        let amp = r.gen_range(0.7..1.0);
        for y in 0..n {
            for x in 0..n {
                let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                let v = amp * (-d2 / (2.0 * width * width)).exp() + noise.sample(&mut r);
                images.push(v as f32);
            }
        }
        labels.push(label);
    }
    Dataset::new(images, labels, [1, n, n], cfg.classes)
}
