use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Net, Real};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::force::{force_gradient, mean_pairwise_cosine, reference_regularizer, ForceConfig, ForceKind};
use crate::lowrank::{select_rank_from_spectrum, DEFAULT_TAU};
use crate::matrix::Matrix;
use crate::rng::{derive_seed, rng};

/// Step decay: the rate is multiplied by `gamma` every `step_size` steps
/// (`step_size == 0` keeps it constant).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    #[serde(default)]
    pub step_size: usize,
    #[serde(default = "one")]
    pub gamma: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            step_size: 0,
            gamma: 1.0,
        }
    }
}

impl Schedule {
    pub fn rate(&self, eta: f64, step: usize) -> f64 {
        if self.step_size == 0 {
            eta
        } else {
            eta * self.gamma.powi((step / self.step_size) as i32)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub eta: f64,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default)]
    pub force: Option<ForceConfig>,
    /// Convolutions the force acts on; all of them when unset.
    #[serde(default)]
    pub force_layers: Option<Vec<String>>,
    pub batch_size: usize,
    pub max_steps: usize,
    pub eval_every: usize,
    pub seed: u64,
    #[serde(default = "default_tau")]
    pub rank_tau: f64,
}

fn default_weight_decay() -> f64 {
    1e-4
}

fn default_tau() -> f64 {
    DEFAULT_TAU
}

impl TrainConfig {
    pub fn new(eta: f64, batch_size: usize, max_steps: usize, eval_every: usize, seed: u64) -> Self {
        TrainConfig {
            eta,
            schedule: Schedule::default(),
            weight_decay: default_weight_decay(),
            force: None,
            force_layers: None,
            batch_size,
            max_steps,
            eval_every,
            seed,
            rank_tau: DEFAULT_TAU,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidArgument(format!("eta must be positive, got {}", self.eta)));
        }
        if self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::InvalidArgument("batch_size and eval_every must be >= 1".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidArgument("weight_decay must be >= 0".into()));
        }
        if let Some(f) = &self.force {
            f.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerMetrics {
    pub layer: String,
    pub full_rank: usize,
    pub rank: usize,
    /// Pairwise-distance regularizer of the layer's filters; `None` when a
    /// filter has zero length.
    pub regularizer: Option<f64>,
    pub mean_cosine: f64,
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: usize,
    pub learning_rate: f64,
    /// Mean minibatch loss since the previous record.
    pub train_loss: Option<f64>,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub layers: Vec<LayerMetrics>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: Net<f32>,
    pub log: Vec<MetricsRecord>,
}

impl TrainOutcome {
    pub fn final_record(&self) -> &MetricsRecord {
        self.log.last().expect("the log always has a step-0 record")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
}

/// Mean loss and accuracy over the whole dataset.
pub fn evaluate<T: Real>(net: &Net<T>, data: &Dataset) -> Result<Evaluation> {
    let mut loss = 0.0;
    let mut correct = 0usize;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(256) {
        let (x, labels) = data.batch(chunk);
        let x = x.cast::<T>();
        let logits = net.forward(&x)?;
        let (l, _) = super::SoftmaxCrossEntropy.loss(&logits, &labels)?;
        loss += l * chunk.len() as f64;
        let k = logits.sample_len();
        for (b, &label) in labels.iter().enumerate() {
            let row = &logits.data[b * k..(b + 1) * k];
            let mut best = 0;
            for j in 1..k {
                if row[j] > row[best] {
                    best = j;
                }
            }
            correct += usize::from(best == label);
        }
    }
    Ok(Evaluation {
        loss: loss / data.len() as f64,
        accuracy: correct as f64 / data.len() as f64,
    })
}

fn layer_metrics(net: &Net<f32>, tau: f64, kind: ForceKind) -> Result<Vec<LayerMetrics>> {
    let mut out = Vec::new();
    for (i, name, _) in net.conv_layers() {
        let bank = net.filter_bank(i)?;
        let mat = bank.reshape_to_matrix().matrix;
        let spectrum = if bank.groups() == 1 && mat.cols() >= 2 {
            crate::filters::covariance_spectrum(&mat)?.eigenvalues
        } else {
            Vec::new()
        };
        out.push(LayerMetrics {
            layer: name.to_string(),
            full_rank: mat.rows(),
            rank: select_rank_from_spectrum(&spectrum, tau).max(1),
            regularizer: reference_regularizer(&mat, kind).ok(),
            mean_cosine: mean_pairwise_cosine(&mat),
        });
    }
    Ok(out)
}

/// Seeded minibatch SGD.
///
/// Each step applies, per parameter, `w ← w − η (∂E/∂w + wd·w − λ_s ΔW)`
/// where `ΔW` is the force regularization gradient of the convolutions
/// selected by `cfg.force` (zero elsewhere, and zero for biases, which also
/// skip weight decay). Records are logged at step 0, every `eval_every`
/// steps and at the last step; `val` defaults to the training data.
pub fn train(mut net: Net<f32>, data: &Dataset, val: Option<&Dataset>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    if data.shape != net.input || data.classes != net.classes {
        return Err(Error::Shape(format!(
            "dataset {:?} with {} classes does not fit network {:?} with {} classes",
            data.shape, data.classes, net.input, net.classes
        )));
    }
    if net.conv_layers().any(|(_, _, c)| c.groups != 1) {
        return Err(Error::InvalidArgument("the trainer supports ungrouped convolutions only".into()));
    }
    let val = val.unwrap_or(data);
    let kind = cfg.force.map_or(ForceKind::L2, |f| f.kind);
    let forced: Vec<bool> = net
        .layers
        .iter()
        .map(|l| {
            matches!(l.layer, super::Layer::Conv2d(_))
                && cfg.force.is_some()
                && cfg.force_layers.as_ref().map_or(true, |names| names.contains(&l.name))
        })
        .collect();

    let record = |net: &Net<f32>, step: usize, train_loss: Option<f64>| -> Result<MetricsRecord> {
        let ev = evaluate(net, val)?;
        Ok(MetricsRecord {
            step,
            learning_rate: cfg.schedule.rate(cfg.eta, step),
            train_loss,
            val_loss: ev.loss,
            val_accuracy: ev.accuracy,
            layers: layer_metrics(net, cfg.rank_tau, kind)?,
        })
    };

    let mut log = vec![record(&net, 0, None)?];
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut cursor = order.len();
    let mut epoch = 0u64;
    let (mut loss_sum, mut loss_count) = (0.0, 0usize);
    let shuffle_seed = derive_seed(cfg.seed, "shuffle");

    for step in 1..=cfg.max_steps {
        if cursor + cfg.batch_size > order.len() {
            order.shuffle(&mut rng(shuffle_seed.wrapping_add(epoch)));
            epoch += 1;
            cursor = 0;
        }
        let end = (cursor + cfg.batch_size).min(order.len());
        let (x, labels) = data.batch(&order[cursor..end]);
        cursor = end;

        let (loss, grads) = net.loss_and_grads(&x, &labels)?;
        if !loss.is_finite() {
            return Err(Error::Divergence {
                step,
                detail: format!("loss is {loss}"),
            });
        }
        loss_sum += loss;
        loss_count += 1;

        let lr = cfg.schedule.rate(cfg.eta, step - 1);
        for (i, g) in grads.into_iter().enumerate() {
            let Some(g) = g else { continue };
            let delta = match (forced[i], cfg.force) {
                (true, Some(fc)) => {
                    let bank = net.filter_bank(i)?;
                    Some((force_gradient(&bank.reshape_to_matrix(), &fc).delta, fc.lambda_s))
                }
                _ => None,
            };
            let (weight, bias) = net.params_mut(i).expect("layer has parameters");
            update_weights(weight, &g.weight, lr, cfg.weight_decay, delta.as_ref().map(|(d, l)| (d, *l)));
            if let (Some(b), Some(gb)) = (bias, g.bias.as_ref()) {
                for (p, gv) in b.iter_mut().zip(gb) {
                    *p = (f64::from(*p) - lr * f64::from(*gv)) as f32;
                }
            }
        }
        if !net.params_finite() {
            return Err(Error::Divergence {
                step,
                detail: "non-finite parameters after update".into(),
            });
        }

        if step % cfg.eval_every == 0 || step == cfg.max_steps {
            let mean = loss_sum / loss_count as f64;
            log.push(record(&net, step, Some(mean))?);
            loss_sum = 0.0;
            loss_count = 0;
        }
    }
    Ok(TrainOutcome { net, log })
}

fn update_weights(weight: &mut [f32], grad: &[f32], lr: f64, wd: f64, force: Option<(&Matrix, f64)>) {
    let (delta, lambda) = match force {
        Some((d, l)) => (Some(d.as_slice()), l),
        None => (None, 0.0),
    };
    for (k, (p, g)) in weight.iter_mut().zip(grad).enumerate() {
        let w = f64::from(*p);
        let f = delta.map_or(0.0, |d| d[k]);
        *p = (w - lr * (f64::from(*g) + wd * w - lambda * f)) as f32;
    }
}

/// Fine-tunes a network whose convolutions were split by low-rank
/// decomposition. Same trainer; the force stays off unless `cfg` sets it.
pub fn finetune_decomposed(net: Net<f32>, data: &Dataset, val: Option<&Dataset>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train(net, data, val, cfg)
}

/// Writes one JSON object per record.
pub fn write_metrics_jsonl(path: &Path, log: &[MetricsRecord]) -> Result<()> {
    let mut buf = Vec::new();
    for r in log {
        serde_json::to_writer(&mut buf, r).map_err(|e| Error::Format(e.to_string()))?;
        buf.push(b'\n');
    }
    crate::archive::write_atomic(path, &buf)
}

