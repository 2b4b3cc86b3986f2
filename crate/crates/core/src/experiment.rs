//! TOML experiment specs and the baseline-then-force training protocol.
//!
//! ```toml
//! seed = 7
//! taus = [0.05]
//! methods = ["pca"]
//!
//! [dataset]
//! kind = "synthetic"
//! classes = 2
//! train_samples = 1024
//! val_samples = 2048
//! image_size = 8
//! noise_sigma = 0.5
//!
//! [architecture]
//! preset = "tiny-convnet"
//!
//! [baseline]
//! eta = 0.05
//! batch_size = 32
//! max_steps = 600
//! eval_every = 100
//!
//! [force_phase]
//! eta = 0.05
//! batch_size = 32
//! max_steps = 600
//! eval_every = 100
//! kind = "l2"
//! lambda_sweep = [2e-3, 5e-3]
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::archive::{write_atomic, ModelArchive};
use crate::data::{read_idx_dataset, synthetic_blobs, Dataset, SyntheticConfig};
use crate::error::{Error, Result};
use crate::force::{ForceConfig, ForceKind, StepScaler};
use crate::lowrank::Method;
use crate::nn::{train, write_metrics_jsonl, MetricsRecord, Net, Schedule, TrainConfig};
use crate::rng::derive_seed;

pub const PRESETS: &[&str] = &["tiny-convnet"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Synthetic {
        classes: usize,
        train_samples: usize,
        val_samples: usize,
        image_size: usize,
        noise_sigma: f64,
    },
    /// Paths are relative to the spec file.
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        val_images: Option<PathBuf>,
        val_labels: Option<PathBuf>,
        classes: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureSpec {
    pub preset: String,
}

/// Training hyperparameters of one phase; the seed comes from the spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSpec {
    pub eta: f64,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    pub eval_every: usize,
}

fn default_weight_decay() -> f64 {
    1e-4
}

impl PhaseSpec {
    pub fn config(&self, seed: u64) -> TrainConfig {
        let mut c = TrainConfig::new(self.eta, self.batch_size, self.max_steps, self.eval_every, seed);
        c.schedule = self.schedule;
        c.weight_decay = self.weight_decay;
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForcePhaseSpec {
    #[serde(flatten)]
    pub phase: PhaseSpec,
    pub kind: ForceKind,
    #[serde(default)]
    pub scaler: StepScaler,
    pub lambda_sweep: Vec<f64>,
    /// Convolutions the force acts on; all when unset.
    #[serde(default)]
    pub layers: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneSpec {
    #[serde(flatten)]
    pub phase: PhaseSpec,
    #[serde(default)]
    pub force: Option<ForceConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub seed: u64,
    #[serde(default = "default_taus")]
    pub taus: Vec<f64>,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    pub dataset: DatasetSpec,
    pub architecture: ArchitectureSpec,
    pub baseline: PhaseSpec,
    pub force_phase: Option<ForcePhaseSpec>,
    pub finetune: Option<FinetuneSpec>,
    /// Directory the spec was read from; dataset paths resolve against it.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_taus() -> Vec<f64> {
    vec![crate::lowrank::DEFAULT_TAU]
}

fn default_methods() -> Vec<Method> {
    vec![Method::Pca]
}

impl ExperimentSpec {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut spec: ExperimentSpec = toml::from_str(text).map_err(|e| Error::InvalidArgument(format!("spec: {e}")))?;
        spec.base_dir = base_dir.to_path_buf();
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    pub fn validate(&self) -> Result<()> {
        if !PRESETS.contains(&self.architecture.preset.as_str()) {
            return Err(Error::InvalidArgument(format!(
                "unknown architecture preset {:?} (known: {})",
                self.architecture.preset,
                PRESETS.join(", ")
            )));
        }
        if self.taus.is_empty() || self.methods.is_empty() {
            return Err(Error::InvalidArgument("taus and methods must be non-empty".into()));
        }
        if let Some(t) = self.taus.iter().find(|t| !(0.0..1.0).contains(*t)) {
            return Err(Error::InvalidArgument(format!("tau must be in [0, 1), got {t}")));
        }
        self.baseline.config(0).validate()?;
        if let Some(f) = &self.force_phase {
            if f.lambda_sweep.is_empty() {
                return Err(Error::InvalidArgument("force_phase.lambda_sweep must be non-empty".into()));
            }
            f.phase.config(0).validate()?;
            for &l in &f.lambda_sweep {
                ForceConfig::new(f.kind, l).validate()?;
            }
        }
        if let Some(f) = &self.finetune {
            f.phase.config(0).validate()?;
        }
        if let DatasetSpec::Synthetic {
            classes,
            train_samples,
            val_samples,
            image_size,
            ..
        } = self.dataset
        {
            if classes < 2 || train_samples == 0 || val_samples == 0 || image_size < 4 {
                return Err(Error::InvalidArgument(
                    "synthetic dataset needs >= 2 classes, samples in both splits and images of at least 4x4".into(),
                ));
            }
        }
        Ok(())
    }

    /// Training and validation sets. A missing validation split for IDX data
    /// reuses the training set.
    pub fn load_data(&self) -> Result<(Dataset, Dataset)> {
        match &self.dataset {
            DatasetSpec::Synthetic {
                classes,
                train_samples,
                val_samples,
                image_size,
                noise_sigma,
            } => {
                let make = |samples, label| {
                    synthetic_blobs(&SyntheticConfig {
                        classes: *classes,
                        samples,
                        image_size: *image_size,
                        noise_sigma: *noise_sigma,
                        seed: derive_seed(self.seed, label),
                    })
                };
                Ok((make(*train_samples, "data/train")?, make(*val_samples, "data/val")?))
            }
            DatasetSpec::Idx {
                train_images,
                train_labels,
                val_images,
                val_labels,
                classes,
            } => {
                let p = |q: &PathBuf| self.base_dir.join(q);
                let train = read_idx_dataset(&p(train_images), &p(train_labels), *classes)?;
                let val = match (val_images, val_labels) {
                    (Some(i), Some(l)) => read_idx_dataset(&p(i), &p(l), Some(train.classes))?,
                    (None, None) => train.clone(),
                    _ => {
                        return Err(Error::InvalidArgument(
                            "val_images and val_labels must be given together".into(),
                        ))
                    }
                };
                Ok((train, val))
            }
        }
    }

    pub fn build_net(&self, data: &Dataset) -> Result<Net<f32>> {
        match self.architecture.preset.as_str() {
            "tiny-convnet" => Net::tiny_convnet(data.shape, data.classes, derive_seed(self.seed, "init")),
            other => Err(Error::InvalidArgument(format!("unknown architecture preset {other:?}"))),
        }
    }
}

/// One trained model of an experiment.
#[derive(Debug, Clone)]
pub struct RunResult {
    /// `baseline`, `control` (force phase with `λ_s = 0`) or `force_<λ>`.
    pub name: String,
    pub lambda_s: Option<f64>,
    pub archive: ModelArchive,
    pub log: Vec<MetricsRecord>,
}

impl RunResult {
    pub fn final_record(&self) -> &MetricsRecord {
        self.log.last().expect("log holds the step-0 record")
    }
}

/// Directory-safe name of a force run, e.g. `force_5e-3`.
pub fn force_run_name(lambda: f64) -> String {
    format!("force_{lambda:e}")
}

/// Runs `f` on a pool capped by `FORCELR_THREADS` (rayon's default otherwise).
pub fn with_thread_cap<R: Send>(f: impl FnOnce() -> R + Send) -> Result<R> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("FORCELR_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::InvalidArgument(format!("FORCELR_THREADS must be a positive integer, got {v:?}")))?;
        b = b.num_threads(n);
    }
    let pool = b.build().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(pool.install(f))
}

/// Baseline phase, then (if configured) a `λ_s = 0` control and one
/// continuation per swept `λ_s`, all starting from the baseline weights with
/// the same data order. Sweep runs are independent and run in parallel.
pub fn run_experiment(spec: &ExperimentSpec, train_set: &Dataset, val: &Dataset) -> Result<Vec<RunResult>> {
    let init_seed = derive_seed(spec.seed, "init");
    let base_seed = derive_seed(spec.seed, "baseline");
    let net = spec.build_net(train_set)?;
    let base = train(net, train_set, Some(val), &spec.baseline.config(base_seed))?;
    let mut seeds = BTreeMap::from([("init".to_string(), init_seed), ("baseline".to_string(), base_seed)]);
    let preset = Some(spec.architecture.preset.clone());
    let mut provenance = BTreeMap::from([
        ("phase".to_string(), "baseline".to_string()),
        ("steps".to_string(), spec.baseline.max_steps.to_string()),
    ]);
    let archive = |net: Net<f32>, seeds: &BTreeMap<String, u64>, provenance: BTreeMap<String, String>| ModelArchive {
        net,
        preset: preset.clone(),
        seeds: seeds.clone(),
        provenance,
        decomposition: None,
    };
    let mut runs = vec![RunResult {
        name: "baseline".into(),
        lambda_s: None,
        archive: archive(base.net.clone(), &seeds, provenance.clone()),
        log: base.log,
    }];
    let Some(fp) = &spec.force_phase else {
        return Ok(runs);
    };

    let force_seed = derive_seed(spec.seed, "force");
    seeds.insert("force".into(), force_seed);
    let mut lambdas = vec![0.0];
    lambdas.extend(fp.lambda_sweep.iter().copied().filter(|&l| l != 0.0));
    let outcomes: Vec<Result<(f64, crate::nn::TrainOutcome)>> = with_thread_cap(|| {
        lambdas
            .par_iter()
            .map(|&lambda| {
                let mut cfg = fp.phase.config(force_seed);
                if lambda != 0.0 {
                    let mut fc = ForceConfig::new(fp.kind, lambda);
                    fc.scaler = fp.scaler;
                    cfg.force = Some(fc);
                    cfg.force_layers = fp.layers.clone();
                }
                train(base.net.clone(), train_set, Some(val), &cfg).map(|o| (lambda, o))
            })
            .collect()
    })?;
    for outcome in outcomes {
        let (lambda, o) = outcome?;
        let name = if lambda == 0.0 { "control".to_string() } else { force_run_name(lambda) };
        provenance.insert("phase".into(), "force".into());
        provenance.insert("parent".into(), "baseline".into());
        provenance.insert("steps".into(), fp.phase.max_steps.to_string());
        provenance.insert("lambda_s".into(), format!("{lambda:e}"));
        provenance.insert("force_kind".into(), format!("{:?}", fp.kind).to_lowercase());
        provenance.insert(
            "scaler".into(),
            match fp.scaler {
                StepScaler::Length => "length".into(),
                StepScaler::ReciprocalLength => "reciprocal_length".into(),
            },
        );
        runs.push(RunResult {
            name,
            lambda_s: Some(lambda),
            archive: archive(o.net, &seeds, provenance.clone()),
            log: o.log,
        });
    }
    Ok(runs)
}

/// `run,lambda_s,step,val_accuracy,val_loss,<conv>_rank...` — one row per run.
pub fn summary_csv(runs: &[RunResult]) -> String {
    let mut s = String::from("run,lambda_s,step,val_accuracy,val_loss");
    if let Some(first) = runs.first() {
        for l in &first.final_record().layers {
            let _ = write!(s, ",{}_rank,{}_full_rank", l.layer, l.layer);
        }
    }
    s.push('\n');
    for r in runs {
        let f = r.final_record();
        let lambda = r.lambda_s.map_or(String::new(), |l| format!("{l:e}"));
        let _ = write!(s, "{},{},{},{:.6},{:.6}", r.name, lambda, f.step, f.val_accuracy, f.val_loss);
        for l in &f.layers {
            let _ = write!(s, ",{},{}", l.rank, l.full_rank);
        }
        s.push('\n');
    }
    s
}

/// Writes `out/<run>/model/`, `out/<run>/metrics.jsonl` and `out/summary.csv`.
pub fn write_runs(out: &Path, runs: &[RunResult]) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    for r in runs {
        let dir = out.join(&r.name);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        r.archive.save(&dir.join("model"))?;
        write_metrics_jsonl(&dir.join("metrics.jsonl"), &r.log)?;
    }
    write_atomic(&out.join("summary.csv"), summary_csv(runs).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    const SPEC: &str = r#"
seed = 3
[dataset]
kind = "synthetic"
classes = 2
train_samples = 64
val_samples = 32
image_size = 8
noise_sigma = 0.3
[architecture]
preset = "tiny-convnet"
[baseline]
eta = 0.05
batch_size = 16
max_steps = 6
eval_every = 3
[force_phase]
eta = 0.05
batch_size = 16
max_steps = 4
eval_every = 2
kind = "l2"
lambda_sweep = [1e-3, 0.0, 1e-2]
"#;

    #[test]
    fn parses_and_runs_sweep() {
        let spec = ExperimentSpec::parse(SPEC, Path::new(".")).unwrap();
        assert_eq!(spec.taus, vec![0.05]);
        assert_eq!(spec.force_phase.as_ref().unwrap().scaler, StepScaler::Length);
        let (tr, va) = spec.load_data().unwrap();
        let runs = run_experiment(&spec, &tr, &va).unwrap();
        let names: Vec<_> = runs.iter().map(|r| r.name.as_str()).collect();
        assert_eq!(names, ["baseline", "control", "force_1e-3", "force_1e-2"]);
        assert_eq!(runs[1].log.last().unwrap().step, 4);
        let csv = summary_csv(&runs);
        assert!(csv.starts_with("run,lambda_s,step,val_accuracy,val_loss,conv1_rank,conv1_full_rank,conv2_rank,conv2_full_rank\nbaseline,,6,"));
        assert_eq!(csv.lines().count(), 5);
    }

    #[test]
    fn rejects_bad_specs() {
        let bad = |from: &str, to: &str| ExperimentSpec::parse(&SPEC.replace(from, to), Path::new(".")).unwrap_err();
        assert!(bad("tiny-convnet", "resnet").to_string().contains("preset"));
        assert!(bad("lambda_sweep = [1e-3, 0.0, 1e-2]", "lambda_sweep = []").to_string().contains("non-empty"));
        assert!(bad("eta = 0.05\nbatch_size = 16\nmax_steps = 6", "eta = -1.0\nbatch_size = 16\nmax_steps = 6")
            .to_string()
            .contains("eta"));
        assert!(bad("seed = 3", "seed = 3\nbogus = 1").to_string().contains("bogus"));
    }

    #[test]
    fn missing_idx_file_is_an_io_error() {
        let text = SPEC.replace(
            "kind = \"synthetic\"\nclasses = 2\ntrain_samples = 64\nval_samples = 32\nimage_size = 8\nnoise_sigma = 0.3",
            "kind = \"idx\"\ntrain_images = \"nope-images\"\ntrain_labels = \"nope-labels\"",
        );
        let spec = ExperimentSpec::parse(&text, Path::new("/nonexistent")).unwrap();
        assert!(matches!(spec.load_data(), Err(Error::Io { .. })));
    }
}
