use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use forcelr::archive::{write_atomic, ModelArchive};
use forcelr::decompose::{compare_speedup, decompose_net, RankChoice, SpeedupTable};
use forcelr::experiment::{run_experiment, with_thread_cap, write_runs, ExperimentSpec};
use forcelr::lowrank::{analyze_layer, RankReport, DEFAULT_TAU};
use forcelr::nn::{finetune_decomposed, write_metrics_jsonl, Net, Tensor};
use forcelr::rng::{derive_seed, rng};
use forcelr::{verify, Error, Method, Result};
use rand::Rng as _;

/// Force regularization, low-rank filter analysis and decomposition.
#[derive(Parser)]
#[command(name = "forcelr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the baseline and the force-regularized sweep of a spec.
    Train {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the spec seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Per-layer rank report of a model archive.
    AnalyzeRanks {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TAU)]
        tau: f64,
        #[arg(long, default_value = "pca")]
        method: Method,
        /// Writes rank_report.json and rank_report.csv here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Split every convolution into a basis and a 1x1 combining layer.
    Decompose {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "pca")]
        method: Method,
        #[arg(long, default_value_t = DEFAULT_TAU)]
        tau: f64,
        /// One rank per convolution; overrides --tau.
        #[arg(long, value_delimiter = ',')]
        ranks: Option<Vec<usize>>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Fine-tune a (decomposed) model with the spec's [finetune] phase.
    Finetune {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the numerical self-checks; exit 1 if any fails.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Writes verify.json here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Theoretical (and optionally measured) speedup of a decomposed model.
    Speedup {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        decomposed: PathBuf,
        /// Also time forward passes of both models on this machine.
        #[arg(long)]
        measure: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Divergence { .. } => 3,
                _ => 2,
            })
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn run(cmd: Command) -> Result<u8> {
    match cmd {
        Command::Train { spec, out, seed } => {
            let mut spec = ExperimentSpec::load(&spec)?;
            if let Some(s) = seed {
                spec.seed = s;
            }
            // load everything before touching `out`
            let (train, val) = spec.load_data()?;
            let runs = run_experiment(&spec, &train, &val)?;
            write_runs(&out, &runs)?;
            for r in &runs {
                let f = r.final_record();
                let ranks: Vec<String> = f.layers.iter().map(|l| format!("{}={}/{}", l.layer, l.rank, l.full_rank)).collect();
                println!("{:<14} acc {:.4}  ranks {}", r.name, f.val_accuracy, ranks.join(" "));
            }
        }
        Command::AnalyzeRanks {
            model,
            tau,
            method,
            out,
            seed,
        } => {
            if !(0.0..1.0).contains(&tau) {
                return Err(Error::InvalidArgument(format!("tau must be in [0, 1), got {tau}")));
            }
            let net = ModelArchive::load(&model)?.net;
            let report = rank_report(&net, tau, method, seed)?;
            let csv = report.to_csv();
            print!("{csv}");
            if let Some(dir) = out {
                create_dir(&dir)?;
                write_atomic(&dir.join("rank_report.json"), report.to_json().as_bytes())?;
                write_atomic(&dir.join("rank_report.csv"), csv.as_bytes())?;
            }
        }
        Command::Decompose {
            model,
            method,
            tau,
            ranks,
            out,
            seed,
        } => {
            let mut archive = ModelArchive::load(&model)?;
            let choice = match ranks {
                Some(r) => RankChoice::Explicit(r),
                None => RankChoice::Tau(tau),
            };
            let d = decompose_net(&archive.net, method, &choice, seed)?;
            archive.net = d.net;
            archive.decomposition = Some(forcelr::archive::DecompositionInfo {
                tau: matches!(choice, RankChoice::Tau(_)).then_some(tau),
                ..d.info
            });
            archive.seeds.insert("decompose".into(), seed);
            archive.save(&out)?;
            write_atomic(&out.join("speedup.csv"), d.speedup.to_csv().as_bytes())?;
            write_atomic(&out.join("speedup.json"), d.speedup.to_json().as_bytes())?;
            print!("{}", d.speedup.to_csv());
        }
        Command::Finetune { model, spec, out, seed } => {
            let mut spec = ExperimentSpec::load(&spec)?;
            if let Some(s) = seed {
                spec.seed = s;
            }
            let ft = spec
                .finetune
                .clone()
                .ok_or_else(|| Error::InvalidArgument("spec has no [finetune] section".into()))?;
            let mut archive = ModelArchive::load(&model)?;
            let (train, val) = spec.load_data()?;
            let ft_seed = derive_seed(spec.seed, "finetune");
            let mut cfg = ft.phase.config(ft_seed);
            cfg.force = ft.force;
            let outcome = finetune_decomposed(archive.net, &train, Some(&val), &cfg)?;
            archive.net = outcome.net;
            archive.seeds.insert("finetune".into(), ft_seed);
            archive.provenance.insert("phase".into(), "finetune".into());
            archive.provenance.insert("steps".into(), ft.phase.max_steps.to_string());
            create_dir(&out)?;
            archive.save(&out.join("model"))?;
            write_metrics_jsonl(&out.join("metrics.jsonl"), &outcome.log)?;
            let last = outcome.log.last().expect("non-empty log");
            println!("finetune acc {:.4} loss {:.4}", last.val_accuracy, last.val_loss);
        }
        Command::Verify { seed, out } => {
            let start = Instant::now();
            let report = with_thread_cap(|| verify::run_all(seed))??;
            for p in &report.properties {
                println!(
                    "{} {:<20} worst {:.3e} (tol {:.0e}, {} instances, {:.2}s)",
                    if p.passed { "PASS" } else { "FAIL" },
                    p.name,
                    p.worst_residual,
                    p.tolerance,
                    p.instances,
                    p.seconds
                );
            }
            println!("total {:.2}s", start.elapsed().as_secs_f64());
            if let Some(dir) = out {
                create_dir(&dir)?;
                write_atomic(&dir.join("verify.json"), report.to_json().as_bytes())?;
            }
            if !report.passed {
                return Ok(1);
            }
        }
        Command::Speedup {
            model,
            decomposed,
            measure,
            out,
        } => {
            let full = ModelArchive::load(&model)?.net;
            let split = ModelArchive::load(&decomposed)?.net;
            let mut table = compare_speedup(&full, &split)?;
            if measure {
                table.measured_speedup = Some(time_forward(&full)? / time_forward(&split)?);
            }
            print_speedup(&table);
            if let Some(dir) = out {
                create_dir(&dir)?;
                write_atomic(&dir.join("speedup.json"), table.to_json().as_bytes())?;
                write_atomic(&dir.join("speedup.csv"), table.to_csv().as_bytes())?;
            }
        }
    }
    Ok(0)
}

fn rank_report(net: &Net<f32>, tau: f64, method: Method, seed: u64) -> Result<RankReport> {
    let shapes = net.output_shapes()?;
    let mut per_layer = Vec::new();
    for (i, name, _) in net.conv_layers() {
        let bank = net.filter_bank(i)?;
        let out = shapes[i];
        per_layer.extend(analyze_layer(name, &bank, tau, (out[1], out[2]), method, derive_seed(seed, name))?);
    }
    Ok(RankReport {
        method: Some(method),
        per_layer,
    })
}

fn print_speedup(t: &SpeedupTable) {
    println!("layer            N     C   HxW   out      M  break-even  speedup");
    for r in &t.layers {
        println!(
            "{:<14} {:>3} {:>5} {:>2}x{:<2} {:>3}x{:<3} {:>3} {:>10.2} {:>8.3}",
            r.layer, r.n, r.c, r.h, r.w, r.h_out, r.w_out, r.m, r.break_even_rank, r.theoretical_speedup
        );
    }
    println!("total theoretical speedup {:.3} (MAC-weighted)", t.total_theoretical_speedup);
    if let Some(m) = t.measured_speedup {
        println!("measured speedup {m:.3} (measured, machine-dependent)");
    }
}

/// Median seconds of a forward pass over a random batch of 64.
fn time_forward(net: &Net<f32>) -> Result<f64> {
    let mut r = rng(0);
    let [c, h, w] = net.input;
    let x = Tensor::new([64, c, h, w], (0..64 * c * h * w).map(|_| r.gen_range(-1.0..1.0)).collect())?;
    net.forward(&x)?;
    let mut times: Vec<f64> = (0..15)
        .map(|_| {
            let t = Instant::now();
            net.forward(&x).map(|_| t.elapsed().as_secs_f64())
        })
        .collect::<Result<_>>()?;
    times.sort_by(f64::total_cmp);
    Ok(times[times.len() / 2])
}
