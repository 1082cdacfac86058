//! Command-line front end.

pub mod config;
pub mod suite;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use log::info;

pub use config::{DataConfig, ExperimentConfig, TrainingConfig, PRESETS};
pub use suite::{decay_probe, decay_suite, gradcheck_config, gradcheck_suite, CaseResult, DecayCase};

use crate::datasets::{generate, DatasetFile, Kind, MotionSpec};
use crate::error::{Error, Result};
use crate::evaluation::report::pgm_bytes;
use crate::evaluation::{bound_diagnostics, bound_inputs, config_hash, evaluate, render_frames, BoundSettings};
use crate::learning::{evaluate_loss, split_frames, Checkpoint, MetricsLog, Trainer};
use crate::observer::{forecast_sequence, ObserverConfig, ObserverModel};
use crate::tensor::{GradCheckOptions, Scalar, Tensor};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "stob", version, about = "Latent-observer sequence forecasting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum KindArg {
    Digits,
    Blobs,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic dataset.
    Generate {
        #[arg(long, value_enum)]
        kind: KindArg,
        #[arg(long)]
        n: usize,
        /// Frames per sequence.
        #[arg(long)]
        t: usize,
        /// Frame height and width.
        #[arg(long, default_value_t = 64)]
        hw: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write a checkpoint after every epoch.
    Train {
        /// Preset name or JSON file.
        #[arg(long)]
        config: String,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch CSV, defaults to the checkpoint path with `.csv`.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<u64>,
        /// Continue from the checkpoint at `--out`.
        #[arg(long)]
        resume: bool,
    },
    /// Forecast `horizon` frames after the first `t_in` frames of each sequence.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        horizon: usize,
        #[arg(long, default_value = "predict_out")]
        out: PathBuf,
        /// Sequence whose frames are dumped as images.
        #[arg(long, default_value_t = 0)]
        sample: usize,
    },
    /// Score forecasts on a dataset and write `<out>.json` and `<out>.csv`.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "metrics")]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = vec![5.0, 20.0, 40.0])]
        thresholds: Vec<f64>,
        /// Also attach the bound diagnostics.
        #[arg(long)]
        bound: bool,
    },
    /// Compare analytic and finite-difference gradients in f64.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Sampled entries per model parameter tensor.
        #[arg(long, default_value_t = 6)]
        coords: usize,
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
        /// Finite-difference step.
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
        /// Denominator floor of the relative error.
        #[arg(long, default_value_t = 1e-6)]
        floor: f64,
        /// Model loss check: floor as a multiple of the loss value.
        #[arg(long, default_value_t = 1e-4)]
        loss_floor: f64,
        #[arg(long, default_value_t = 1)]
        batch: usize,
    },
    /// Check that latent errors contract at least geometrically.
    Convergence {
        /// Use this model instead of random micro models.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[arg(long, default_value_t = 50)]
        steps: usize,
    },
    /// Print capacity and bound diagnostics of a checkpoint.
    Bound {
        #[arg(long)]
        ckpt: PathBuf,
        /// Training inputs, for the sample count and input norm.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        eta: f64,
        #[arg(long, default_value_t = 1.0)]
        m: f64,
        #[arg(long, default_value_t = 0.05)]
        delta: f64,
    },
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Grouping { .. } | Error::Mismatch(_) => EXIT_USAGE,
        _ => EXIT_FAILED,
    }
}

/// Parses `args` and runs the subcommand, returning the process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Generate {
            kind,
            n,
            t,
            hw,
            seed,
            out,
        } => {
            let (kind, spec) = match kind {
                KindArg::Digits => (Kind::Digits, MotionSpec::digits(seed)),
                KindArg::Blobs => (Kind::Blobs, MotionSpec::blobs(seed)),
            };
            let data = generate(kind, &spec, n, t, hw, hw)?;
            data.write(&out)?;
            println!("wrote {} sequences {:?} to {}", n, data.frames.shape(), out.display());
            Ok(EXIT_OK)
        }
        Command::Train {
            config,
            data,
            out,
            log,
            epochs,
            resume,
        } => train(&config, data, &out, log, epochs, resume),
        Command::Predict {
            ckpt,
            input,
            horizon,
            out,
            sample,
        } => predict(&ckpt, &input, horizon, &out, sample),
        Command::Evaluate {
            ckpt,
            data,
            out,
            thresholds,
            bound,
        } => {
            let (cfg, model) = load_model::<f32>(&ckpt)?;
            let seqs = DatasetFile::<f32>::read(&data)?.frames;
            let mc = &cfg.model;
            let (y_in, y_out) = split_frames(&seqs, mc.t_in, mc.t_out)?;
            let pred = forecast_sequence(&model, &y_in, mc.t_out)?;
            let mut report = evaluate(&pred, &y_out, &thresholds, config_hash(&cfg.canonical()?))?;
            let persistence = persistence_mse(&y_in, &y_out)?;
            if bound {
                let settings = bound_settings(&model.config, &seqs, 1.0, 1.0, 0.05)?;
                report.bound = Some(bound_diagnostics(&bound_inputs(&model.cast(), settings, cfg.seed)?)?);
            }
            report.emit(&out)?;
            println!(
                "mse {:.6} mae {:.6} ssim {:.4} (persistence mse {:.6})",
                report.aggregate.mse, report.aggregate.mae, report.aggregate.ssim, persistence
            );
            for (k, v) in report.per_frame.mse.iter().enumerate() {
                println!("frame {:>2} mse {:.6}", k + 1, v);
            }
            Ok(EXIT_OK)
        }
        Command::Gradcheck {
            seed,
            coords,
            tol,
            eps,
            floor,
            loss_floor,
            batch,
        } => {
            let opts = GradCheckOptions {
                eps,
                floor,
                loss_floor,
                seed,
                max_coords_per_param: None,
            };
            let mut ok = true;
            for case in gradcheck_suite(opts, coords, batch)? {
                let pass = case.report.max_rel_error < tol;
                ok &= pass;
                println!(
                    "{} {:<18} max rel error {:.3e} over {} coords (worst {}[{}])",
                    if pass { "PASS" } else { "FAIL" },
                    case.name,
                    case.report.max_rel_error,
                    case.report.coords_checked,
                    case.report.worst_param,
                    case.report.worst_index
                );
            }
            Ok(if ok { EXIT_OK } else { EXIT_FAILED })
        }
        Command::Convergence { ckpt, seeds, steps } => {
            let cases = match &ckpt {
                Some(p) => {
                    let (_, model) = load_model::<f64>(p)?;
                    (0..seeds)
                        .map(|s| decay_probe(&model, s, steps))
                        .collect::<Result<Vec<_>>>()?
                }
                None => {
                    let base = ObserverConfig::micro();
                    decay_suite(&base, base.a_constraint, base.a_init, 0..seeds, steps)?
                }
            };
            let mut ok = true;
            for c in &cases {
                let r = &c.report;
                let pass = r.holds();
                ok &= pass;
                println!(
                    "{} seed {:>3} max A {:.6} e0 {:.3e} e{} {:.3e} envelope {:.3e}",
                    if pass { "PASS" } else { "FAIL" },
                    c.seed,
                    r.rho,
                    r.errors[0],
                    steps,
                    r.errors[steps],
                    r.envelope[steps]
                );
            }
            Ok(if ok { EXIT_OK } else { EXIT_FAILED })
        }
        Command::Bound {
            ckpt,
            data,
            eta,
            m,
            delta,
        } => {
            let (cfg, model) = load_model::<f64>(&ckpt)?;
            let seqs = DatasetFile::<f64>::read(&data)?.frames;
            let settings = bound_settings(&cfg.model, &seqs, eta, m, delta)?;
            let d = bound_diagnostics(&bound_inputs(&model, settings, cfg.seed)?)?;
            println!("{}", serde_json::to_string_pretty(&d)?);
            Ok(if [d.r_s, d.r_v, d.r, d.rademacher_term].iter().all(|v| v.is_finite()) {
                EXIT_OK
            } else {
                EXIT_FAILED
            })
        }
    }
}

/// Reads a checkpoint and rebuilds its model.
pub fn load_model<T: Scalar>(path: &Path) -> Result<(ExperimentConfig, ObserverModel<T>)> {
    let ckpt = Checkpoint::<T>::load(path)?;
    let cfg = ExperimentConfig::from_json(&ckpt.config_json)?;
    let mut model = ObserverModel::<T>::new(cfg.model.clone(), cfg.seed)?;
    ckpt.apply_params(&mut model.store)?;
    Ok((cfg, model))
}

/// MSE of repeating the last observed frame.
pub fn persistence_mse<T: Scalar>(y_in: &Tensor<T>, y_out: &Tensor<T>) -> Result<f64> {
    let s = y_in.shape();
    if s.len() != 5 || y_out.rank() != 5 || y_out.shape()[0] != s[0] || y_out.shape()[2..] != s[2..] {
        return Err(Error::dim("sequence", "inputs and targets must be [N, T, C, H, W] with equal frames"));
    }
    let (n, t, t_out) = (s[0], s[1], y_out.shape()[1]);
    let f: usize = s[2..].iter().product();
    let mut sum = 0.0;
    for i in 0..n {
        let last = &y_in.data()[(i * t + t - 1) * f..(i * t + t) * f];
        for k in 0..t_out {
            let g = &y_out.data()[(i * t_out + k) * f..(i * t_out + k + 1) * f];
            sum += last.iter().zip(g).map(|(a, b)| (a.as_f64() - b.as_f64()).powi(2)).sum::<f64>();
        }
    }
    Ok(sum / (n * t_out * f) as f64)
}

/// Sample count and input norm of the observed prefixes of `seqs`.
pub fn bound_settings<T: Scalar>(
    cfg: &ObserverConfig,
    seqs: &Tensor<T>,
    eta: f64,
    m: f64,
    delta: f64,
) -> Result<BoundSettings> {
    let y_in = seqs.narrow_axis1(0, cfg.t_in)?;
    Ok(BoundSettings {
        n: seqs.shape()[0] as f64,
        eta,
        m,
        delta,
        x_frob: y_in.frobenius().as_f64(),
    })
}

fn train(
    config: &str,
    data: Option<PathBuf>,
    out: &Path,
    log: Option<PathBuf>,
    epochs: Option<u64>,
    resume: bool,
) -> Result<i32> {
    let cfg = ExperimentConfig::resolve(config)?;
    let canonical = cfg.canonical()?;
    let data = data
        .or_else(|| cfg.data.train.as_ref().map(PathBuf::from))
        .ok_or_else(|| Error::Config("no training data given".into()))?;
    let train_set = DatasetFile::<f32>::read(&data)?.frames;
    let test_set = match &cfg.data.test {
        Some(p) => Some(DatasetFile::<f32>::read(Path::new(p))?.frames),
        None => None,
    };
    let model = ObserverModel::<f32>::new(cfg.model.clone(), cfg.seed)?;
    let mut trainer = Trainer::new(
        model,
        cfg.optimizer,
        cfg.loss,
        cfg.training.batch_size,
        cfg.seed,
    )?;
    if resume {
        Checkpoint::<f32>::load(out)?.restore_into(&mut trainer, &canonical)?;
        info!("resumed at epoch {}", trainer.epoch);
    }
    let log_path = log.unwrap_or_else(|| out.with_extension("csv"));
    let mut csv = if resume {
        MetricsLog::append(&log_path)?
    } else {
        MetricsLog::create(&log_path)?
    };
    let total = epochs.unwrap_or(cfg.training.epochs);
    while trainer.epoch < total {
        let stats = trainer.train_epoch(&train_set)?;
        csv.record(&stats)?;
        Checkpoint::from_trainer(&trainer, &canonical).save(out)?;
        println!(
            "epoch {:>3} loss {:.6} ({:.1}s, {} skipped)",
            stats.epoch, stats.loss.total, stats.seconds, stats.skipped
        );
    }
    if let Some(test) = &test_set {
        let l = evaluate_loss(&trainer.model, test, &cfg.loss, cfg.training.batch_size)?;
        println!("test loss {:.6}", l.total);
    }
    Ok(EXIT_OK)
}

fn predict(ckpt: &Path, input: &Path, horizon: usize, out: &Path, sample: usize) -> Result<i32> {
    let (cfg, model) = load_model::<f32>(ckpt)?;
    let mc = &cfg.model;
    if horizon == 0 || !horizon.is_multiple_of(mc.delta) {
        return Err(Error::Config(format!(
            "horizon {horizon} must be a positive multiple of the group size {}",
            mc.delta
        )));
    }
    let seqs = DatasetFile::<f32>::read(input)?.frames;
    if seqs.rank() != 5 || seqs.shape()[1] < mc.t_in {
        return Err(Error::dim("input", format!("{:?} has fewer than {} frames", seqs.shape(), mc.t_in)));
    }
    let y_in = seqs.narrow_axis1(0, mc.t_in)?;
    let pred = forecast_sequence(&model, &y_in, horizon)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    // the linear output layer may step slightly outside [0, 1]
    DatasetFile::new(pred.clone(), false)?.write(&out.join("pred.stds"))?;

    let p = pred.index_axis0(sample)?;
    let written = if seqs.shape()[1] >= mc.t_in + horizon {
        let truth = seqs.narrow_axis1(mc.t_in, horizon)?.index_axis0(sample)?;
        render_frames(&p, &truth, out)?
    } else {
        let s = p.shape();
        let (c, h, w) = (s[1], s[2], s[3]);
        for k in 0..s[0] {
            for ch in 0..c {
                let off = (k * c + ch) * h * w;
                let frame: Vec<f64> = p.data()[off..off + h * w].iter().map(|v| v.as_f64()).collect();
                let path = out.join(format!("pf_{:02}_c{ch}.pgm", k + 1));
                std::fs::write(&path, pgm_bytes(&frame, h, w)).map_err(|e| Error::io(&path, e))?;
            }
        }
        s[0] * c
    };
    println!("forecast {:?}, {written} images in {}", pred.shape(), out.display());
    Ok(EXIT_OK)
}
