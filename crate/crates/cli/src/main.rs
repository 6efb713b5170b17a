//! `plantar` command line: synthetic data generation, training, evaluation,
//! streaming inference and imbalance scoring.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data or format
//! error, 3 numeric or training error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use clap::{Parser, Subcommand};
use plantar::config::ExperimentConfig;
use plantar::data::{load_bio_json, load_manifest, load_pressure_csv, load_recording, SyncedRecording};
use plantar::error::{Error, Result};
use plantar::eval::{
    evaluate, imbalance_score, read_predictions, write_prediction_dump, write_predictions, GroundTruth,
    ModelPredictor, Predictor,
};
use plantar::model::{load_checkpoint, save_checkpoint};
use plantar::pipeline::{normalize_all, windows_for};
use plantar::plot::write_activation_plots;
use plantar::stream::StreamState;
use plantar::synth::{gen_dataset, write_dataset};
use plantar::train::{fit, split, write_loss_trace, SplitSpec};

/// Keyword accepted by `eval --ckpt` in place of a checkpoint file: the
/// recordings' own targets are used as predictions.
const GROUND_TRUTH: &str = "ground-truth";

#[derive(Debug, Parser)]
#[command(name = "plantar", version, about = "Muscle activation estimation from plantar pressure")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset from the `synth` section of a config.
    Gen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a dataset manifest and write a checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Train only on the training side of this split, e.g. `louo:u03`.
        /// Overrides the config's `split` section.
        #[arg(long)]
        split: Option<String>,
        /// Write the per-epoch loss trace as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Evaluate a checkpoint (or `ground-truth`) on the test side of a split.
    Eval {
        #[arg(long)]
        ckpt: String,
        #[arg(long)]
        data: PathBuf,
        /// Split such as `louo:u03`, `lomo:squat` or `random:0.2`; without it
        /// every recording is evaluated.
        #[arg(long)]
        split: Option<String>,
        #[arg(long)]
        report: PathBuf,
        /// Directory for per-recording activation plots (SVG).
        #[arg(long)]
        plots: Option<PathBuf>,
        /// Write `t_ms,gt0..gt7,pred0..pred7` rows for every test frame.
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Config providing the bio normalization bounds.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Replay a pressure recording through the streaming estimator.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        pressure: PathBuf,
        #[arg(long)]
        bio: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Pace the replay by the frames' timestamps.
        #[arg(long)]
        realtime: bool,
        /// Config providing the bio normalization bounds.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Score left/right imbalance of a prediction file.
    Imbalance {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn load_dataset(manifest: &Path) -> Result<Vec<SyncedRecording>> {
    let entries = load_manifest(manifest)?;
    if entries.is_empty() {
        return Err(Error::Format(format!("{} lists no recordings", manifest.display())));
    }
    let recs: Vec<_> = entries.iter().map(load_recording).collect::<Result<_>>()?;
    normalize_all(&recs)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn cmd_gen(config: &Path, out: &Path) -> Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    let recs = gen_dataset(&cfg.synth)?;
    let manifest = write_dataset(&recs, &cfg.synth.layout, out)?;
    eprintln!("wrote {} recordings, manifest {}", recs.len(), manifest.display());
    Ok(())
}

fn cmd_train(config: &Path, data: &Path, out: &Path, split_arg: Option<&str>, trace: Option<&Path>) -> Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    let spec = split_arg.map(SplitSpec::parse).transpose()?.or(cfg.split.clone());
    let recs = load_dataset(data)?;
    let train_recs = match &spec {
        Some(s) => split(&recs, s)?.0,
        None => recs,
    };
    if train_recs.is_empty() {
        return Err(Error::Config("split leaves no training recordings".into()));
    }
    let windows = windows_for(&train_recs, &cfg.data, plantar::data::Origin::Train)?;
    let started = Instant::now();
    let outcome = fit(&windows, &cfg.model, &cfg.augment, &cfg.train)?;
    for s in &outcome.trace {
        match s.val_loss {
            Some(v) => eprintln!("epoch {:>3}  train {:.6}  val {:.6}", s.epoch, s.train_loss, v),
            None => eprintln!("epoch {:>3}  train {:.6}", s.epoch, s.train_loss),
        }
    }
    eprintln!(
        "{} training windows, best epoch {}, {:.1}s",
        outcome.n_train_windows,
        outcome.best_epoch,
        started.elapsed().as_secs_f64()
    );
    save_checkpoint(&outcome.params, &outcome.model, cfg.train.seed, out)?;
    if let Some(path) = trace {
        write_loss_trace(path, &outcome.trace)?;
    }
    Ok(())
}

struct EvalArgs<'a> {
    ckpt: &'a str,
    data: &'a Path,
    split: Option<&'a str>,
    report: &'a Path,
    plots: Option<&'a Path>,
    predictions: Option<&'a Path>,
    config: Option<&'a Path>,
}

fn cmd_eval(args: EvalArgs<'_>) -> Result<()> {
    let cfg = load_config(args.config)?;
    let recs = load_dataset(args.data)?;
    let test = match args.split.map(SplitSpec::parse).transpose()? {
        Some(s) => split(&recs, &s)?.1,
        None => recs,
    };
    let predictor: Box<dyn Predictor> = if args.ckpt == GROUND_TRUTH {
        Box::new(GroundTruth { window: cfg.data.window })
    } else {
        let ck = load_checkpoint(args.ckpt)?;
        Box::new(ModelPredictor::new(ck.config, ck.params))
    };
    let (report, preds) = evaluate(predictor.as_ref(), &test, &cfg.data.bio_bounds)?;
    report.save(args.report)?;
    if let Some(dir) = args.plots {
        write_activation_plots(dir, &preds)?;
    }
    if let Some(path) = args.predictions {
        write_prediction_dump(path, &preds)?;
    }
    eprintln!(
        "{} recordings, {} frames, RMSE {:.4}, Pearson {}",
        preds.len(),
        report.n_frames,
        report.rmse_mean,
        report.pearson_mean.map_or("undefined".to_string(), |r| format!("{r:.4}"))
    );
    Ok(())
}

fn cmd_infer(ckpt: &Path, pressure: &Path, bio: &Path, out: &Path, realtime: bool, config: Option<&Path>) -> Result<()> {
    let cfg = load_config(config)?;
    let ck = load_checkpoint(ckpt)?;
    let frames = load_pressure_csv(pressure)?;
    let bio = load_bio_json(bio)?;
    bio.validate()?;
    let mut state = StreamState::new(ck.config, ck.params, bio.normalized(&cfg.data.bio_bounds));
    let mut rows = Vec::with_capacity(frames.len());
    let started = Instant::now();
    let t0 = frames.first().map_or(0, |f| f.t_ms);
    for frame in &frames {
        if realtime {
            let due = Duration::from_millis((frame.t_ms - t0).max(0) as u64);
            if let Some(wait) = due.checked_sub(started.elapsed()) {
                std::thread::sleep(wait);
            }
        }
        if let Some(v) = state.push(frame)? {
            rows.push((frame.t_ms, v));
        }
    }
    write_predictions(out, &rows)?;
    eprintln!("{} frames in, {} estimates out", frames.len(), rows.len());
    Ok(())
}

fn cmd_imbalance(input: &Path, report: &Path) -> Result<()> {
    let a = read_predictions(input)?;
    let score = imbalance_score(a.view())?;
    let json = serde_json::json!({
        "imbalance_score": score,
        "n_frames": a.ncols(),
    });
    write_text(report, &serde_json::to_string_pretty(&json)?)?;
    eprintln!("imbalance score {score:.4} over {} frames", a.ncols());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen { config, out } => cmd_gen(&config, &out),
        Command::Train {
            config,
            data,
            out,
            split,
            trace,
        } => cmd_train(&config, &data, &out, split.as_deref(), trace.as_deref()),
        Command::Eval {
            ckpt,
            data,
            split,
            report,
            plots,
            predictions,
            config,
        } => cmd_eval(EvalArgs {
            ckpt: &ckpt,
            data: &data,
            split: split.as_deref(),
            report: &report,
            plots: plots.as_deref(),
            predictions: predictions.as_deref(),
            config: config.as_deref(),
        }),
        Command::Infer {
            ckpt,
            pressure,
            bio,
            out,
            realtime,
            config,
        } => cmd_infer(&ckpt, &pressure, &bio, &out, realtime, config.as_deref()),
        Command::Imbalance { input, report } => cmd_imbalance(&input, &report),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
