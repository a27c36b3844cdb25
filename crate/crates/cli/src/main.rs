mod config;
mod eval;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use cer_core::data::{
    synthetic_corpus, write_features_csv, write_labels_csv, write_manifest, Difficulty, ManifestEntry, Modality,
};
use cer_core::model::{build_model, count_parameters, save_checkpoint, Mode, ModelConfig};
use cer_core::train::{run_experiment, run_sweep_with, write_epoch_log, write_epoch_timing, SweepAxis};
use cer_core::verify::{run_gradcheck_suite, GradCheckOptions, GradCheckSizes};
use cer_core::Task;
use clap::{Parser, Subcommand};
use serde_json::json;

use config::Overrides;

#[derive(Parser)]
#[command(
    name = "cer",
    version,
    about = "Continuous emotion regression with a multi-task CNN/GRU"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus as CSV files plus a manifest.
    Synth {
        #[arg(long, env = "CER_SEED", default_value_t = 0)]
        seed: u64,
        /// Frames per recording.
        #[arg(long, default_value_t = 6000)]
        frames: usize,
        /// Number of recordings.
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value = "medium")]
        difficulty: Difficulty,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on the training folds and score the test fold.
    Train {
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint or a predictions file.
    Eval(eval::EvalArgs),
    /// Compare analytic gradients of every layer and loss with finite differences.
    Gradcheck {
        #[arg(long, env = "CER_SEED", default_value_t = 0)]
        seed: u64,
        /// batch,time,channels,hidden
        #[arg(long, default_value = "3,8,4,3")]
        sizes: String,
        /// Random points per component.
        #[arg(long, default_value_t = 5)]
        points: usize,
        #[arg(long)]
        json: bool,
        #[arg(long, hide = true)]
        corrupt: Option<String>,
    },
    /// Train one configuration per value of an axis and tabulate test CCC.
    Sweep {
        #[arg(long)]
        axis: SweepAxis,
        /// Comma-separated values, e.g. `20,40,60` or `ccc,pcc,mse`.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        out: PathBuf,
    },
    /// Report parameter counts of a network configuration.
    Params {
        /// Feature rows P of the input image.
        #[arg(long, default_value_t = 63)]
        input_dim: usize,
        #[arg(long, default_value_t = 20)]
        window: usize,
        #[arg(long, default_value = "mtl")]
        mode: Mode,
        /// Task of a single-task network.
        #[arg(long, default_value = "valence")]
        task: Task,
        #[arg(long)]
        json: bool,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("{}", error_json(&err));
            ExitCode::from(2)
        }
    }
}

fn error_json(err: &anyhow::Error) -> serde_json::Value {
    let core = err.chain().find_map(|e| e.downcast_ref::<cer_core::Error>());
    let (kind, path) = match core {
        Some(cer_core::Error::Io { path, .. }) => ("io", Some(path.display().to_string())),
        Some(cer_core::Error::Parse { path, .. }) => ("parse", Some(path.display().to_string())),
        Some(cer_core::Error::InvalidConfig(_)) => ("invalid_config", None),
        Some(cer_core::Error::ConfigMismatch(_)) => ("config_mismatch", None),
        Some(cer_core::Error::Corrupt(_) | cer_core::Error::VersionMismatch { .. }) => ("checkpoint", None),
        Some(_) => ("core", None),
        None if err.chain().any(|e| e.is::<std::io::Error>()) => ("io", None),
        None => ("error", None),
    };
    json!({ "error": { "kind": kind, "message": message(err), "path": path } })
}

/// The cause chain joined by `: `, skipping causes already quoted by their parent.
fn message(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if !out.ends_with(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn run(command: Command) -> Result<ExitCode> {
    let outcome = match command {
        Command::Synth {
            seed,
            frames,
            count,
            difficulty,
            out,
        } => synth(seed, frames, count, difficulty, &out),
        Command::Train { overrides, out } => train(&overrides, &out),
        Command::Eval(args) => eval::run(&args),
        Command::Gradcheck {
            seed,
            sizes,
            points,
            json,
            corrupt,
        } => gradcheck(seed, &sizes, points, json, corrupt),
        Command::Sweep {
            axis,
            values,
            overrides,
            out,
        } => sweep(axis, &values, &overrides, &out),
        Command::Params {
            input_dim,
            window,
            mode,
            task,
            json,
        } => params(input_dim, window, mode, task, json),
    };
    match outcome {
        Ok(()) => Ok(ExitCode::SUCCESS),
        Err(e) if e.is::<VerificationFailed>() => Ok(ExitCode::from(1)),
        Err(e) => Err(e),
    }
}

/// Signals exit code 1 after the report has been printed.
#[derive(Debug)]
struct VerificationFailed;

impl std::fmt::Display for VerificationFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("verification failed")
    }
}

impl std::error::Error for VerificationFailed {}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn synth(seed: u64, frames: usize, count: usize, difficulty: Difficulty, out: &Path) -> Result<()> {
    let recs = synthetic_corpus(seed, count, frames, difficulty)?;
    create_dir(out)?;
    let mut entries = Vec::with_capacity(recs.len());
    for rec in &recs {
        create_dir(&out.join(&rec.id))?;
        let mut feature_paths = std::collections::BTreeMap::new();
        for m in [Modality::Speech, Modality::Body] {
            if let Some(track) = rec.track(m) {
                let rel = PathBuf::from(&rec.id).join(format!("{m}.csv"));
                write_features_csv(&out.join(&rel), track, None)?;
                feature_paths.insert(m, rel);
            }
        }
        let label_path = PathBuf::from(&rec.id).join("labels.csv");
        write_labels_csv(&out.join(&label_path), &rec.labels)?;
        entries.push(ManifestEntry {
            id: rec.id.clone(),
            speaker_ids: rec.speakers.clone(),
            feature_paths,
            label_path,
            frame_rate_hz: rec.labels.frame_rate_hz,
        });
    }
    let manifest = out.join("manifest.json");
    write_manifest(&manifest, &entries)?;
    println!("wrote {} recordings to {}", entries.len(), manifest.display());
    Ok(())
}

fn run_suffix(mode: Mode, runs: usize, tasks: &[Task]) -> String {
    match (mode, runs) {
        (Mode::Stl, n) if n > 1 => format!("_{}", tasks[0].name()),
        _ => String::new(),
    }
}

fn train(overrides: &Overrides, out: &Path) -> Result<()> {
    let rc = overrides.resolve(Some(out))?;
    let source = rc.data_source()?;
    create_dir(out)?;
    write(&out.join("config.toml"), rc.to_toml()?)?;
    let recs = source.load()?;
    let e = &rc.experiment;
    log::info!("training {} on {} recordings from {source}", e.mode, recs.len());
    let result = run_experiment(&recs, e)?;
    write(
        &out.join("split.json"),
        serde_json::to_string_pretty(&result.partition)? + "\n",
    )?;
    let mut metrics = serde_json::Map::new();
    for run in &result.runs {
        let tasks = &run.outcome.best.config.tasks;
        let suffix = run_suffix(e.mode, result.runs.len(), tasks);
        write_epoch_log(&out.join(format!("epoch_log{suffix}.csv")), tasks, &run.outcome.log)?;
        write_epoch_timing(&out.join(format!("epoch_timing{suffix}.csv")), &run.outcome.log)?;
        save_checkpoint(&run.outcome.best, &out.join(format!("checkpoint{suffix}.cer")))?;
        for (i, &t) in run.test.tasks.iter().enumerate() {
            metrics.insert(
                t.name().to_string(),
                json!({
                    "test_ccc": run.test.ccc[i],
                    "test_pcc": run.test.pcc[i],
                    "best_epoch": run.outcome.best.epoch,
                    "best_val_objective": run.outcome.best.val_loss,
                }),
            );
            println!("{:<10} test CCC {:.4}", t.name(), run.test.ccc[i]);
        }
    }
    write(
        &out.join("metrics.json"),
        serde_json::to_string_pretty(&json!({ "mode": e.mode, "tasks": metrics }))? + "\n",
    )?;
    Ok(())
}

fn gradcheck(seed: u64, sizes: &str, points: usize, as_json: bool, corrupt: Option<String>) -> Result<()> {
    let dims: Vec<usize> = sizes
        .split(',')
        .map(|v| v.trim().parse())
        .collect::<Result<_, _>>()
        .with_context(|| format!("--sizes `{sizes}` is not a comma-separated list of integers"))?;
    let &[batch, time, channels, hidden] = dims.as_slice() else {
        anyhow::bail!("--sizes needs four values: batch,time,channels,hidden");
    };
    let options = GradCheckOptions {
        seed,
        points,
        sizes: GradCheckSizes {
            batch,
            time,
            channels,
            hidden,
        },
        corrupt,
    };
    let suite = run_gradcheck_suite(&options)?;
    if as_json {
        println!("{}", serde_json::to_string_pretty(&suite)?);
    } else {
        print!("{}", suite.to_text());
    }
    if suite.passed() {
        Ok(())
    } else {
        eprintln!("gradient check failed: {}", suite.failing().join(", "));
        Err(VerificationFailed.into())
    }
}

fn sweep(axis: SweepAxis, values: &[String], overrides: &Overrides, out: &Path) -> Result<()> {
    let rc = overrides.resolve(Some(out))?;
    let source = rc.data_source()?;
    create_dir(out)?;
    write(&out.join("config.toml"), rc.to_toml()?)?;
    let recs = source.load()?;
    let table = run_sweep_with(&recs, axis, values, &rc.experiment, |c, r| {
        let ccc: Vec<String> = c
            .tasks
            .iter()
            .filter_map(|&t| r.test_ccc(t).map(|v| format!("{}={v:.3}", t.short())))
            .collect();
        log::info!(
            "{axis} run: N={} mode={} loss={} modalities={:?}: {}",
            c.window,
            c.mode,
            c.train.loss,
            c.modalities,
            ccc.join(" ")
        );
    })?;
    write(&out.join("sweep.csv"), table.to_csv())?;
    write(&out.join("sweep.md"), table.to_markdown())?;
    write(&out.join("sweep.txt"), table.to_text())?;
    print!("{}", table.to_text());
    Ok(())
}

fn params(input_dim: usize, window: usize, mode: Mode, task: Task, as_json: bool) -> Result<()> {
    let config = match mode {
        Mode::Mtl => ModelConfig::mtl(input_dim, window),
        Mode::Stl => ModelConfig::stl(input_dim, window, task),
    };
    let count = count_parameters(&build_model(&config, 0)?);
    if as_json {
        println!("{}", serde_json::to_string_pretty(&count)?);
        return Ok(());
    }
    let width = count.per_layer.keys().map(String::len).max().unwrap_or(0).max(5);
    for (layer, n) in &count.per_layer {
        println!("{layer:<width$}  {n:>6}");
    }
    println!("{:<width$}  {:>6}", "total", count.total);
    Ok(())
}
