use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cer_core::data::Recording;
use cer_core::metrics::SlidingSeries;
use cer_core::model::load_checkpoint;
use cer_core::train::{evaluate, FramedData, Partition};
use cer_core::{ccc, pcc, sliding_ccc, LossKind, Task, TaskTrace, TraceSet};
use clap::{Args, ValueEnum};
use serde_json::json;

use crate::config::DataSource;

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Role {
    Train,
    Val,
    Test,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Trained checkpoint; needs `--data`.
    #[arg(
        long,
        required_unless_present = "predictions",
        conflicts_with = "predictions",
        requires = "data"
    )]
    checkpoint: Option<PathBuf>,
    /// Manifest JSON or `synth:` spec.
    #[arg(long)]
    data: Option<String>,
    /// Existing predictions CSV (`<task>_reference`, `<task>_prediction`
    /// columns, optional `recording` and `frame`).
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// Sliding CCC window in samples.
    #[arg(long, default_value_t = 100)]
    window: usize,
    /// Frames between scored samples.
    #[arg(long, default_value_t = 1)]
    hop: usize,
    /// Split written by `train`; restricts scoring to `--role`.
    #[arg(long)]
    split: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Role::Test)]
    role: Role,
    /// Recording ids to score (comma-separated); all when absent.
    #[arg(long, value_delimiter = ',')]
    recordings: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

/// Global CCC and PCC per task; PCC is absent when undefined.
type TaskScores = BTreeMap<Task, (f64, Option<f64>)>;

/// Scored samples of one recording.
struct RecordingTrace {
    id: String,
    frames: Vec<usize>,
    traces: TraceSet,
}

fn select<'a>(recs: &'a [Recording], args: &EvalArgs) -> Result<Vec<&'a Recording>> {
    let ids: Vec<String> = if let Some(path) = &args.split {
        let file = File::open(path).with_context(|| format!("opening split {}", path.display()))?;
        let p: Partition =
            serde_json::from_reader(file).with_context(|| format!("parsing split {}", path.display()))?;
        match args.role {
            Role::Train => p.train,
            Role::Val => p.val,
            Role::Test => p.test,
        }
    } else if !args.recordings.is_empty() {
        args.recordings.clone()
    } else {
        return Ok(recs.iter().collect());
    };
    for id in &ids {
        if !recs.iter().any(|r| &r.id == id) {
            bail!("recording `{id}` is not in the data");
        }
    }
    Ok(Partition::select(recs, &ids))
}

fn from_checkpoint(args: &EvalArgs, path: &Path) -> Result<(TaskScores, Vec<RecordingTrace>)> {
    let ckpt = load_checkpoint(path)?;
    let pre = ckpt
        .preprocessing
        .as_ref()
        .context("checkpoint carries no preprocessing; it cannot score raw recordings")?;
    if pre.input_dim() != ckpt.config.input_dim {
        bail!(cer_core::Error::ConfigMismatch(format!(
            "checkpoint network expects {} feature rows, its preprocessing yields {}",
            ckpt.config.input_dim,
            pre.input_dim()
        )));
    }
    let source: DataSource = args.data.as_deref().context("--checkpoint needs --data")?.parse()?;
    let recs = source.load()?;
    let chosen = select(&recs, args)?;
    let data = FramedData::new(chosen.iter().copied(), pre, ckpt.config.window, args.hop)?;
    let tasks = &ckpt.config.tasks;
    let weights = vec![1.0 / tasks.len() as f64; tasks.len()];
    let eval = evaluate(&ckpt.config, &ckpt.params, &data, LossKind::Ccc, &weights)?;

    let mut per_rec: Vec<RecordingTrace> = Vec::new();
    for (s, &(r, frame)) in data.centers().iter().enumerate() {
        if per_rec.len() <= r {
            let rate = chosen[r].labels.frame_rate_hz;
            per_rec.push(RecordingTrace {
                id: data.recording_ids()[r].clone(),
                frames: Vec::new(),
                traces: TraceSet::new(
                    args.hop as f64 / rate,
                    tasks
                        .iter()
                        .map(|&task| TaskTrace {
                            task,
                            reference: Vec::new(),
                            prediction: Vec::new(),
                        })
                        .collect(),
                )?,
            });
        }
        let rt = &mut per_rec[r];
        rt.frames.push(frame);
        for (i, t) in rt.traces.traces.iter_mut().enumerate() {
            t.reference.push(eval.references[i][s]);
            t.prediction.push(eval.predictions[i][s]);
        }
    }
    let metrics = tasks
        .iter()
        .enumerate()
        .map(|(i, &t)| (t, (eval.ccc[i], eval.pcc[i])))
        .collect();
    Ok((metrics, per_rec))
}

fn from_predictions(path: &Path) -> Result<(TaskScores, Vec<RecordingTrace>)> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let mut tasks = Vec::new();
    for t in Task::ALL {
        match (
            col(&format!("{}_reference", t.name())),
            col(&format!("{}_prediction", t.name())),
        ) {
            (Some(r), Some(p)) => tasks.push((t, r, p)),
            (None, None) => {}
            _ => bail!("{}: {t} needs both reference and prediction columns", path.display()),
        }
    }
    if tasks.is_empty() {
        bail!(
            "{}: no `<task>_reference`/`<task>_prediction` column pairs",
            path.display()
        );
    }
    let (rec_col, frame_col) = (col("recording"), col("frame"));
    let mut per_rec: Vec<RecordingTrace> = Vec::new();
    for (line, row) in reader.records().enumerate() {
        let row = row.with_context(|| format!("{}: reading row {}", path.display(), line + 2))?;
        let num = |i: usize| -> Result<f64> {
            let v: f64 = row[i]
                .trim()
                .parse()
                .with_context(|| format!("{}:{}: `{}` is not a number", path.display(), line + 2, &row[i]))?;
            if !v.is_finite() {
                bail!("{}:{}: non-finite value", path.display(), line + 2);
            }
            Ok(v)
        };
        let id = rec_col.map_or("", |c| &row[c]).to_string();
        if per_rec.last().is_none_or(|r| r.id != id) {
            per_rec.push(RecordingTrace {
                id,
                frames: Vec::new(),
                traces: TraceSet::new(
                    1.0,
                    tasks
                        .iter()
                        .map(|&(task, _, _)| TaskTrace {
                            task,
                            reference: Vec::new(),
                            prediction: Vec::new(),
                        })
                        .collect(),
                )?,
            });
        }
        let rt = per_rec.last_mut().expect("pushed above");
        let frame = match frame_col {
            Some(c) => row[c]
                .trim()
                .parse()
                .with_context(|| format!("{}:{}: bad frame index", path.display(), line + 2))?,
            None => rt.frames.len(),
        };
        rt.frames.push(frame);
        for (t, &(_, r, p)) in rt.traces.traces.iter_mut().zip(&tasks) {
            t.reference.push(num(r)?);
            t.prediction.push(num(p)?);
        }
    }
    let mut metrics = BTreeMap::new();
    for (i, &(task, _, _)) in tasks.iter().enumerate() {
        let pooled = |f: fn(&TaskTrace) -> &Vec<f64>| -> Vec<f64> {
            per_rec
                .iter()
                .flat_map(|r| f(&r.traces.traces[i]).iter().copied())
                .collect()
        };
        let (p, r) = (pooled(|t| &t.prediction), pooled(|t| &t.reference));
        metrics.insert(task, (ccc(&p, &r)?, pcc(&p, &r).ok()));
    }
    Ok((metrics, per_rec))
}

fn write_predictions(path: &Path, recs: &[RecordingTrace]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    let Some(first) = recs.first() else {
        return Ok(());
    };
    let mut header = vec!["recording".to_string(), "frame".to_string()];
    for t in &first.traces.traces {
        header.push(format!("{}_reference", t.task.name()));
        header.push(format!("{}_prediction", t.task.name()));
    }
    w.write_record(&header)?;
    for r in recs {
        for (i, frame) in r.frames.iter().enumerate() {
            let mut row = vec![r.id.clone(), frame.to_string()];
            for t in &r.traces.traces {
                row.push(t.reference[i].to_string());
                row.push(t.prediction[i].to_string());
            }
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One row per recording and sample with a full window behind it.
fn write_sliding(path: &Path, recs: &[RecordingTrace], window: usize) -> Result<usize> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    let Some(first) = recs.first() else {
        return Ok(0);
    };
    let mut header = vec!["recording".to_string(), "frame".to_string()];
    header.extend(first.traces.traces.iter().map(|t| t.task.name().to_string()));
    w.write_record(&header)?;
    let mut rows = 0;
    for r in recs {
        if r.frames.len() < window {
            log::warn!(
                "recording `{}` has {} samples, fewer than the window {window}",
                r.id,
                r.frames.len()
            );
            continue;
        }
        let series: Vec<SlidingSeries> = sliding_ccc(&r.traces, window)?;
        for i in 0..series[0].values.len() {
            let mut row = vec![r.id.clone(), r.frames[series[0].start + i].to_string()];
            row.extend(
                series
                    .iter()
                    .map(|s| s.values[i].map_or_else(String::new, |v| v.to_string())),
            );
            w.write_record(&row)?;
            rows += 1;
        }
    }
    w.flush()?;
    Ok(rows)
}

pub fn run(args: &EvalArgs) -> Result<()> {
    let (metrics, recs) = match (&args.checkpoint, &args.predictions) {
        (Some(c), _) => from_checkpoint(args, c)?,
        (None, Some(p)) => from_predictions(p)?,
        (None, None) => bail!("give --checkpoint or --predictions"),
    };
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    if args.checkpoint.is_some() {
        write_predictions(&args.out.join("predictions.csv"), &recs)?;
    }
    let sliding_rows = write_sliding(&args.out.join("sliding_ccc.csv"), &recs, args.window)?;
    let samples: usize = recs.iter().map(|r| r.frames.len()).sum();
    let tasks: serde_json::Map<String, serde_json::Value> = metrics
        .iter()
        .map(|(t, (c, p))| (t.name().to_string(), json!({ "ccc": c, "pcc": p })))
        .collect();
    let report = json!({
        "samples": samples,
        "recordings": recs.len(),
        "sliding_window": args.window,
        "sliding_rows": sliding_rows,
        "tasks": tasks,
    });
    let path = args.out.join("metrics.json");
    std::fs::write(&path, serde_json::to_string_pretty(&report)? + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    for (t, (c, p)) in &metrics {
        let p = p.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
        println!("{:<10} CCC {c:.4}  PCC {p}", t.name());
    }
    Ok(())
}
