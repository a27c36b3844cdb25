use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::experiment::{run_experiment, ExperimentConfig, ExperimentResult};
use crate::data::{Modality, Recording};
use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::model::Mode;

/// Which experiment setting a sweep varies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Loss,
    Mode,
    Modality,
    Window,
}

impl SweepAxis {
    pub const ALL: [SweepAxis; 4] = [SweepAxis::Loss, SweepAxis::Mode, SweepAxis::Modality, SweepAxis::Window];

    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Loss => "loss",
            SweepAxis::Mode => "mode",
            SweepAxis::Modality => "modality",
            SweepAxis::Window => "window",
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SweepAxis::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown sweep axis `{s}`")))
    }
}

/// Parses `speech`, `body`, or `multimodal` (also `speech+body`).
pub fn parse_modality_set(s: &str) -> Result<Vec<Modality>> {
    match s {
        "multimodal" | "speech+body" | "body+speech" => Ok(vec![Modality::Speech, Modality::Body]),
        _ => Ok(vec![s.parse()?]),
    }
}

pub fn modality_set_label(set: &[Modality]) -> String {
    match set {
        [one] => one.name().to_string(),
        _ => "multimodal".to_string(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub label: String,
    pub values: Vec<Option<f64>>,
}

/// Held-out CCC per row setting and column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub axis: SweepAxis,
    pub row_header: String,
    pub columns: Vec<String>,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn value(&self, row: &str, column: &str) -> Option<f64> {
        let c = self.columns.iter().position(|x| x == column)?;
        self.rows.iter().find(|r| r.label == row)?.values[c]
    }

    /// Values down one column, in row order.
    pub fn column(&self, column: &str) -> Option<Vec<Option<f64>>> {
        let c = self.columns.iter().position(|x| x == column)?;
        Some(self.rows.iter().map(|r| r.values[c]).collect())
    }

    fn header(&self) -> Vec<String> {
        std::iter::once(self.row_header.clone())
            .chain(self.columns.iter().cloned())
            .collect()
    }

    fn cells(&self, fmt: impl Fn(f64) -> String, missing: &str) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                std::iter::once(r.label.clone())
                    .chain(r.values.iter().map(|v| v.map_or_else(|| missing.to_string(), &fmt)))
                    .collect()
            })
            .collect()
    }

    /// Full-precision CSV with a header row.
    pub fn to_csv(&self) -> String {
        let mut out = self.header().join(",");
        out.push('\n');
        for row in self.cells(|v| v.to_string(), "") {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let header = self.header();
        let mut out = format!("| {} |\n", header.join(" | "));
        out.push_str(&format!("|{}\n", "---|".repeat(header.len())));
        for row in self.cells(|v| format!("{v:.3}"), "-") {
            out.push_str(&format!("| {} |\n", row.join(" | ")));
        }
        out
    }

    /// Space-aligned columns for terminals.
    pub fn to_text(&self) -> String {
        let mut lines = vec![self.header()];
        lines.extend(self.cells(|v| format!("{v:.3}"), "-"));
        let widths: Vec<usize> = (0..lines[0].len())
            .map(|c| lines.iter().map(|l| l[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for l in &lines {
            let cells: Vec<String> = l
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (s, &w))| if i == 0 { format!("{s:<w$}") } else { format!("{s:>w$}") })
                .collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
        }
        out
    }
}

fn parse_all<T: FromStr<Err = Error>>(values: &[String]) -> Result<Vec<T>> {
    values.iter().map(|v| v.trim().parse()).collect()
}

fn task_cells(result: &ExperimentResult, config: &ExperimentConfig) -> Vec<Option<f64>> {
    config.tasks.iter().map(|&t| result.test_ccc(t)).collect()
}

/// Trains one configuration per value (all sharing the base seeds) and
/// tabulates held-out CCC. The loss axis additionally crosses every loss
/// with the multimodal, speech-only, and body-only inputs.
pub fn run_sweep(
    recordings: &[Recording],
    axis: SweepAxis,
    values: &[String],
    base: &ExperimentConfig,
) -> Result<SweepTable> {
    run_sweep_with(recordings, axis, values, base, |_, _| {})
}

/// [`run_sweep`] with a callback after each trained configuration.
pub fn run_sweep_with(
    recordings: &[Recording],
    axis: SweepAxis,
    values: &[String],
    base: &ExperimentConfig,
    mut on_run: impl FnMut(&ExperimentConfig, &ExperimentResult),
) -> Result<SweepTable> {
    if values.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "sweep over `{axis}` needs at least one value"
        )));
    }
    let task_columns: Vec<String> = base.tasks.iter().map(|t| t.short().to_string()).collect();
    let mut run = |config: ExperimentConfig| -> Result<Vec<Option<f64>>> {
        let result = run_experiment(recordings, &config)?;
        log::info!("sweep {axis}: finished {:?}", task_cells(&result, &config));
        on_run(&config, &result);
        Ok(task_cells(&result, &config))
    };

    let (row_header, columns, rows) = match axis {
        SweepAxis::Loss => {
            let losses: Vec<LossKind> = parse_all(values)?;
            let columns = losses
                .iter()
                .flat_map(|l| task_columns.iter().map(move |t| format!("{}_{t}", l.name())))
                .collect();
            let sets = [
                vec![Modality::Speech, Modality::Body],
                vec![Modality::Speech],
                vec![Modality::Body],
            ];
            let mut rows = Vec::new();
            for set in sets {
                let mut cells = Vec::new();
                for &loss in &losses {
                    let mut config = base.clone();
                    config.modalities = set.clone();
                    config.train.loss = loss;
                    cells.extend(run(config)?);
                }
                rows.push(SweepRow {
                    label: modality_set_label(&set),
                    values: cells,
                });
            }
            ("modality", columns, rows)
        }
        SweepAxis::Mode => {
            let modes: Vec<Mode> = parse_all(values)?;
            let mut rows = Vec::new();
            for mode in modes {
                let mut config = base.clone();
                config.mode = mode;
                rows.push(SweepRow {
                    label: mode.to_string().to_uppercase(),
                    values: run(config)?,
                });
            }
            ("mode", task_columns, rows)
        }
        SweepAxis::Modality => {
            let sets = values
                .iter()
                .map(|v| parse_modality_set(v.trim()))
                .collect::<Result<Vec<_>>>()?;
            let mut rows = Vec::new();
            for set in sets {
                let mut config = base.clone();
                config.modalities = set.clone();
                rows.push(SweepRow {
                    label: modality_set_label(&set),
                    values: run(config)?,
                });
            }
            ("modality", task_columns, rows)
        }
        SweepAxis::Window => {
            let windows = values
                .iter()
                .map(|v| {
                    v.trim()
                        .parse::<usize>()
                        .map_err(|_| Error::InvalidConfig(format!("window `{v}` is not a positive integer")))
                })
                .collect::<Result<Vec<_>>>()?;
            let mut rows = Vec::new();
            for window in windows {
                let mut config = base.clone();
                config.window = window;
                config.validate()?;
                rows.push(SweepRow {
                    label: window.to_string(),
                    values: run(config)?,
                });
            }
            ("N", task_columns, rows)
        }
    };
    Ok(SweepTable {
        axis,
        row_header: row_header.to_string(),
        columns,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> SweepTable {
        SweepTable {
            axis: SweepAxis::Window,
            row_header: "N".into(),
            columns: vec!["act".into(), "val".into()],
            rows: vec![
                SweepRow {
                    label: "20".into(),
                    values: vec![Some(0.5), None],
                },
                SweepRow {
                    label: "40".into(),
                    values: vec![Some(0.625), Some(-0.125)],
                },
            ],
        }
    }

    #[test]
    fn renders_all_formats() {
        let t = table();
        assert_eq!(t.to_csv(), "N,act,val\n20,0.5,\n40,0.625,-0.125\n");
        assert_eq!(
            t.to_markdown(),
            "| N | act | val |\n|---|---|---|\n| 20 | 0.500 | - |\n| 40 | 0.625 | -0.125 |\n"
        );
        assert_eq!(t.to_text(), "N     act     val\n20  0.500       -\n40  0.625  -0.125\n");
        assert_eq!(t.value("40", "val"), Some(-0.125));
        assert_eq!(t.column("act"), Some(vec![Some(0.5), Some(0.625)]));
    }

    #[test]
    fn parses_axes_and_modalities() {
        assert_eq!("window".parse::<SweepAxis>().unwrap(), SweepAxis::Window);
        assert!("depth".parse::<SweepAxis>().is_err());
        assert_eq!(parse_modality_set("multimodal").unwrap().len(), 2);
        assert_eq!(parse_modality_set("body").unwrap(), vec![Modality::Body]);
        assert!(parse_modality_set("face").is_err());
        assert_eq!(modality_set_label(&[Modality::Speech, Modality::Body]), "multimodal");
    }

    #[test]
    fn bad_values_fail_before_training() {
        let base = ExperimentConfig::default();
        let v = |s: &[&str]| s.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        assert!(run_sweep(&[], SweepAxis::Loss, &v(&["ccc", "huber"]), &base).is_err());
        assert!(run_sweep(&[], SweepAxis::Window, &v(&["20", "x"]), &base).is_err());
        assert!(run_sweep(&[], SweepAxis::Mode, &[], &base).is_err());
    }
}
