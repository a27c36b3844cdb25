use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::task::Task;

/// Input modality. `Body` is the second track in general: motion-capture
/// angles, or any other per-frame descriptor of configurable width.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Speech,
    Body,
}

impl Modality {
    pub fn name(self) -> &'static str {
        match self {
            Modality::Speech => "speech",
            Modality::Body => "body",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "speech" => Ok(Modality::Speech),
            "body" => Ok(Modality::Body),
            _ => Err(Error::InvalidConfig(format!("unknown modality `{s}`"))),
        }
    }
}

/// Fixed-width feature vectors sampled at a constant frame rate.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTrack {
    pub modality: Modality,
    pub frame_rate_hz: f64,
    dim: usize,
    /// Frame-major: frame `l` occupies `data[l * dim..(l + 1) * dim]`.
    data: Vec<f64>,
}

impl FeatureTrack {
    pub fn new(modality: Modality, frame_rate_hz: f64, dim: usize, data: Vec<f64>) -> Result<Self> {
        if !(frame_rate_hz > 0.0 && frame_rate_hz.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "frame rate must be positive, got {frame_rate_hz}"
            )));
        }
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::LengthMismatch {
                what: "feature track",
                expected: dim,
                got: data.len(),
            });
        }
        Ok(Self {
            modality,
            frame_rate_hz,
            dim,
            data,
        })
    }

    pub fn from_frames(modality: Modality, frame_rate_hz: f64, frames: &[Vec<f64>]) -> Result<Self> {
        let dim = frames.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(dim * frames.len());
        for f in frames {
            if f.len() != dim {
                return Err(Error::LengthMismatch {
                    what: "feature frame",
                    expected: dim,
                    got: f.len(),
                });
            }
            data.extend_from_slice(f);
        }
        Self::new(modality, frame_rate_hz, dim, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of frames.
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn frame(&self, l: usize) -> &[f64] {
        &self.data[l * self.dim..(l + 1) * self.dim]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Frame-wise concatenation `[self | other]`. Framing commutes with
    /// this, so fusing tracks once equals fusing every framed image.
    pub fn concat(&self, other: &FeatureTrack) -> Result<FeatureTrack> {
        if self.len() != other.len() {
            return Err(Error::LengthMismatch {
                what: "modality fusion",
                expected: self.len(),
                got: other.len(),
            });
        }
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        for (a, b) in self.frames().zip(other.frames()) {
            data.extend_from_slice(a);
            data.extend_from_slice(b);
        }
        FeatureTrack::new(self.modality, self.frame_rate_hz, self.dim + other.dim, data)
    }

    /// Keeps frames `range`.
    pub fn window(&self, start: usize, len: usize) -> Result<FeatureTrack> {
        if start + len > self.len() {
            return Err(Error::SequenceTooShort {
                what: "track window",
                needed: start + len,
                got: self.len(),
            });
        }
        FeatureTrack::new(
            self.modality,
            self.frame_rate_hz,
            self.dim,
            self.data[start * self.dim..(start + len) * self.dim].to_vec(),
        )
    }
}

/// Central-difference derivative `(f[l+1] − f[l−1]) / 2` with the edge
/// frames replicated. `order = 2` applies the operator twice.
pub fn compute_deltas(track: &FeatureTrack, order: u8) -> Result<FeatureTrack> {
    if !(1..=2).contains(&order) {
        return Err(Error::InvalidConfig(format!("delta order must be 1 or 2, got {order}")));
    }
    if track.len() < 3 {
        return Err(Error::SequenceTooShort {
            what: "compute_deltas",
            needed: 3,
            got: track.len(),
        });
    }
    let mut out = delta_once(track);
    if order == 2 {
        out = delta_once(&out);
    }
    Ok(out)
}

fn delta_once(track: &FeatureTrack) -> FeatureTrack {
    let (n, d) = (track.len(), track.dim);
    let mut data = vec![0.0; n * d];
    for l in 0..n {
        let prev = track.frame(l.saturating_sub(1));
        let next = track.frame((l + 1).min(n - 1));
        for j in 0..d {
            data[l * d + j] = (next[j] - prev[j]) / 2.0;
        }
    }
    FeatureTrack { data, ..track.clone() }
}

/// Per-frame reference values for one or more tasks.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelTrack {
    tasks: Vec<Task>,
    values: Vec<Vec<f64>>,
    pub annotator_count: usize,
    pub frame_rate_hz: f64,
}

impl LabelTrack {
    pub fn new(tasks: Vec<Task>, values: Vec<Vec<f64>>, annotator_count: usize, frame_rate_hz: f64) -> Result<Self> {
        if tasks.is_empty() || tasks.len() != values.len() {
            return Err(Error::LengthMismatch {
                what: "label tasks",
                expected: tasks.len(),
                got: values.len(),
            });
        }
        let n = values[0].len();
        for v in &values {
            if v.len() != n {
                return Err(Error::LengthMismatch {
                    what: "label series",
                    expected: n,
                    got: v.len(),
                });
            }
            if let Some(i) = v.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite {
                    name: "labels".into(),
                    index: i,
                });
            }
        }
        Ok(Self {
            tasks,
            values,
            annotator_count,
            frame_rate_hz,
        })
    }

    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    pub fn get(&self, task: Task) -> Option<&[f64]> {
        self.tasks
            .iter()
            .position(|&t| t == task)
            .map(|i| self.values[i].as_slice())
    }

    pub fn len(&self) -> usize {
        self.values[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Frame-wise mean over annotators, per task.
pub fn average_annotators(annotators: &[LabelTrack]) -> Result<LabelTrack> {
    let first = annotators
        .first()
        .ok_or_else(|| Error::InvalidConfig("no annotator tracks".into()))?;
    for a in annotators {
        if a.tasks != first.tasks {
            return Err(Error::InvalidConfig("annotators disagree on task set".into()));
        }
        if a.len() != first.len() {
            return Err(Error::LengthMismatch {
                what: "annotator track",
                expected: first.len(),
                got: a.len(),
            });
        }
        if a.frame_rate_hz != first.frame_rate_hz {
            return Err(Error::InvalidConfig("annotators disagree on frame rate".into()));
        }
    }
    let k = annotators.len() as f64;
    let values = (0..first.tasks.len())
        .map(|t| {
            (0..first.len())
                .map(|l| annotators.iter().map(|a| a.values[t][l]).sum::<f64>() / k)
                .collect()
        })
        .collect();
    LabelTrack::new(
        first.tasks.clone(),
        values,
        annotators.iter().map(|a| a.annotator_count).sum(),
        first.frame_rate_hz,
    )
}
