use serde::{Deserialize, Serialize};

use super::track::FeatureTrack;
use crate::error::{Error, Result};

/// Per-dimension z-score statistics. A dimension with zero variance has
/// `std == 0` and is only shifted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    /// Pooled population statistics over every frame of `tracks`.
    pub fn fit<'a>(tracks: impl IntoIterator<Item = &'a FeatureTrack>) -> Result<Self> {
        let tracks: Vec<&FeatureTrack> = tracks.into_iter().collect();
        let dim = tracks
            .first()
            .map(|t| t.dim())
            .ok_or_else(|| Error::InvalidConfig("no tracks to fit normalization".into()))?;
        let mut count = 0usize;
        let mut mean = vec![0.0; dim];
        for t in &tracks {
            if t.dim() != dim {
                return Err(Error::LengthMismatch {
                    what: "normalization dimension",
                    expected: dim,
                    got: t.dim(),
                });
            }
            for f in t.frames() {
                for (m, v) in mean.iter_mut().zip(f) {
                    *m += v;
                }
            }
            count += t.len();
        }
        if count == 0 {
            return Err(Error::EmptyReduction);
        }
        mean.iter_mut().for_each(|m| *m /= count as f64);
        let mut var = vec![0.0; dim];
        for t in &tracks {
            for f in t.frames() {
                for ((s, v), m) in var.iter_mut().zip(f).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
        }
        let std = var.into_iter().map(|s| (s / count as f64).sqrt()).collect();
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, track: &FeatureTrack) -> Result<()> {
        if track.dim() != self.dim() {
            return Err(Error::LengthMismatch {
                what: "normalization dimension",
                expected: self.dim(),
                got: track.dim(),
            });
        }
        Ok(())
    }

    pub fn normalize(&self, track: &FeatureTrack) -> Result<FeatureTrack> {
        self.check(track)?;
        let mut out = track.clone();
        let d = self.dim();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let j = i % d;
            *v -= self.mean[j];
            if self.std[j] > 0.0 {
                *v /= self.std[j];
            }
        }
        Ok(out)
    }

    pub fn denormalize(&self, track: &FeatureTrack) -> Result<FeatureTrack> {
        self.check(track)?;
        let mut out = track.clone();
        let d = self.dim();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let j = i % d;
            if self.std[j] > 0.0 {
                *v *= self.std[j];
            }
            *v += self.mean[j];
        }
        Ok(out)
    }
}
