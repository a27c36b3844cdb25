use serde::{Deserialize, Serialize};

use super::io::Recording;
use super::normalize::NormStats;
use super::track::{FeatureTrack, Modality};
use crate::error::{Error, Result};

/// How a recording becomes network input: which modalities are fused (speech
/// rows first), the column stride, and the z-score fitted on training data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Preprocessing {
    pub modalities: Vec<Modality>,
    pub stride: usize,
    pub norm: NormStats,
}

fn sorted_modalities(modalities: &[Modality]) -> Result<Vec<Modality>> {
    let mut m = modalities.to_vec();
    m.sort();
    m.dedup();
    if m.is_empty() {
        return Err(Error::InvalidConfig("at least one modality is required".into()));
    }
    Ok(m)
}

/// Early fusion of the requested modalities of `rec`, unnormalized.
pub fn fused_track(rec: &Recording, modalities: &[Modality]) -> Result<FeatureTrack> {
    let mut out: Option<FeatureTrack> = None;
    for &m in &sorted_modalities(modalities)? {
        let t = rec
            .track(m)
            .ok_or_else(|| Error::InvalidConfig(format!("recording `{}` has no {m} features", rec.id)))?;
        out = Some(match out {
            None => t.clone(),
            Some(acc) => acc.concat(t)?,
        });
    }
    out.ok_or_else(|| Error::InvalidConfig("at least one modality is required".into()))
}

impl Preprocessing {
    /// Fits normalization on `train` only.
    pub fn fit<'a>(
        train: impl IntoIterator<Item = &'a Recording>,
        modalities: &[Modality],
        stride: usize,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(Error::InvalidConfig("stride must be at least 1".into()));
        }
        let modalities = sorted_modalities(modalities)?;
        let tracks = train
            .into_iter()
            .map(|r| fused_track(r, &modalities))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            norm: NormStats::fit(&tracks)?,
            modalities,
            stride,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.norm.dim()
    }

    /// Fused, normalized feature track of `rec`.
    pub fn features(&self, rec: &Recording) -> Result<FeatureTrack> {
        self.norm.normalize(&fused_track(rec, &self.modalities)?)
    }
}
