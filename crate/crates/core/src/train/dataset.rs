use crate::data::{FeatureTrack, FramingConfig, LabelTrack, Preprocessing, Recording};
use crate::error::{Error, Result};
use crate::task::Task;
use crate::tensor::Tensor;

/// Normalized recordings plus the list of frame centers used as samples.
#[derive(Clone, Debug)]
pub struct FramedData {
    ids: Vec<String>,
    tracks: Vec<FeatureTrack>,
    labels: Vec<LabelTrack>,
    /// `(recording, center frame)`
    centers: Vec<(usize, usize)>,
    window: usize,
    stride: usize,
}

impl FramedData {
    /// Samples every `hop`-th frame of each recording as a center.
    pub fn new<'a>(
        recordings: impl IntoIterator<Item = &'a Recording>,
        preprocessing: &Preprocessing,
        window: usize,
        hop: usize,
    ) -> Result<Self> {
        if hop == 0 {
            return Err(Error::InvalidConfig("sample hop must be at least 1".into()));
        }
        FramingConfig::new(window, preprocessing.stride, preprocessing.input_dim())?;
        let mut out = Self {
            ids: Vec::new(),
            tracks: Vec::new(),
            labels: Vec::new(),
            centers: Vec::new(),
            window,
            stride: preprocessing.stride,
        };
        for (r, rec) in recordings.into_iter().enumerate() {
            let track = preprocessing.features(rec)?;
            out.centers.extend((0..track.len()).step_by(hop).map(|l| (r, l)));
            out.ids.push(rec.id.clone());
            out.tracks.push(track);
            out.labels.push(rec.labels.clone());
        }
        if out.centers.is_empty() {
            return Err(Error::InvalidConfig("no samples: empty recording set".into()));
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.tracks[0].dim()
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn recording_ids(&self) -> &[String] {
        &self.ids
    }

    pub fn centers(&self) -> &[(usize, usize)] {
        &self.centers
    }

    /// Feature images of the given samples as `[batch, N, P]`.
    pub fn batch(&self, samples: &[usize]) -> Tensor {
        let p = self.input_dim();
        let framing = FramingConfig {
            frames: self.window,
            stride: self.stride,
            dim: p,
        };
        let mut data = Vec::with_capacity(samples.len() * self.window * p);
        for &s in samples {
            let (r, l) = self.centers[s];
            let track = &self.tracks[r];
            for src in framing.column_frames(l, track.len()) {
                data.extend_from_slice(track.frame(src));
            }
        }
        Tensor::new(vec![samples.len(), self.window, p], data).expect("batch length matches shape")
    }

    /// Reference values of `task` at the given samples.
    pub fn targets(&self, samples: &[usize], task: Task) -> Result<Vec<f64>> {
        samples
            .iter()
            .map(|&s| {
                let (r, l) = self.centers[s];
                self.labels[r]
                    .get(task)
                    .map(|v| v[l])
                    .ok_or_else(|| Error::InvalidConfig(format!("recording `{}` has no {task} labels", self.ids[r])))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{frame_features, generate_synthetic, Difficulty, Modality};

    #[test]
    fn batch_matches_frame_features() {
        let s = generate_synthetic(1, 500, Difficulty::Easy).unwrap();
        let rec = Recording {
            id: "r".into(),
            speakers: vec!["a".into()],
            speech: Some(s.speech),
            body: Some(s.body),
            labels: s.labels,
        };
        let pre = Preprocessing::fit([&rec], &[Modality::Body, Modality::Speech], 10).unwrap();
        let data = FramedData::new([&rec], &pre, 20, 7).unwrap();
        assert_eq!(data.len(), 500usize.div_ceil(7));
        let b = data.batch(&[0, 30]);
        assert_eq!(b.shape(), &[2, 20, 63]);
        let fused = pre.features(&rec).unwrap();
        let img = frame_features(&fused, &FramingConfig::new(20, 10, 63).unwrap(), 30 * 7).unwrap();
        let expected = img.image.transpose().unwrap();
        assert_eq!(&b.data()[20 * 63..], expected.data());
        let t = data.targets(&[30], Task::Valence).unwrap();
        assert_eq!(t[0], rec.labels.get(Task::Valence).unwrap()[210]);
    }
}
