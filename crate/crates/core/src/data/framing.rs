use serde::{Deserialize, Serialize};

use super::track::FeatureTrack;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Geometry of a feature image: `frames` columns sampled every `stride`
/// frames around a center, each column `dim` features tall.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FramingConfig {
    pub frames: usize,
    pub stride: usize,
    pub dim: usize,
}

impl FramingConfig {
    pub fn new(frames: usize, stride: usize, dim: usize) -> Result<Self> {
        let c = Self { frames, stride, dim };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 || !self.frames.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!(
                "frames per image must be even and positive, got {}",
                self.frames
            )));
        }
        if self.stride == 0 {
            return Err(Error::InvalidConfig("stride must be at least 1".into()));
        }
        if self.dim == 0 {
            return Err(Error::InvalidConfig("feature dimension must be positive".into()));
        }
        Ok(())
    }

    /// Temporal extent in frames, `N·t`.
    pub fn extent(&self) -> usize {
        self.frames * self.stride
    }

    /// Source frame of each column for center `l` in a track of `len`
    /// frames: offsets `k·t` for `k = −N/2+1 ..= N/2`, clamped to the track.
    pub fn column_frames(&self, l: usize, len: usize) -> impl Iterator<Item = usize> {
        let half = (self.frames / 2) as isize;
        let (t, l, last) = (self.stride as isize, l as isize, len as isize - 1);
        (1 - half..=half).map(move |k| (l + k * t).clamp(0, last) as usize)
    }
}

/// A `P×N` feature image centered on frame `center`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureImage {
    pub image: Tensor,
    pub center: usize,
}

impl FeatureImage {
    pub fn rows(&self) -> usize {
        self.image.shape()[0]
    }

    pub fn columns(&self) -> usize {
        self.image.shape()[1]
    }
}

pub fn frame_features(track: &FeatureTrack, config: &FramingConfig, l: usize) -> Result<FeatureImage> {
    config.validate()?;
    if track.is_empty() {
        return Err(Error::SequenceTooShort {
            what: "frame_features",
            needed: 1,
            got: 0,
        });
    }
    if track.dim() != config.dim {
        return Err(Error::LengthMismatch {
            what: "feature image rows",
            expected: config.dim,
            got: track.dim(),
        });
    }
    if l >= track.len() {
        return Err(Error::InvalidConfig(format!(
            "center frame {l} outside track of {} frames",
            track.len()
        )));
    }
    let (p, n) = (config.dim, config.frames);
    let mut data = vec![0.0; p * n];
    for (j, src) in config.column_frames(l, track.len()).enumerate() {
        for (i, &v) in track.frame(src).iter().enumerate() {
            data[i * n + j] = v;
        }
    }
    Ok(FeatureImage {
        image: Tensor::new(vec![p, n], data)?,
        center: l,
    })
}

/// Row-wise concatenation, speech rows first.
pub fn fuse_modalities(speech: &FeatureImage, body: &FeatureImage) -> Result<FeatureImage> {
    if speech.columns() != body.columns() {
        return Err(Error::ShapeMismatch {
            op: "fuse_modalities",
            lhs: speech.image.shape().to_vec(),
            rhs: body.image.shape().to_vec(),
        });
    }
    if speech.center != body.center {
        return Err(Error::InvalidConfig(format!(
            "misaligned images: centers {} and {}",
            speech.center, body.center
        )));
    }
    let rows = speech.rows() + body.rows();
    let mut data = speech.image.data().to_vec();
    data.extend_from_slice(body.image.data());
    Ok(FeatureImage {
        image: Tensor::new(vec![rows, speech.columns()], data)?,
        center: speech.center,
    })
}

/// Inverse of [`fuse_modalities`]: the first `speech_rows` rows, then the rest.
pub fn unfuse(fused: &FeatureImage, speech_rows: usize) -> Result<(FeatureImage, FeatureImage)> {
    let (rows, n) = (fused.rows(), fused.columns());
    if speech_rows == 0 || speech_rows >= rows {
        return Err(Error::InvalidConfig(format!(
            "cannot split {rows} rows at {speech_rows}"
        )));
    }
    let (s, b) = fused.image.data().split_at(speech_rows * n);
    Ok((
        FeatureImage {
            image: Tensor::new(vec![speech_rows, n], s.to_vec())?,
            center: fused.center,
        },
        FeatureImage {
            image: Tensor::new(vec![rows - speech_rows, n], b.to_vec())?,
            center: fused.center,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Modality;

    fn ramp(len: usize, dim: usize) -> FeatureTrack {
        let data = (0..len)
            .flat_map(|l| (0..dim).map(move |j| (l * 100 + j) as f64))
            .collect();
        FeatureTrack::new(Modality::Speech, 60.0, dim, data).unwrap()
    }

    fn column(img: &FeatureImage, j: usize) -> Vec<f64> {
        (0..img.rows())
            .map(|i| img.image.data()[i * img.columns() + j])
            .collect()
    }

    #[test]
    fn columns_follow_offset_rule() {
        let track = ramp(10, 1);
        let img = frame_features(&track, &FramingConfig::new(4, 1, 1).unwrap(), 4).unwrap();
        assert_eq!(img.image.data(), &[300.0, 400.0, 500.0, 600.0]);
    }

    #[test]
    fn default_geometry() {
        let cfg = FramingConfig::new(20, 10, 63).unwrap();
        let img = frame_features(&ramp(1000, 63), &cfg, 500).unwrap();
        assert_eq!(img.image.shape(), &[63, 20]);
        assert!((cfg.extent() as f64 / 60.0 - 3.3).abs() < 0.05);
        assert_eq!(column(&img, 9), ramp(1000, 63).frame(500));
        assert_eq!(column(&img, 0)[0], 410.0 * 100.0);
    }

    #[test]
    fn clamping_at_edges() {
        let track = ramp(30, 2);
        let cfg = FramingConfig::new(6, 4, 2).unwrap();
        let img = frame_features(&track, &cfg, 0).unwrap();
        assert_eq!(img.columns(), 6);
        for j in 0..3 {
            assert_eq!(column(&img, j), track.frame(0));
        }
        let img = frame_features(&track, &cfg, 29).unwrap();
        assert_eq!(column(&img, 5), track.frame(29));
    }

    #[test]
    fn framing_errors() {
        let cfg = FramingConfig::new(4, 1, 1).unwrap();
        let empty = FeatureTrack::new(Modality::Body, 60.0, 1, vec![]).unwrap();
        assert!(frame_features(&empty, &cfg, 0).is_err());
        assert!(frame_features(&ramp(5, 1), &cfg, 5).is_err());
        assert!(frame_features(&ramp(5, 2), &cfg, 0).is_err());
        assert!(FramingConfig::new(5, 1, 1).is_err());
        assert!(FramingConfig::new(4, 0, 1).is_err());
    }

    #[test]
    fn fuse_and_unfuse() {
        let s = frame_features(&ramp(50, 39), &FramingConfig::new(20, 1, 39).unwrap(), 25).unwrap();
        let zeros = FeatureTrack::new(Modality::Body, 60.0, 24, vec![0.0; 50 * 24]).unwrap();
        let b = frame_features(&zeros, &FramingConfig::new(20, 1, 24).unwrap(), 25).unwrap();
        let f = fuse_modalities(&s, &b).unwrap();
        assert_eq!(f.image.shape(), &[63, 20]);
        assert_eq!(&f.image.data()[..39 * 20], s.image.data());
        let (s2, b2) = unfuse(&f, 39).unwrap();
        assert_eq!((s2, b2), (s.clone(), b.clone()));

        let shifted = FeatureImage {
            center: 24,
            ..b.clone()
        };
        assert!(fuse_modalities(&s, &shifted).is_err());
        let narrow = frame_features(&zeros, &FramingConfig::new(10, 1, 24).unwrap(), 25).unwrap();
        assert!(fuse_modalities(&s, &narrow).is_err());
    }

    #[test]
    fn track_fusion_commutes_with_framing() {
        let s = ramp(40, 3);
        let b = FeatureTrack::new(Modality::Body, 60.0, 2, (0..80).map(|v| -(v as f64)).collect()).unwrap();
        let fused = s.concat(&b).unwrap();
        for l in [0, 7, 39] {
            let via_track = frame_features(&fused, &FramingConfig::new(8, 3, 5).unwrap(), l).unwrap();
            let si = frame_features(&s, &FramingConfig::new(8, 3, 3).unwrap(), l).unwrap();
            let bi = frame_features(&b, &FramingConfig::new(8, 3, 2).unwrap(), l).unwrap();
            assert_eq!(via_track, fuse_modalities(&si, &bi).unwrap());
        }
    }
}
