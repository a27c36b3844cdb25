//! Synthetic dyadic-affect recordings.
//!
//! Three latent affect trajectories drive a speech-like track (13 base
//! channels plus their first and second deltas) and a body-like track of
//! 24 channels. Activation drifts slowest and dominates both modalities;
//! dominance follows activation; valence follows dominance and reaches the
//! speech channels only weakly and the body channels hardly at all. Speech
//! channels lose some or all of their affect drive during silent stretches,
//! so wider input windows see more voiced evidence.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::io::Recording;
use super::track::{compute_deltas, FeatureTrack, LabelTrack, Modality};
use crate::error::{Error, Result};
use crate::task::Task;

pub const SPEECH_DIM: usize = 39;
pub const BODY_DIM: usize = 24;
pub const SYNTHETIC_FRAME_RATE_HZ: f64 = 60.0;
/// Twice the extent of the default 20-column, stride-10 feature image.
pub const MIN_SYNTHETIC_FRAMES: usize = 400;

const BASE_SPEECH_DIM: usize = 13;
/// Fixes the feature mixing shared by every recording.
const WORLD_SEED: u64 = 0x5E_EDAF_FEC7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::Easy, Difficulty::Medium, Difficulty::Hard];

    pub fn name(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Medium => "medium",
            Difficulty::Hard => "hard",
        }
    }

    /// Per-frame noise standard deviation on the speech channels.
    fn speech_noise(self) -> f64 {
        match self {
            Difficulty::Easy => 0.6,
            Difficulty::Medium => 1.2,
            Difficulty::Hard => 5.5,
        }
    }

    /// Gain on the affect drive during silent stretches.
    fn silent_gain(self) -> f64 {
        match self {
            Difficulty::Easy => 0.6,
            Difficulty::Medium => 0.3,
            Difficulty::Hard => 0.0,
        }
    }
}

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Difficulty {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Difficulty::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown difficulty `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticRecording {
    pub speech: FeatureTrack,
    pub body: FeatureTrack,
    pub labels: LabelTrack,
}

/// Loadings of each channel on (activation, dominance, valence, nuisance…).
struct World {
    speech: Vec<[f64; 5]>,
    speech_bias: Vec<f64>,
    body: Vec<[f64; 4]>,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

impl World {
    fn new() -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(WORLD_SEED);
        let speech = (0..BASE_SPEECH_DIM)
            .map(|_| {
                [
                    0.9 * normal(&mut rng),
                    0.5 * normal(&mut rng),
                    0.3 * normal(&mut rng),
                    0.7 * normal(&mut rng),
                    0.7 * normal(&mut rng),
                ]
            })
            .collect();
        let speech_bias = (0..BASE_SPEECH_DIM).map(|_| 0.3 * normal(&mut rng)).collect();
        let body = (0..BODY_DIM)
            .map(|_| {
                [
                    0.1 * normal(&mut rng),
                    0.3 * normal(&mut rng),
                    0.03 * normal(&mut rng),
                    1.0 * normal(&mut rng),
                ]
            })
            .collect();
        Self {
            speech,
            speech_bias,
            body,
        }
    }
}

/// Twice-filtered AR(1) walk, standardized to zero mean and unit variance.
fn smooth_walk(rng: &mut ChaCha8Rng, n: usize, alpha: f64) -> Vec<f64> {
    let burn_in = (5.0 / (1.0 - alpha)) as usize;
    let (mut a, mut b) = (0.0, 0.0);
    let mut out = Vec::with_capacity(n);
    for i in 0..burn_in + n {
        a = alpha * a + normal(rng);
        b = alpha * b + (1.0 - alpha) * a;
        if i >= burn_in {
            out.push(b);
        }
    }
    let mean = out.iter().sum::<f64>() / n as f64;
    let sd = (out.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64).sqrt();
    out.iter_mut().for_each(|v| *v = (*v - mean) / sd);
    out
}

/// Removes the component along the unit-variance, zero-mean `basis` and
/// restandardizes, so the cross-task couplings hold exactly per recording.
fn orthogonalize(mut x: Vec<f64>, basis: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let proj = x.iter().zip(basis).map(|(a, b)| a * b).sum::<f64>() / n;
    x.iter_mut().zip(basis).for_each(|(a, b)| *a -= proj * b);
    let mean = x.iter().sum::<f64>() / n;
    let sd = (x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
    x.iter_mut().for_each(|v| *v = (*v - mean) / sd);
    x
}

/// Alternating voiced/silent stretches; 1 while voiced.
fn voicing(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    let mut voiced = rng.random_bool(0.5);
    while out.len() < n {
        let len = if voiced {
            rng.random_range(120..600)
        } else {
            rng.random_range(120..900)
        };
        out.extend(std::iter::repeat_n(if voiced { 1.0 } else { 0.0 }, len));
        voiced = !voiced;
    }
    out.truncate(n);
    out
}

/// One recording, fully determined by `(seed, frames, difficulty)`.
pub fn generate_synthetic(seed: u64, frames: usize, difficulty: Difficulty) -> Result<SyntheticRecording> {
    if frames < MIN_SYNTHETIC_FRAMES {
        return Err(Error::SequenceTooShort {
            what: "synthetic recording",
            needed: MIN_SYNTHETIC_FRAMES,
            got: frames,
        });
    }
    let world = World::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let u_act = smooth_walk(&mut rng, frames, 0.998);
    let u_dom = orthogonalize(smooth_walk(&mut rng, frames, 0.995), &u_act);
    let u_val = orthogonalize(orthogonalize(smooth_walk(&mut rng, frames, 0.995), &u_act), &u_dom);
    let nuisance: Vec<Vec<f64>> = (0..3).map(|_| smooth_walk(&mut rng, frames, 0.97)).collect();
    let silent = difficulty.silent_gain();
    let gate: Vec<f64> = voicing(&mut rng, frames)
        .into_iter()
        .map(|v| v + (1.0 - v) * silent)
        .collect();

    let (c_dom, c_val, c_val_dom) = (0.7, 0.4, 0.5);
    let act = u_act.clone();
    let dom: Vec<f64> = (0..frames)
        .map(|l| c_dom * u_act[l] + (1.0 - c_dom * c_dom).sqrt() * u_dom[l])
        .collect();
    let val: Vec<f64> = (0..frames)
        .map(|l| {
            c_val * u_act[l] + c_val_dom * u_dom[l] + (1.0 - c_val * c_val - c_val_dom * c_val_dom).sqrt() * u_val[l]
        })
        .collect();

    let sigma = difficulty.speech_noise();
    let mut base = Vec::with_capacity(frames * BASE_SPEECH_DIM);
    for l in 0..frames {
        let z = [act[l], dom[l], val[l], nuisance[0][l], nuisance[1][l]];
        let g = gate[l];
        for (w, b) in world.speech.iter().zip(&world.speech_bias) {
            let drive: f64 =
                w[..3].iter().zip(&z[..3]).map(|(a, b)| a * b).sum::<f64>() * g + w[3] * z[3] + w[4] * z[4];
            base.push((drive + b).tanh() + sigma * normal(&mut rng));
        }
    }
    let base = FeatureTrack::new(Modality::Speech, SYNTHETIC_FRAME_RATE_HZ, BASE_SPEECH_DIM, base)?;
    let speech = base
        .concat(&compute_deltas(&base, 1)?)?
        .concat(&compute_deltas(&base, 2)?)?;

    let body_sigma = 2.0 * sigma;
    let mut body = Vec::with_capacity(frames * BODY_DIM);
    for l in 0..frames {
        let z = [act[l], dom[l], val[l], nuisance[2][l]];
        for w in &world.body {
            let drive: f64 = w.iter().zip(&z).map(|(a, b)| a * b).sum();
            body.push(0.8 * drive.tanh() + body_sigma * normal(&mut rng));
        }
    }
    let body = FeatureTrack::new(Modality::Body, SYNTHETIC_FRAME_RATE_HZ, BODY_DIM, body)?;

    let scale = 0.4;
    let labels = LabelTrack::new(
        Task::ALL.to_vec(),
        [act, val, dom]
            .into_iter()
            .map(|v| v.into_iter().map(|x| scale * x).collect())
            .collect(),
        1,
        SYNTHETIC_FRAME_RATE_HZ,
    )?;
    Ok(SyntheticRecording { speech, body, labels })
}

/// `count` recordings, each a distinct dyad `spk{2i}`/`spk{2i+1}`, with
/// per-recording seeds derived from `seed`.
pub fn synthetic_corpus(seed: u64, count: usize, frames: usize, difficulty: Difficulty) -> Result<Vec<Recording>> {
    (0..count)
        .map(|i| {
            let r = generate_synthetic(recording_seed(seed, i), frames, difficulty)?;
            Ok(Recording {
                id: format!("rec{i:03}"),
                speakers: vec![format!("spk{:03}", 2 * i), format!("spk{:03}", 2 * i + 1)],
                speech: Some(r.speech),
                body: Some(r.body),
                labels: r.labels,
            })
        })
        .collect()
}

pub fn recording_seed(corpus_seed: u64, index: usize) -> u64 {
    corpus_seed.wrapping_mul(1_000_003).wrapping_add(index as u64)
}
