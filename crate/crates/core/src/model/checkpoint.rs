//! Binary checkpoint container.
//!
//! Layout: `CERCKPT\0`, u32 version, u64 header length, JSON header, the
//! tensors as little-endian f64 in header order, then a SHA-256 of every
//! preceding byte.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{check_parameters, ModelConfig};
use crate::data::Preprocessing;
use crate::error::{Error, Result};
use crate::params::ParameterSet;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"CERCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

/// Position of a ChaCha8 stream, enough to resume it exactly.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    /// Stored as a decimal string; JSON numbers cannot carry 128 bits portably.
    #[serde(with = "u128_string")]
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(seed: u64, rng: &ChaCha8Rng) -> Self {
        Self {
            seed,
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

mod u128_string {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u128, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u128, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ParameterSet,
    pub epoch: usize,
    pub val_loss: f64,
    pub rng: RngState,
    /// Input pipeline the parameters were trained against.
    pub preprocessing: Option<Preprocessing>,
}

impl Checkpoint {
    /// Fails unless this checkpoint was written for `config`.
    pub fn ensure_config(&self, config: &ModelConfig) -> Result<()> {
        if &self.config != config {
            return Err(Error::ConfigMismatch(format!(
                "checkpoint holds a {} model over {:?}, expected {} over {:?}",
                self.config.mode, self.config.tasks, config.mode, config.tasks
            )));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    epoch: usize,
    /// Bit pattern, so non-finite losses survive.
    val_loss_bits: u64,
    rng: RngState,
    preprocessing: Option<Preprocessing>,
    tensors: Vec<TensorEntry>,
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    check_parameters(&ckpt.config, &ckpt.params)?;
    let header = Header {
        config: ckpt.config.clone(),
        epoch: ckpt.epoch,
        val_loss_bits: ckpt.val_loss.to_bits(),
        rng: ckpt.rng,
        preprocessing: ckpt.preprocessing.clone(),
        tensors: ckpt
            .params
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(20 + json.len() + 8 * ckpt.params.num_scalars() + DIGEST_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in ckpt.params.iter() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

fn corrupt(msg: &str) -> Error {
    Error::Corrupt(msg.to_string())
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() + 12 + DIGEST_LEN || &bytes[..8] != MAGIC {
        return Err(corrupt("not a checkpoint file or truncated"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(corrupt("checksum mismatch"));
    }
    let header_len = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
    let header_end = 20usize
        .checked_add(header_len)
        .filter(|&e| e <= body.len())
        .ok_or_else(|| corrupt("header length exceeds file"))?;
    let header: Header = serde_json::from_slice(&body[20..header_end])?;
    let mut data = body[header_end..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let mut params = ParameterSet::new();
    for entry in header.tensors {
        let n = entry.shape.iter().product();
        let values: Vec<f64> = data.by_ref().take(n).collect();
        if values.len() != n {
            return Err(corrupt("tensor data shorter than header"));
        }
        params.insert(entry.name, Tensor::new(entry.shape, values)?);
    }
    if data.next().is_some() || (body.len() - header_end) % 8 != 0 {
        return Err(corrupt("trailing tensor data"));
    }
    check_parameters(&header.config, &params)?;
    Ok(Checkpoint {
        config: header.config,
        params,
        epoch: header.epoch,
        val_loss: f64::from_bits(header.val_loss_bits),
        rng: header.rng,
        preprocessing: header.preprocessing,
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(ckpt)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Modality, NormStats};
    use crate::model::{build_model, predict};
    use crate::task::Task;
    use rand::Rng;

    fn sample() -> Checkpoint {
        let config = ModelConfig::mtl(63, 20);
        Checkpoint {
            params: build_model(&config, 3).unwrap(),
            config,
            epoch: 17,
            val_loss: 0.123456789012345,
            rng: RngState {
                seed: 9,
                word_pos: (1u128 << 70) + 5,
            },
            preprocessing: Some(Preprocessing {
                modalities: vec![Modality::Speech, Modality::Body],
                stride: 10,
                norm: NormStats {
                    mean: vec![0.1; 63],
                    std: vec![1.0 / 3.0; 63],
                },
            }),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let c = sample();
        save_checkpoint(&c, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, c);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::new(
            vec![2, 20, 63],
            (0..2 * 20 * 63).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let (a, b) = (
            predict(&c.config, &c.params, &x).unwrap(),
            predict(&back.config, &back.params, &x).unwrap(),
        );
        for (u, v) in a.iter().flatten().zip(b.iter().flatten()) {
            assert_eq!(u.to_bits(), v.to_bits());
        }
        assert_eq!(encode_checkpoint(&c).unwrap(), std::fs::read(&path).unwrap());
    }

    #[test]
    fn truncation_and_bit_flips_are_corruption() {
        let bytes = encode_checkpoint(&sample()).unwrap();
        for cut in [0, 10, 30, bytes.len() / 2, bytes.len() - 1] {
            assert!(
                matches!(decode_checkpoint(&bytes[..cut]), Err(Error::Corrupt(_))),
                "cut {cut}"
            );
        }
        let mut flipped = bytes.clone();
        let i = flipped.len() - 100;
        flipped[i] ^= 1;
        assert!(matches!(decode_checkpoint(&flipped), Err(Error::Corrupt(_))));
    }

    #[test]
    fn version_is_checked() {
        let mut bytes = encode_checkpoint(&sample()).unwrap();
        bytes[8] = 2;
        assert!(matches!(
            decode_checkpoint(&bytes),
            Err(Error::VersionMismatch { found: 2, expected: 1 })
        ));
    }

    #[test]
    fn stl_checkpoint_refuses_mtl_config() {
        let config = ModelConfig::stl(63, 20, Task::Valence);
        let c = Checkpoint {
            params: build_model(&config, 0).unwrap(),
            config,
            ..sample()
        };
        let back = decode_checkpoint(&encode_checkpoint(&c).unwrap()).unwrap();
        assert!(back.ensure_config(&ModelConfig::stl(63, 20, Task::Valence)).is_ok());
        assert!(matches!(
            back.ensure_config(&ModelConfig::mtl(63, 20)),
            Err(Error::ConfigMismatch(_))
        ));
    }

    #[test]
    fn params_must_match_config() {
        let mut c = sample();
        c.params = build_model(&ModelConfig::mtl(63, 40), 0).unwrap();
        assert!(encode_checkpoint(&c).is_ok(), "conv shapes do not depend on the window");
        c.params = build_model(&ModelConfig::stl(63, 20, Task::Activation), 0).unwrap();
        assert!(encode_checkpoint(&c).is_err());
    }

    #[test]
    fn rng_state_resumes_stream() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let _: Vec<u32> = (0..13).map(|_| rng.random()).collect();
        let state = RngState::capture(42, &rng);
        let mut resumed = state.restore();
        for _ in 0..50 {
            assert_eq!(rng.random::<u64>(), resumed.random::<u64>());
        }
    }
}
