//! Binary checkpoint: magic, little-endian `u64` header length, JSON header,
//! then the model parameters followed by the codec matrix as little-endian
//! `f64`s.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::model::{Denoiser, DenoiserConfig};
use super::schedule::{NoiseSchedule, ScheduleKind};
use crate::codec::CodecConfig;
use crate::error::{Error, Result};
use crate::hash::sha256_hex;

const MAGIC: &[u8; 8] = b"NEUCKPT1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub model: DenoiserConfig,
    pub schedule_kind: ScheduleKind,
    pub schedule_steps: usize,
    pub init_seed: u64,
    pub codebook_hash: String,
    pub codec_patch: usize,
    pub codec_seed: u64,
    pub codec_hash: String,
    pub num_params: usize,
    /// SHA-256 of the parameter blob (codec excluded).
    pub params_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Denoiser,
    pub codec: CodecConfig,
    pub init_seed: u64,
    pub codebook_hash: String,
}

fn to_le(values: impl Iterator<Item = f64>) -> Vec<u8> {
    values.flat_map(|v| v.to_le_bytes()).collect()
}

fn from_le(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect()
}

impl Checkpoint {
    pub fn header(&self) -> CheckpointHeader {
        CheckpointHeader {
            model: self.model.config.clone(),
            schedule_kind: self.model.schedule.kind,
            schedule_steps: self.model.schedule.steps(),
            init_seed: self.init_seed,
            codebook_hash: self.codebook_hash.clone(),
            codec_patch: self.codec.patch,
            codec_seed: self.codec.seed,
            codec_hash: self.codec.content_hash(),
            num_params: self.model.num_params(),
            params_hash: sha256_hex(&to_le(self.model.params.iter().copied())),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header())?;
        let mut out = Vec::with_capacity(16 + header.len() + 8 * (self.model.num_params() + self.codec.q.len()));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend(to_le(self.model.params.iter().copied()));
        out.extend(to_le(self.codec.q.iter().copied()));
        Ok(out)
    }

    /// Content hash of the serialized checkpoint.
    pub fn content_hash(&self) -> Result<String> {
        Ok(sha256_hex(&self.to_bytes()?))
    }

    pub fn from_bytes(bytes: &[u8], origin: &str) -> Result<Self> {
        let bad = |reason: &str| Error::Format {
            path: origin.into(),
            reason: reason.to_string(),
        };
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("missing checkpoint magic"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(16..).ok_or_else(|| bad("truncated"))?;
        if body.len() < hlen {
            return Err(bad("truncated header"));
        }
        let header: CheckpointHeader = serde_json::from_slice(&body[..hlen])?;
        let blob = &body[hlen..];
        let d = header.codec_patch * header.codec_patch * crate::video::CHANNELS;
        if blob.len() != 8 * (header.num_params + d * d) {
            return Err(bad("blob length does not match header"));
        }
        let pbytes = &blob[..8 * header.num_params];
        let found = sha256_hex(pbytes);
        if found != header.params_hash {
            return Err(Error::HashMismatch {
                what: "parameters".into(),
                expected: header.params_hash,
                found,
            });
        }
        let q = Array2::from_shape_vec((d, d), from_le(&blob[8 * header.num_params..]))
            .map_err(|e| bad(&e.to_string()))?;
        let codec = CodecConfig {
            patch: header.codec_patch,
            seed: header.codec_seed,
            q,
        };
        let found = codec.content_hash();
        if found != header.codec_hash {
            return Err(Error::HashMismatch {
                what: "codec".into(),
                expected: header.codec_hash,
                found,
            });
        }
        let schedule = NoiseSchedule::new(header.schedule_steps, header.schedule_kind)?;
        let model = Denoiser::from_params(header.model, schedule, from_le(pbytes))?;
        Ok(Self {
            model,
            codec,
            init_seed: header.init_seed,
            codebook_hash: header.codebook_hash,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }
}
