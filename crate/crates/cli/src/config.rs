//! Run configuration shared by every subcommand.

use std::fs;
use std::path::Path;

use neuedit::codec::CodecConfig;
use neuedit::diffusion::{DenoiserConfig, NoiseSchedule, ScheduleKind};
use neuedit::diffusion::train::TrainConfig;
use neuedit::hash::sha256_hex;
use neuedit::pipeline::{EditConfig, PretrainConfig};
use neuedit::world::WorldConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Environment variable that replaces both seeds of a loaded config.
pub const SEED_ENV: &str = "NEUEDIT_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub kind: ScheduleKind,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            kind: ScheduleKind::Linear,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CodecSettings {
    pub patch: usize,
    pub seed: u64,
}

impl Default for CodecSettings {
    fn default() -> Self {
        let c = CodecConfig::default_codec();
        Self {
            patch: c.patch,
            seed: c.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for PretrainSettings {
    fn default() -> Self {
        let t = PretrainConfig::default().train;
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
        }
    }
}

/// `seed` drives model initialisation and pretraining order; `edit.seed`
/// drives the per-edit noise. `NEUEDIT_SEED` overrides both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub world: WorldConfig,
    pub schedule: ScheduleConfig,
    pub codec: CodecSettings,
    pub model: DenoiserConfig,
    pub pretrain: PretrainSettings,
    pub edit: EditConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            world: WorldConfig::default(),
            schedule: ScheduleConfig::default(),
            codec: CodecSettings::default(),
            model: DenoiserConfig::default(),
            pretrain: PretrainSettings::default(),
            edit: EditConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    /// Defaults when `path` is `None`; the seed override is applied either way.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                Self::from_json(&text)?
            }
            None => Self::default(),
        };
        if let Ok(raw) = std::env::var(SEED_ENV) {
            let seed = raw
                .trim()
                .parse::<u64>()
                .map_err(|_| CliError::Config(format!("{SEED_ENV}={raw:?} is not an unsigned integer")))?;
            cfg.seed = seed;
            cfg.edit.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let sched = self.noise_schedule()?;
        self.edit.validate(&sched)?;
        let p = self.codec.patch;
        let w = &self.world;
        if p == 0 || w.height % p != 0 || w.width % p != 0 {
            return Err(CliError::Config(format!(
                "world {}x{} is not divisible by codec patch {p}",
                w.height, w.width
            )));
        }
        if self.model.latent_dim != p * p * neuedit::video::CHANNELS {
            return Err(CliError::Config(format!(
                "model.latent_dim {} must equal 3·patch² = {}",
                self.model.latent_dim,
                p * p * neuedit::video::CHANNELS
            )));
        }
        if self.model.patches != (w.height / p) * (w.width / p) {
            return Err(CliError::Config(format!(
                "model.patches {} must equal the patch grid size {}",
                self.model.patches,
                (w.height / p) * (w.width / p)
            )));
        }
        if w.frames > self.model.max_frames {
            return Err(CliError::Config(format!(
                "world.frames {} exceeds model.max_frames {}",
                w.frames, self.model.max_frames
            )));
        }
        Ok(())
    }

    pub fn noise_schedule(&self) -> Result<NoiseSchedule> {
        Ok(NoiseSchedule::new(self.schedule.steps, self.schedule.kind)?)
    }

    pub fn codec(&self) -> Result<CodecConfig> {
        Ok(CodecConfig::new(self.codec.patch, self.codec.seed)?)
    }

    pub fn pretrain_config(&self, clips: usize) -> PretrainConfig {
        PretrainConfig {
            clips,
            data_seed: PretrainConfig::default().data_seed,
            schedule_steps: self.schedule.steps,
            schedule_kind: self.schedule.kind,
            model: self.model.clone(),
            init_seed: self.seed,
            train: TrainConfig {
                epochs: self.pretrain.epochs,
                batch_size: self.pretrain.batch_size,
                lr: self.pretrain.lr,
                seed: self.seed,
            },
        }
    }

    pub fn content_hash(&self) -> Result<String> {
        Ok(sha256_hex(serde_json::to_string(self)?.as_bytes()))
    }
}
