//! Run configuration: two built-in profiles covering every knob, partial
//! overlay files in TOML or JSON (unknown keys rejected), and a seed override
//! hook for the VOT_SEED environment variable.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decoder::{DecoderConfig, Variant};
use crate::encoder::EncoderConfig;
use crate::head::{LossWeights, Representation};
use crate::train::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {msg}")]
    Parse { path: PathBuf, msg: String },
    #[error("config files must end in .toml or .json: {path}")]
    UnsupportedExtension { path: PathBuf },
    #[error("invalid configuration: {what}")]
    Invalid { what: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadConfig {
    pub representation: Representation,
    pub lambda: f64,
    pub gamma: f64,
}

impl HeadConfig {
    pub fn weights(&self) -> LossWeights {
        LossWeights { lambda: self.lambda, gamma: self.gamma }
    }
}

/// Training-window shape: frames per sequence and the frame stride between
/// them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub views: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub image: ImageConfig,
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub head: HeadConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    Desk,
    Paper,
}

impl FromStr for Profile {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Profile, ConfigError> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            other => Err(ConfigError::Invalid { what: format!("unknown profile '{other}'") }),
        }
    }
}

impl RunConfig {
    /// Small enough to train on a single core in minutes.
    pub fn desk() -> RunConfig {
        RunConfig {
            image: ImageConfig { height: 64, width: 64, channels: 1 },
            encoder: EncoderConfig { patch_size: 16, hidden_dim: 64, frozen_layers: 0, seed: 11 },
            decoder: DecoderConfig {
                layers: 4,
                hidden_dim: 64,
                heads: 4,
                ff_dim: 128,
                variant: Variant::TimeSpace,
            },
            head: HeadConfig { representation: Representation::RotationMatrix, lambda: 10.0, gamma: 1.0 },
            train: TrainConfig {
                epochs: 60,
                warmup_epochs: 6,
                batch_size: 8,
                learning_rate: 3e-4,
                weight_decay: 0.01,
                seed: 42,
            },
            data: DataConfig { views: 4, stride: 3 },
        }
    }

    /// Full-size dimensions; far too slow for this crate's CPU math, kept for
    /// cost accounting and as an overlay base.
    pub fn paper() -> RunConfig {
        RunConfig {
            image: ImageConfig { height: 224, width: 224, channels: 3 },
            encoder: EncoderConfig { patch_size: 16, hidden_dim: 768, frozen_layers: 0, seed: 11 },
            decoder: DecoderConfig {
                layers: 12,
                hidden_dim: 768,
                heads: 12,
                ff_dim: 3072,
                variant: Variant::TimeSpace,
            },
            head: HeadConfig { representation: Representation::RotationMatrix, lambda: 10.0, gamma: 1.0 },
            train: TrainConfig {
                epochs: 100,
                warmup_epochs: 30,
                batch_size: 64,
                learning_rate: 1e-5,
                weight_decay: 0.01,
                seed: 42,
            },
            data: DataConfig { views: 8, stride: 3 },
        }
    }

    pub fn for_profile(profile: Profile) -> RunConfig {
        match profile {
            Profile::Desk => RunConfig::desk(),
            Profile::Paper => RunConfig::paper(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |what: String| Err(ConfigError::Invalid { what });
        if self.image.channels != 1 && self.image.channels != 3 {
            return fail(format!("channels must be 1 or 3, got {}", self.image.channels));
        }
        if self.encoder.patch_size == 0
            || self.image.height % self.encoder.patch_size != 0
            || self.image.width % self.encoder.patch_size != 0
        {
            return fail(format!(
                "patch size {} must divide image {}x{}",
                self.encoder.patch_size, self.image.height, self.image.width
            ));
        }
        if self.encoder.hidden_dim != self.decoder.hidden_dim {
            return fail(format!(
                "encoder width {} differs from decoder width {}",
                self.encoder.hidden_dim, self.decoder.hidden_dim
            ));
        }
        if self.decoder.heads == 0 || self.decoder.hidden_dim % self.decoder.heads != 0 {
            return fail(format!(
                "hidden dim {} must be a positive multiple of heads {}",
                self.decoder.hidden_dim, self.decoder.heads
            ));
        }
        if self.decoder.ff_dim == 0 {
            return fail("feed-forward width must be positive".into());
        }
        if !(self.head.lambda > 0.0) || !(self.head.gamma > 0.0) {
            return fail(format!(
                "loss weights must be positive, got lambda {} gamma {}",
                self.head.lambda, self.head.gamma
            ));
        }
        if self.train.batch_size == 0 {
            return fail("batch size must be positive".into());
        }
        if !(self.train.learning_rate > 0.0) {
            return fail(format!("learning rate must be positive, got {}", self.train.learning_rate));
        }
        if self.train.weight_decay < 0.0 {
            return fail(format!("weight decay must be nonnegative, got {}", self.train.weight_decay));
        }
        if self.data.views < 2 {
            return fail(format!("sequences need at least two views, got {}", self.data.views));
        }
        if self.data.stride == 0 {
            return fail("stride must be at least one".into());
        }
        Ok(())
    }

    /// Applies a partial config file on top of this one. TOML or JSON by
    /// extension; unknown keys are errors.
    pub fn overlay_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        let patch: FilePatch = match ext {
            "toml" => toml::from_str(&text)
                .map_err(|e| ConfigError::Parse { path: path.to_path_buf(), msg: e.to_string() })?,
            "json" => serde_json::from_str(&text)
                .map_err(|e| ConfigError::Parse { path: path.to_path_buf(), msg: e.to_string() })?,
            _ => return Err(ConfigError::UnsupportedExtension { path: path.to_path_buf() }),
        };
        patch.apply(self);
        Ok(())
    }

    /// Writes the fully resolved config as pretty JSON, returning the path.
    pub fn write_effective(&self, dir: &Path) -> std::io::Result<PathBuf> {
        let path = dir.join("config.json");
        let json = serde_json::to_string_pretty(self).expect("config serializes");
        std::fs::write(&path, json + "\n")?;
        Ok(path)
    }
}

/// Resolves a profile, an optional overlay file, and an optional seed
/// override (highest precedence) into a validated config.
pub fn resolve(
    profile: Profile,
    file: Option<&Path>,
    seed_override: Option<u64>,
) -> Result<RunConfig, ConfigError> {
    let mut cfg = RunConfig::for_profile(profile);
    if let Some(path) = file {
        cfg.overlay_file(path)?;
    }
    if let Some(seed) = seed_override {
        cfg.train.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

macro_rules! patch_fields {
    ($patch:expr, $target:expr, $($field:ident),+ $(,)?) => {
        $(if let Some(v) = $patch.$field {
            $target.$field = v;
        })+
    };
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FilePatch {
    image: Option<ImagePatch>,
    encoder: Option<EncoderPatch>,
    decoder: Option<DecoderPatch>,
    head: Option<HeadPatch>,
    train: Option<TrainPatch>,
    data: Option<DataPatch>,
}

impl FilePatch {
    fn apply(self, cfg: &mut RunConfig) {
        if let Some(p) = self.image {
            patch_fields!(p, cfg.image, height, width, channels);
        }
        if let Some(p) = self.encoder {
            patch_fields!(p, cfg.encoder, patch_size, hidden_dim, frozen_layers, seed);
        }
        if let Some(p) = self.decoder {
            patch_fields!(p, cfg.decoder, layers, hidden_dim, heads, ff_dim, variant);
        }
        if let Some(p) = self.head {
            patch_fields!(p, cfg.head, representation, lambda, gamma);
        }
        if let Some(p) = self.train {
            patch_fields!(
                p,
                cfg.train,
                epochs,
                warmup_epochs,
                batch_size,
                learning_rate,
                weight_decay,
                seed
            );
        }
        if let Some(p) = self.data {
            patch_fields!(p, cfg.data, views, stride);
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ImagePatch {
    height: Option<usize>,
    width: Option<usize>,
    channels: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct EncoderPatch {
    patch_size: Option<usize>,
    hidden_dim: Option<usize>,
    frozen_layers: Option<usize>,
    seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct DecoderPatch {
    layers: Option<usize>,
    hidden_dim: Option<usize>,
    heads: Option<usize>,
    ff_dim: Option<usize>,
    variant: Option<Variant>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeadPatch {
    representation: Option<Representation>,
    lambda: Option<f64>,
    gamma: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainPatch {
    epochs: Option<usize>,
    warmup_epochs: Option<usize>,
    batch_size: Option<usize>,
    learning_rate: Option<f64>,
    weight_decay: Option<f64>,
    seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct DataPatch {
    views: Option<usize>,
    stride: Option<usize>,
}
