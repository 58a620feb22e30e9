//! Frozen toy image encoder standing in for a pre-trained backbone: patchify,
//! fixed linear embedding, sinusoidal position encoding over the patch index,
//! and optionally a small stack of frozen single-head self-attention layers.
//! All parameters are frozen; the whole forward pass is plain (untaped) math
//! and its output enters the decoder as a constant.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Raster;
use crate::numerics::Tensor;
use crate::params::ParamStore;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("image {height}x{width} is not divisible into {patch}x{patch} patches")]
    NotDivisible { height: usize, width: usize, patch: usize },
    #[error("frame has {found} channels, encoder was built for {expected}")]
    ChannelMismatch { expected: usize, found: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub patch_size: usize,
    pub hidden_dim: usize,
    pub frozen_layers: usize,
    pub seed: u64,
}

/// Patch rows in raster order: row k is the flattened patch at
/// (k / w, k mod w), row-major within the patch, channels innermost.
pub fn patchify(frame: &Raster, patch: usize) -> Result<Vec<Vec<f64>>, EncoderError> {
    if frame.height % patch != 0 || frame.width % patch != 0 {
        return Err(EncoderError::NotDivisible {
            height: frame.height,
            width: frame.width,
            patch,
        });
    }
    let (h, w) = (frame.height / patch, frame.width / patch);
    let mut rows = Vec::with_capacity(h * w);
    for py in 0..h {
        for px in 0..w {
            let mut row = Vec::with_capacity(patch * patch * frame.channels);
            for dy in 0..patch {
                for dx in 0..patch {
                    for ch in 0..frame.channels {
                        row.push(frame.get(py * patch + dy, px * patch + dx, ch));
                    }
                }
            }
            rows.push(row);
        }
    }
    Ok(rows)
}

/// Vaswani-style sinusoidal encoding of an integer position into d channels.
pub fn sinusoidal_encoding(pos: usize, d: usize) -> Vec<f64> {
    (0..d)
        .map(|j| {
            let pair = (j / 2) as f64;
            let angle = pos as f64 / 10_000f64.powf(2.0 * pair / d as f64);
            if j % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect()
}

pub struct Encoder {
    cfg: EncoderConfig,
    channels: usize,
}

impl Encoder {
    /// Builds the encoder and inserts its frozen parameters into `store`.
    pub fn init(cfg: EncoderConfig, channels: usize, store: &mut ParamStore) -> Encoder {
        assert!(cfg.patch_size >= 1 && cfg.hidden_dim >= 1, "degenerate encoder config");
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let in_dim = cfg.patch_size * cfg.patch_size * channels;
        let d = cfg.hidden_dim;
        store.insert_gaussian(
            "encoder.embed.w",
            &[in_dim, d],
            1.0 / (in_dim as f64).sqrt(),
            &mut rng,
            true,
        );
        for l in 0..cfg.frozen_layers {
            for name in ["wq", "wk", "wv", "wo"] {
                store.insert_gaussian(
                    &format!("encoder.layer{l}.{name}"),
                    &[d, d],
                    1.0 / (d as f64).sqrt(),
                    &mut rng,
                    true,
                );
            }
        }
        Encoder { cfg, channels }
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    /// Token count for an image of the given size.
    pub fn tokens_for(&self, height: usize, width: usize) -> usize {
        (height / self.cfg.patch_size) * (width / self.cfg.patch_size)
    }

    pub fn encode(&self, store: &ParamStore, frames: &[Raster]) -> Result<Tensor, EncoderError> {
        self.encode_with_pe(store, frames, true)
    }

    /// `use_pe = false` drops the position encoding; exists so permutation
    /// equivariance of the embedding itself stays directly testable.
    pub fn encode_with_pe(
        &self,
        store: &ParamStore,
        frames: &[Raster],
        use_pe: bool,
    ) -> Result<Tensor, EncoderError> {
        assert!(!frames.is_empty(), "encode needs at least one frame");
        let d = self.cfg.hidden_dim;
        let embed = store.get("encoder.embed.w");
        let in_dim = embed.shape[0];
        let mut per_frame_tokens = None;
        let mut out = Vec::new();
        for frame in frames {
            if frame.channels != self.channels {
                return Err(EncoderError::ChannelMismatch {
                    expected: self.channels,
                    found: frame.channels,
                });
            }
            let patches = patchify(frame, self.cfg.patch_size)?;
            let tokens = patches.len();
            match per_frame_tokens {
                None => per_frame_tokens = Some(tokens),
                Some(n) => assert_eq!(n, tokens, "frames must share a resolution"),
            }
            // tokens x d = patches (tokens x in_dim) . embed (in_dim x d)
            let mut feats = vec![0.0; tokens * d];
            for (k, patch) in patches.iter().enumerate() {
                debug_assert_eq!(patch.len(), in_dim);
                for (i, &p) in patch.iter().enumerate() {
                    if p == 0.0 {
                        continue;
                    }
                    let wrow = &embed.data[i * d..(i + 1) * d];
                    let frow = &mut feats[k * d..(k + 1) * d];
                    for (f, w) in frow.iter_mut().zip(wrow) {
                        *f += p * w;
                    }
                }
            }
            if use_pe {
                for k in 0..tokens {
                    let pe = sinusoidal_encoding(k, d);
                    for (f, p) in feats[k * d..(k + 1) * d].iter_mut().zip(&pe) {
                        *f += p;
                    }
                }
            }
            for l in 0..self.cfg.frozen_layers {
                feats = self.frozen_layer(store, l, &feats, tokens);
            }
            out.extend(feats);
        }
        let tokens = per_frame_tokens.unwrap();
        Ok(Tensor::constant(&[frames.len(), tokens, d], out))
    }

    /// Residual single-head self-attention with frozen weights.
    fn frozen_layer(&self, store: &ParamStore, layer: usize, x: &[f64], tokens: usize) -> Vec<f64> {
        let d = self.cfg.hidden_dim;
        let project = |name: &str| -> Vec<f64> {
            let w = &store.get(&format!("encoder.layer{layer}.{name}")).data;
            let mut y = vec![0.0; tokens * d];
            for t in 0..tokens {
                for i in 0..d {
                    let xi = x[t * d + i];
                    if xi == 0.0 {
                        continue;
                    }
                    let wrow = &w[i * d..(i + 1) * d];
                    let yrow = &mut y[t * d..(t + 1) * d];
                    for (yj, wj) in yrow.iter_mut().zip(wrow) {
                        *yj += xi * wj;
                    }
                }
            }
            y
        };
        let q = project("wq");
        let k = project("wk");
        let v = project("wv");
        let scale = 1.0 / (d as f64).sqrt();
        let mut attended = vec![0.0; tokens * d];
        for ti in 0..tokens {
            let mut scores: Vec<f64> = (0..tokens)
                .map(|tj| {
                    let mut s = 0.0;
                    for i in 0..d {
                        s += q[ti * d + i] * k[tj * d + i];
                    }
                    s * scale
                })
                .collect();
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for s in &mut scores {
                *s = (*s - max).exp();
                sum += *s;
            }
            for s in &mut scores {
                *s /= sum;
            }
            for (tj, &a) in scores.iter().enumerate() {
                for i in 0..d {
                    attended[ti * d + i] += a * v[tj * d + i];
                }
            }
        }
        let wo = &store.get(&format!("encoder.layer{layer}.wo")).data;
        let mut y = x.to_vec();
        for t in 0..tokens {
            for i in 0..d {
                let ai = attended[t * d + i];
                if ai == 0.0 {
                    continue;
                }
                let worow = &wo[i * d..(i + 1) * d];
                let yrow = &mut y[t * d..(t + 1) * d];
                for (yj, wj) in yrow.iter_mut().zip(worow) {
                    *yj += ai * wj;
                }
            }
        }
        y
    }
}
