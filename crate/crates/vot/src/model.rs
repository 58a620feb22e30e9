//! Full pipeline assembly: frozen patch encoder, trainable time-space
//! decoder, pose head, and the pooled batch loss used by the trainer.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::{Raster, SequenceSample};
use crate::decoder::{Decoder, DecoderConfig, LayerAttnMaps};
use crate::encoder::{Encoder, EncoderConfig, EncoderError};
use crate::geometry::Pose;
use crate::head::{
    pool_terms, weighted_total, Head, HeadError, LossWeights, PairTerms, Representation,
};
use crate::numerics::{NumericsError, Tape, Tensor};
use crate::params::{BoundParams, ParamStore};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Head(#[from] HeadError),
    #[error("a sequence needs at least two frames, got {got}")]
    TooFewFrames { got: usize },
}

/// Pooled batch losses; `pairs` counts the frame pairs that contributed.
pub struct BatchLoss {
    pub rotation: Tensor,
    pub translation: Tensor,
    pub total: Tensor,
    pub pairs: usize,
}

pub struct VotModel {
    store: ParamStore,
    encoder: Encoder,
    decoder: Decoder,
    head: Head,
    weights: LossWeights,
}

impl VotModel {
    /// Builds all parameters. The encoder seeds its frozen weights from its
    /// own config; decoder and head draw from `seed`.
    pub fn new(
        encoder_cfg: EncoderConfig,
        decoder_cfg: DecoderConfig,
        representation: Representation,
        weights: LossWeights,
        channels: usize,
        seed: u64,
    ) -> VotModel {
        assert_eq!(
            encoder_cfg.hidden_dim, decoder_cfg.hidden_dim,
            "encoder and decoder widths must agree"
        );
        let mut store = ParamStore::new();
        let encoder = Encoder::init(encoder_cfg, channels, &mut store);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let decoder = Decoder::init(decoder_cfg, &mut store, &mut rng);
        let head = Head::init(representation, decoder_cfg.hidden_dim, &mut store, &mut rng);
        VotModel { store, encoder, decoder, head, weights }
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn bind(&self, tape: &Tape) -> BoundParams {
        self.store.bind(tape)
    }

    pub fn head(&self) -> &Head {
        &self.head
    }

    pub fn decoder_config(&self) -> &DecoderConfig {
        self.decoder.config()
    }

    pub fn weights(&self) -> LossWeights {
        self.weights
    }

    /// Camera states for a frame window: encode, prepend the camera
    /// embedding, add the frame-index encoding, run the decoder.
    pub fn camera_states(
        &self,
        tape: &Tape,
        params: &BoundParams,
        frames: &[Raster],
        want_maps: bool,
    ) -> Result<(Tensor, Option<Vec<LayerAttnMaps>>), ModelError> {
        if frames.len() < 2 {
            return Err(ModelError::TooFewFrames { got: frames.len() });
        }
        let tokens = self.encoder.encode(&self.store, frames)?;
        let f0 = self.decoder.decoder_input(tape, params, &tokens)?;
        let f0 = self.decoder.add_time_encoding(tape, &f0)?;
        let out = self.decoder.forward_with_maps(tape, params, &f0, want_maps)?;
        Ok((out.camera_states, out.attn_maps))
    }

    /// Per-pair loss terms for one sequence, on the caller's tape.
    pub fn sequence_terms(
        &self,
        tape: &Tape,
        params: &BoundParams,
        sample: &SequenceSample,
    ) -> Result<PairTerms, ModelError> {
        let (states, _) = self.camera_states(tape, params, &sample.frames, false)?;
        let outputs = self.head.outputs(tape, params, &states)?;
        Ok(self.head.pair_terms(tape, &outputs, &sample.rel_poses_gt)?)
    }

    /// Pooled loss over a batch: every frame pair of every sequence
    /// contributes equally to the rotation and translation means.
    pub fn loss(
        &self,
        tape: &Tape,
        params: &BoundParams,
        batch: &[&SequenceSample],
    ) -> Result<BatchLoss, ModelError> {
        assert!(!batch.is_empty(), "empty batch");
        let mut rotation = Vec::new();
        let mut translation = Vec::new();
        for sample in batch {
            let terms = self.sequence_terms(tape, params, sample)?;
            rotation.extend(terms.rotation);
            translation.extend(terms.translation);
        }
        let pairs = rotation.len();
        let rotation = pool_terms(tape, &rotation)?;
        let translation = pool_terms(tape, &translation)?;
        let total = weighted_total(tape, &rotation, &translation, self.weights)?;
        Ok(BatchLoss { rotation, translation, total, pairs })
    }

    /// Relative poses (frame k-1 to k) for a window of frames, forward-only.
    pub fn predict(&self, frames: &[Raster]) -> Result<Vec<Pose>, ModelError> {
        Ok(self.predict_with_maps(frames, false)?.0)
    }

    pub fn predict_with_maps(
        &self,
        frames: &[Raster],
        want_maps: bool,
    ) -> Result<(Vec<Pose>, Option<Vec<LayerAttnMaps>>), ModelError> {
        let tape = Tape::no_grad();
        let params = self.bind(&tape);
        let (states, maps) = self.camera_states(&tape, &params, frames, want_maps)?;
        let outputs = self.head.outputs(&tape, &params, &states)?;
        Ok((self.head.predict_poses(&outputs)?, maps))
    }

    /// Relative poses for an arbitrarily long sequence: slides a window of
    /// `window` frames with one frame of overlap, so every consecutive pair
    /// is predicted exactly once.
    pub fn predict_chunked(
        &self,
        frames: &[Raster],
        window: usize,
    ) -> Result<Vec<Pose>, ModelError> {
        assert!(window >= 2, "window must cover at least one frame pair");
        if frames.len() < 2 {
            return Err(ModelError::TooFewFrames { got: frames.len() });
        }
        let mut rels = Vec::with_capacity(frames.len() - 1);
        let mut pos = 0;
        while pos + 1 < frames.len() {
            let end = (pos + window).min(frames.len());
            rels.extend(self.predict(&frames[pos..end])?);
            pos = end - 1;
        }
        Ok(rels)
    }
}
