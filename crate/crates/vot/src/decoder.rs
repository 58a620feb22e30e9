//! Time-space decoder: L pre-norm residual blocks of temporal attention
//! (across frames, per patch position, camera rows bypassing), spatial
//! attention (across tokens within a frame, camera row participating), and a
//! feed-forward sublayer. A `Full` variant swaps both attention sublayers for
//! joint attention over all frames and tokens at once; it is the efficiency
//! baseline and shares parameter shapes with the factorized variant.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::sinusoidal_encoding;
use crate::numerics::{NumericsError, Tape, Tensor};
use crate::params::{BoundParams, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    TimeSpace,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderConfig {
    pub layers: usize,
    pub hidden_dim: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub variant: Variant,
}

impl DecoderConfig {
    pub fn head_dim(&self) -> usize {
        assert!(
            self.heads > 0 && self.hidden_dim % self.heads == 0,
            "hidden_dim {} must be a multiple of heads {}",
            self.hidden_dim,
            self.heads
        );
        self.hidden_dim / self.heads
    }
}

/// Camera-token spatial attention rows, the quantity exported as attention
/// maps: `rows[t][h]` is frame t, head h, a distribution over all h*w+1
/// tokens (index 0 is the camera token's self weight).
#[derive(Debug, Clone)]
pub struct LayerAttnMaps {
    pub rows: Vec<Vec<Vec<f64>>>,
}

pub struct DecoderOutput {
    /// Final features, T x (h*w+1) x d.
    pub features: Tensor,
    /// Camera-embedding rows of the final layer, T x d.
    pub camera_states: Tensor,
    /// Per layer, when requested and the variant factorizes spatially.
    pub attn_maps: Option<Vec<LayerAttnMaps>>,
}

pub struct Decoder {
    cfg: DecoderConfig,
}

impl Decoder {
    /// Inserts all trainable decoder parameters (camera embedding, per-layer
    /// attention and feed-forward weights) into `store`.
    pub fn init(cfg: DecoderConfig, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Decoder {
        let d = cfg.hidden_dim;
        let d_h = cfg.head_dim();
        let proj_std = 1.0 / (d as f64).sqrt();
        store.insert_gaussian("decoder.ce", &[d], 0.5, rng, false);
        for l in 0..cfg.layers {
            for tag in ["t", "s"] {
                store.insert(&format!("decoder.l{l}.{tag}.ln.gain"), &[d], vec![1.0; d], false);
                store.insert(&format!("decoder.l{l}.{tag}.ln.bias"), &[d], vec![0.0; d], false);
                for h in 0..cfg.heads {
                    for w in ["wq", "wk", "wv"] {
                        store.insert_gaussian(
                            &format!("decoder.l{l}.{tag}.h{h}.{w}"),
                            &[d, d_h],
                            proj_std,
                            rng,
                            false,
                        );
                    }
                }
                store.insert_gaussian(&format!("decoder.l{l}.{tag}.wo"), &[d, d], proj_std, rng, false);
            }
            store.insert(&format!("decoder.l{l}.ff.ln.gain"), &[d], vec![1.0; d], false);
            store.insert(&format!("decoder.l{l}.ff.ln.bias"), &[d], vec![0.0; d], false);
            store.insert_gaussian(&format!("decoder.l{l}.ff.w1"), &[d, cfg.ff_dim], proj_std, rng, false);
            store.insert(&format!("decoder.l{l}.ff.b1"), &[cfg.ff_dim], vec![0.0; cfg.ff_dim], false);
            store.insert_gaussian(
                &format!("decoder.l{l}.ff.w2"),
                &[cfg.ff_dim, d],
                1.0 / (cfg.ff_dim as f64).sqrt(),
                rng,
                false,
            );
            store.insert(&format!("decoder.l{l}.ff.b2"), &[d], vec![0.0; d], false);
        }
        Decoder { cfg }
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.cfg
    }

    /// Prepends the broadcast camera embedding at spatial index 0:
    /// F (T x hw x d) becomes F0 (T x hw+1 x d).
    pub fn decoder_input(
        &self,
        tape: &Tape,
        params: &BoundParams,
        f: &Tensor,
    ) -> Result<Tensor, NumericsError> {
        let shape = f.shape();
        assert_eq!(shape.len(), 3, "decoder input must be T x hw x d");
        let (t, d) = (shape[0], shape[2]);
        let ce = tape.reshape(params.get("decoder.ce"), &[1, 1, d])?;
        // Broadcast over frames: T repeats of the same tensor; the gradient
        // of ce accumulates once per frame.
        let repeats: Vec<&Tensor> = (0..t).map(|_| &ce).collect();
        let ce_t = tape.concat(&repeats, 0)?;
        tape.concat(&[&ce_t, f], 1)
    }

    /// Adds a sinusoidal encoding of the frame index to the patch rows of F0.
    /// Camera rows stay untouched so they remain the pure camera embedding at
    /// depth zero.
    pub fn add_time_encoding(&self, tape: &Tape, f0: &Tensor) -> Result<Tensor, NumericsError> {
        let shape = f0.shape().to_vec();
        let (t, n, d) = (shape[0], shape[1], shape[2]);
        let mut pe = vec![0.0; t * n * d];
        for frame in 0..t {
            let enc = sinusoidal_encoding(frame, d);
            for row in 1..n {
                let at = (frame * n + row) * d;
                pe[at..at + d].copy_from_slice(&enc);
            }
        }
        tape.add(f0, &Tensor::constant(&shape, pe))
    }

    /// Multi-head scaled dot-product attention over the rows of a 2-D input,
    /// using the projections under `prefix`. Optionally captures the softmax
    /// row of token 0 per head (the camera token's attention distribution).
    fn mha(
        &self,
        tape: &Tape,
        params: &BoundParams,
        prefix: &str,
        x: &Tensor,
        capture_row0: Option<&mut Vec<Vec<f64>>>,
    ) -> Result<Tensor, NumericsError> {
        let d_h = self.cfg.head_dim();
        let rows = x.shape()[0];
        let mut heads = Vec::with_capacity(self.cfg.heads);
        let mut captured = Vec::with_capacity(self.cfg.heads);
        for h in 0..self.cfg.heads {
            let q = tape.matmul(x, params.get(&format!("{prefix}.h{h}.wq")))?;
            let k = tape.matmul(x, params.get(&format!("{prefix}.h{h}.wk")))?;
            let v = tape.matmul(x, params.get(&format!("{prefix}.h{h}.wv")))?;
            let kt = tape.transpose2(&k)?;
            let scores = tape.scale(&tape.matmul(&q, &kt)?, 1.0 / (d_h as f64).sqrt());
            let attn = tape.softmax_lastdim(&scores);
            if capture_row0.is_some() {
                captured.push(attn.data()[..rows].to_vec());
            }
            heads.push(tape.matmul(&attn, &v)?);
        }
        if let Some(out) = capture_row0 {
            *out = captured;
        }
        let head_refs: Vec<&Tensor> = heads.iter().collect();
        let merged = tape.concat(&head_refs, 1)?;
        tape.matmul(&merged, params.get(&format!("{prefix}.wo")))
    }

    /// Attention along the frame axis, independently per spatial position.
    /// Row 0 (the camera embedding) is copied through unchanged.
    pub fn temporal_attention(
        &self,
        tape: &Tape,
        params: &BoundParams,
        layer: usize,
        f: &Tensor,
    ) -> Result<Tensor, NumericsError> {
        let shape = f.shape().to_vec();
        let (t, n, d) = (shape[0], shape[1], shape[2]);
        let prefix = format!("decoder.l{layer}.t");
        let mut columns = Vec::with_capacity(n);
        columns.push(tape.slice(f, 1, 0, 1)?);
        for s in 1..n {
            let col = tape.reshape(&tape.slice(f, 1, s, s + 1)?, &[t, d])?;
            let y = self.mha(tape, params, &prefix, &col, None)?;
            columns.push(tape.reshape(&y, &[t, 1, d])?);
        }
        let refs: Vec<&Tensor> = columns.iter().collect();
        tape.concat(&refs, 1)
    }

    /// Attention across all tokens of each frame, camera row included.
    pub fn spatial_attention(
        &self,
        tape: &Tape,
        params: &BoundParams,
        layer: usize,
        f: &Tensor,
    ) -> Result<Tensor, NumericsError> {
        Ok(self.spatial_attention_mapped(tape, params, layer, f, false)?.0)
    }

    fn spatial_attention_mapped(
        &self,
        tape: &Tape,
        params: &BoundParams,
        layer: usize,
        f: &Tensor,
        want_maps: bool,
    ) -> Result<(Tensor, Option<LayerAttnMaps>), NumericsError> {
        let shape = f.shape().to_vec();
        let (t, n, d) = (shape[0], shape[1], shape[2]);
        let prefix = format!("decoder.l{layer}.s");
        let mut frames = Vec::with_capacity(t);
        let mut maps = Vec::with_capacity(t);
        for frame in 0..t {
            let x = tape.reshape(&tape.slice(f, 0, frame, frame + 1)?, &[n, d])?;
            let y = if want_maps {
                let mut rows = Vec::new();
                let y = self.mha(tape, params, &prefix, &x, Some(&mut rows))?;
                maps.push(rows);
                y
            } else {
                self.mha(tape, params, &prefix, &x, None)?
            };
            frames.push(tape.reshape(&y, &[1, n, d])?);
        }
        let refs: Vec<&Tensor> = frames.iter().collect();
        let out = tape.concat(&refs, 0)?;
        Ok((out, want_maps.then_some(LayerAttnMaps { rows: maps })))
    }

    /// Joint attention over every (frame, token) pair; the full-attention
    /// baseline's replacement for both factorized sublayers.
    fn joint_attention(
        &self,
        tape: &Tape,
        params: &BoundParams,
        prefix: &str,
        f: &Tensor,
    ) -> Result<Tensor, NumericsError> {
        let shape = f.shape().to_vec();
        let (t, n, d) = (shape[0], shape[1], shape[2]);
        let flat = tape.reshape(f, &[t * n, d])?;
        let y = self.mha(tape, params, prefix, &flat, None)?;
        tape.reshape(&y, &[t, n, d])
    }

    fn layer_norm_named(
        &self,
        tape: &Tape,
        params: &BoundParams,
        prefix: &str,
        x: &Tensor,
    ) -> Result<Tensor, NumericsError> {
        tape.layer_norm(
            x,
            params.get(&format!("{prefix}.ln.gain")),
            params.get(&format!("{prefix}.ln.bias")),
        )
    }

    fn feed_forward(
        &self,
        tape: &Tape,
        params: &BoundParams,
        layer: usize,
        x: &Tensor,
    ) -> Result<Tensor, NumericsError> {
        let prefix = format!("decoder.l{layer}.ff");
        let normed = self.layer_norm_named(tape, params, &prefix, x)?;
        let h = tape.gelu(&tape.linear(
            &normed,
            params.get(&format!("{prefix}.w1")),
            params.get(&format!("{prefix}.b1")),
        )?);
        let out = tape.linear(&h, params.get(&format!("{prefix}.w2")), params.get(&format!("{prefix}.b2")))?;
        tape.add(x, &out)
    }

    fn block(
        &self,
        tape: &Tape,
        params: &BoundParams,
        layer: usize,
        x: &Tensor,
        want_maps: bool,
    ) -> Result<(Tensor, Option<LayerAttnMaps>), NumericsError> {
        let n = x.shape()[1];
        match self.cfg.variant {
            Variant::TimeSpace => {
                // Temporal sublayer. The camera row bypasses it entirely: the
                // bare op already copies it, and the residual below re-attaches
                // the raw (not normalized) camera row.
                let normed = self.layer_norm_named(tape, params, &format!("decoder.l{layer}.t"), x)?;
                let attn = self.temporal_attention(tape, params, layer, &normed)?;
                let cam = tape.slice(x, 1, 0, 1)?;
                let tokens =
                    tape.add(&tape.slice(x, 1, 1, n)?, &tape.slice(&attn, 1, 1, n)?)?;
                let x1 = tape.concat(&[&cam, &tokens], 1)?;

                let normed = self.layer_norm_named(tape, params, &format!("decoder.l{layer}.s"), &x1)?;
                let (attn, maps) =
                    self.spatial_attention_mapped(tape, params, layer, &normed, want_maps)?;
                let x2 = tape.add(&x1, &attn)?;

                Ok((self.feed_forward(tape, params, layer, &x2)?, maps))
            }
            Variant::Full => {
                let normed = self.layer_norm_named(tape, params, &format!("decoder.l{layer}.t"), x)?;
                let attn = self.joint_attention(tape, params, &format!("decoder.l{layer}.t"), &normed)?;
                let x1 = tape.add(x, &attn)?;

                let normed = self.layer_norm_named(tape, params, &format!("decoder.l{layer}.s"), &x1)?;
                let attn = self.joint_attention(tape, params, &format!("decoder.l{layer}.s"), &normed)?;
                let x2 = tape.add(&x1, &attn)?;

                Ok((self.feed_forward(tape, params, layer, &x2)?, None))
            }
        }
    }

    pub fn forward(
        &self,
        tape: &Tape,
        params: &BoundParams,
        f0: &Tensor,
    ) -> Result<DecoderOutput, NumericsError> {
        self.forward_with_maps(tape, params, f0, false)
    }

    pub fn forward_with_maps(
        &self,
        tape: &Tape,
        params: &BoundParams,
        f0: &Tensor,
        want_maps: bool,
    ) -> Result<DecoderOutput, NumericsError> {
        let shape = f0.shape().to_vec();
        let (t, _n, d) = (shape[0], shape[1], shape[2]);
        let mut x = f0.clone();
        let mut all_maps = Vec::new();
        for layer in 0..self.cfg.layers {
            let (next, maps) = self.block(tape, params, layer, &x, want_maps)?;
            x = next;
            if let Some(m) = maps {
                all_maps.push(m);
            }
        }
        let camera_states = tape.reshape(&tape.slice(&x, 1, 0, 1)?, &[t, d])?;
        let attn_maps = (want_maps && !all_maps.is_empty()).then_some(all_maps);
        Ok(DecoderOutput { features: x, camera_states, attn_maps })
    }
}

/// Analytic attention cost, in floating-point operations at 2 per
/// multiply-accumulate. Counts the q/k/v/output projections and the
/// score/value matmuls of each attention sublayer; the camera token,
/// normalizations, softmax, and the feed-forward (identical across variants)
/// are excluded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FlopCount {
    pub time_space: u64,
    pub full: u64,
    /// Score/value portion only, for the degenerate-axis comparison.
    pub time_space_scores: u64,
    pub full_scores: u64,
    pub projections: u64,
}

impl FlopCount {
    pub fn ratio(&self) -> f64 {
        self.time_space as f64 / self.full as f64
    }
}

pub fn count_flops(cfg: &DecoderConfig, t: usize, hw: usize) -> FlopCount {
    let (l, d) = (cfg.layers as u64, cfg.hidden_dim as u64);
    let (t, hw) = (t as u64, hw as u64);
    // Eight projection matmuls per token per layer (q,k,v per head plus the
    // output map, twice per block), each 2*d*d_h*heads = 2*d^2.
    let projections = l * 16 * t * hw * d * d;
    // Scores QK' and values AV both cost 2*r^2*d_h per head over r rows:
    // 4*r^2*d across heads.
    let ts_scores = l * (4 * hw * t * t * d + 4 * t * hw * hw * d);
    let full_scores = l * 8 * (t * hw) * (t * hw) * d;
    FlopCount {
        time_space: projections + ts_scores,
        full: projections + full_scores,
        time_space_scores: ts_scores,
        full_scores,
        projections,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::check::{central_diff, max_rel_error, FD_REL_TOL, FD_STEP};
    use rand::{Rng, SeedableRng};

    fn setup(cfg: DecoderConfig, seed: u64) -> (Decoder, ParamStore) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dec = Decoder::init(cfg, &mut store, &mut rng);
        (dec, store)
    }

    fn small_cfg() -> DecoderConfig {
        DecoderConfig { layers: 1, hidden_dim: 4, heads: 2, ff_dim: 6, variant: Variant::TimeSpace }
    }

    fn random_input(t: usize, n: usize, d: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..t * n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::constant(&[t, n, d], data)
    }

    #[test]
    fn decoder_input_prepends_camera_embedding() {
        let (dec, store) = setup(
            DecoderConfig { layers: 0, hidden_dim: 8, heads: 2, ff_dim: 4, variant: Variant::TimeSpace },
            1,
        );
        let tape = Tape::new();
        let bound = store.bind(&tape);
        let f = Tensor::constant(&[2, 4, 8], vec![0.0; 64]);
        let f0 = dec.decoder_input(&tape, &bound, &f).unwrap();
        assert_eq!(f0.shape(), &[2, 5, 8]);
        let ce = &store.get("decoder.ce").data;
        for frame in 0..2 {
            let at = frame * 5 * 8;
            assert_eq!(&f0.data()[at..at + 8], ce.as_slice());
            assert!(f0.data()[at + 8..at + 40].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn camera_embedding_gradient_aggregates_over_frames() {
        let (dec, store) = setup(
            DecoderConfig { layers: 0, hidden_dim: 4, heads: 1, ff_dim: 4, variant: Variant::TimeSpace },
            2,
        );
        let f = random_input(3, 2, 4, 10);
        let w = random_input(3, 3, 4, 11);

        let tape = Tape::new();
        let bound = store.bind(&tape);
        let f0 = dec.decoder_input(&tape, &bound, &f).unwrap();
        let loss = tape.sum_all(&tape.mul(&f0, &w).unwrap());
        let grads = tape.backward(&loss).unwrap();
        let analytic = grads.of(bound.get("decoder.ce")).unwrap().to_vec();

        let ce0 = store.get("decoder.ce").data.clone();
        let numeric = central_diff(
            |ce| {
                let mut st = ParamStore::new();
                st.insert("decoder.ce", &[4], ce.to_vec(), false);
                let tape = Tape::no_grad();
                let bound = st.bind(&tape);
                let f0 = dec.decoder_input(&tape, &bound, &f).unwrap();
                tape.sum_all(&tape.mul(&f0, &w).unwrap()).value()
            },
            &ce0,
            FD_STEP,
        );
        assert!(max_rel_error(&analytic, &numeric) < FD_REL_TOL);
    }

    #[test]
    fn time_encoding_touches_only_patch_rows() {
        let (dec, _store) = setup(small_cfg(), 3);
        let tape = Tape::no_grad();
        let f0 = random_input(3, 3, 4, 12);
        let out = dec.add_time_encoding(&tape, &f0).unwrap();
        for frame in 0..3 {
            let enc = sinusoidal_encoding(frame, 4);
            let base = frame * 3 * 4;
            for j in 0..4 {
                assert_eq!(out.data()[base + j], f0.data()[base + j], "camera row must not shift");
                for row in 1..3 {
                    let at = base + row * 4 + j;
                    assert!((out.data()[at] - (f0.data()[at] + enc[j])).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn temporal_attention_copies_camera_rows_exactly() {
        let (dec, store) = setup(small_cfg(), 4);
        let tape = Tape::new();
        let bound = store.bind(&tape);
        let f = random_input(3, 5, 4, 13);
        let out = dec.temporal_attention(&tape, &bound, 0, &f).unwrap();
        assert_eq!(out.shape(), f.shape());
        for frame in 0..3 {
            let at = frame * 5 * 4;
            assert_eq!(&out.data()[at..at + 4], &f.data()[at..at + 4]);
        }
    }

    #[test]
    fn single_frame_temporal_attention_matches_hand_computation() {
        // With T=1 the softmax is the scalar 1, so each token row reduces to
        // concat_h(x Wv_h) Wo.
        let (dec, store) = setup(small_cfg(), 5);
        let tape = Tape::new();
        let bound = store.bind(&tape);
        let f = random_input(1, 2, 4, 14);
        let out = dec.temporal_attention(&tape, &bound, 0, &f).unwrap();

        let x = &f.data()[4..8]; // the single token row
        let mut merged = Vec::new();
        for h in 0..2 {
            let wv = &store.get(&format!("decoder.l0.t.h{h}.wv")).data;
            for j in 0..2 {
                merged.push((0..4).map(|i| x[i] * wv[i * 2 + j]).sum::<f64>());
            }
        }
        let wo = &store.get("decoder.l0.t.wo").data;
        for j in 0..4 {
            let expect: f64 = (0..4).map(|i| merged[i] * wo[i * 4 + j]).sum();
            assert!((out.data()[4 + j] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicated_spatial_positions_attend_identically() {
        let (dec, store) = setup(small_cfg(), 6);
        let tape = Tape::new();
        let bound = store.bind(&tape);
        let mut f = random_input(3, 4, 4, 15);
        // Copy position 1's per-frame sequence onto position 3.
        let mut data = f.data().to_vec();
        for frame in 0..3 {
            let src = (frame * 4 + 1) * 4;
            let dst = (frame * 4 + 3) * 4;
            let row: Vec<f64> = data[src..src + 4].to_vec();
            data[dst..dst + 4].copy_from_slice(&row);
        }
        f = Tensor::constant(&[3, 4, 4], data);
        let out = dec.temporal_attention(&tape, &bound, 0, &f).unwrap();
        for frame in 0..3 {
            let a = (frame * 4 + 1) * 4;
            let b = (frame * 4 + 3) * 4;
            for j in 0..4 {
                assert!((out.data()[a + j] - out.data()[b + j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn duplicated_frames_attend_identically_in_space() {
        let (dec, store) = setup(small_cfg(), 7);
        let tape = Tape::new();
        let bound = store.bind(&tape);
        let one = random_input(1, 5, 4, 16);
        let f = Tensor::constant(&[2, 5, 4], [one.data(), one.data()].concat());
        let out = dec.spatial_attention(&tape, &bound, 0, &f).unwrap();
        let (a, b) = out.data().split_at(5 * 4);
        assert_eq!(a, b);
    }

    #[test]
    fn camera_only_spatial_attention_matches_hand_computation() {
        let (dec, store) = setup(small_cfg(), 8);
        let tape = Tape::new();
        let bound = store.bind(&tape);
        let f = random_input(2, 1, 4, 17);
        let out = dec.spatial_attention(&tape, &bound, 0, &f).unwrap();
        for frame in 0..2 {
            let x = &f.data()[frame * 4..(frame + 1) * 4];
            let mut merged = Vec::new();
            for h in 0..2 {
                let wv = &store.get(&format!("decoder.l0.s.h{h}.wv")).data;
                for j in 0..2 {
                    merged.push((0..4).map(|i| x[i] * wv[i * 2 + j]).sum::<f64>());
                }
            }
            let wo = &store.get("decoder.l0.s.wo").data;
            for j in 0..4 {
                let expect: f64 = (0..4).map(|i| merged[i] * wo[i * 4 + j]).sum();
                assert!((out.data()[frame * 4 + j] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn temporal_attention_is_equivariant_to_spatial_permutation() {
        let (dec, store) = setup(small_cfg(), 9);
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        for _ in 0..10 {
            let (t, n, d) = (3, 5, 4);
            let f = random_input(t, n, d, rng.random());
            // Random permutation of patch positions 1..n, camera row fixed.
            let mut perm: Vec<usize> = (1..n).collect();
            for i in (1..perm.len()).rev() {
                perm.swap(i, rng.random_range(0..=i));
            }
            let mut permuted = f.data().to_vec();
            for frame in 0..t {
                for (to, &from) in perm.iter().enumerate() {
                    let src = (frame * n + from) * d;
                    let dst = (frame * n + 1 + to) * d;
                    let row: Vec<f64> = f.data()[src..src + d].to_vec();
                    permuted[dst..dst + d].copy_from_slice(&row);
                }
            }
            let fp = Tensor::constant(&[t, n, d], permuted);

            let tape = Tape::no_grad();
            let bound = store.bind(&tape);
            let base = dec.temporal_attention(&tape, &bound, 0, &f).unwrap();
            let pout = dec.temporal_attention(&tape, &bound, 0, &fp).unwrap();
            for frame in 0..t {
                for (to, &from) in perm.iter().enumerate() {
                    let src = (frame * n + from) * d;
                    let dst = (frame * n + 1 + to) * d;
                    for j in 0..d {
                        let diff = (base.data()[src + j] - pout.data()[dst + j]).abs();
                        assert!(diff < 1e-9, "permutation equivariance broken: {diff}");
                    }
                }
            }
        }
    }

    #[test]
    fn spatial_attention_is_equivariant_to_frame_permutation() {
        let (dec, store) = setup(small_cfg(), 10);
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..10 {
            let (t, n, d) = (4, 3, 4);
            let f = random_input(t, n, d, rng.random());
            let mut perm: Vec<usize> = (0..t).collect();
            for i in (1..t).rev() {
                perm.swap(i, rng.random_range(0..=i));
            }
            let mut permuted = f.data().to_vec();
            for (to, &from) in perm.iter().enumerate() {
                let src = from * n * d;
                let dst = to * n * d;
                let rows: Vec<f64> = f.data()[src..src + n * d].to_vec();
                permuted[dst..dst + n * d].copy_from_slice(&rows);
            }
            let fp = Tensor::constant(&[t, n, d], permuted);

            let tape = Tape::no_grad();
            let bound = store.bind(&tape);
            let base = dec.spatial_attention(&tape, &bound, 0, &f).unwrap();
            let pout = dec.spatial_attention(&tape, &bound, 0, &fp).unwrap();
            for (to, &from) in perm.iter().enumerate() {
                for j in 0..n * d {
                    let diff = (base.data()[from * n * d + j] - pout.data()[to * n * d + j]).abs();
                    assert!(diff < 1e-9, "frame equivariance broken: {diff}");
                }
            }
        }
    }

    #[test]
    fn zero_layers_returns_camera_embedding_states() {
        let (dec, store) = setup(
            DecoderConfig { layers: 0, hidden_dim: 4, heads: 2, ff_dim: 6, variant: Variant::TimeSpace },
            11,
        );
        let tape = Tape::new();
        let bound = store.bind(&tape);
        let f = random_input(3, 2, 4, 20);
        let f0 = dec.decoder_input(&tape, &bound, &f).unwrap();
        let out = dec.forward(&tape, &bound, &f0).unwrap();
        assert_eq!(out.camera_states.shape(), &[3, 4]);
        let ce = &store.get("decoder.ce").data;
        for frame in 0..3 {
            assert_eq!(&out.camera_states.data()[frame * 4..(frame + 1) * 4], ce.as_slice());
        }
    }

    #[test]
    fn attention_maps_are_per_layer_softmax_rows() {
        let cfg = DecoderConfig { layers: 2, hidden_dim: 4, heads: 2, ff_dim: 6, variant: Variant::TimeSpace };
        let (dec, store) = setup(cfg, 12);
        let tape = Tape::no_grad();
        let bound = store.bind(&tape);
        let f0 = random_input(3, 5, 4, 21);
        let out = dec.forward_with_maps(&tape, &bound, &f0, true).unwrap();
        let maps = out.attn_maps.unwrap();
        assert_eq!(maps.len(), 2);
        for layer in &maps {
            assert_eq!(layer.rows.len(), 3);
            for frame in &layer.rows {
                assert_eq!(frame.len(), 2);
                for head_row in frame {
                    assert_eq!(head_row.len(), 5);
                    let sum: f64 = head_row.iter().sum();
                    assert!((sum - 1.0).abs() < 1e-7);
                    assert!(head_row.iter().all(|&p| p >= 0.0));
                }
            }
        }
    }

    #[test]
    fn zeroed_value_and_ff_paths_make_forward_the_identity() {
        for variant in [Variant::TimeSpace, Variant::Full] {
            let cfg = DecoderConfig { layers: 2, hidden_dim: 4, heads: 2, ff_dim: 6, variant };
            let (dec, mut store) = setup(cfg, 13);
            for l in 0..2 {
                for tag in ["t", "s"] {
                    for h in 0..2 {
                        store.data_mut(&format!("decoder.l{l}.{tag}.h{h}.wv")).fill(0.0);
                    }
                    store.data_mut(&format!("decoder.l{l}.{tag}.wo")).fill(0.0);
                }
                store.data_mut(&format!("decoder.l{l}.ff.w1")).fill(0.0);
                store.data_mut(&format!("decoder.l{l}.ff.w2")).fill(0.0);
            }
            let tape = Tape::new();
            let bound = store.bind(&tape);
            let f0 = random_input(3, 4, 4, 22);
            let out = dec.forward(&tape, &bound, &f0).unwrap();
            assert_eq!(out.features.data(), f0.data(), "variant {variant:?}");
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let (dec, store) = setup(small_cfg(), 14);
        let f0 = random_input(2, 3, 4, 23);
        let run = || {
            let tape = Tape::new();
            let bound = store.bind(&tape);
            dec.forward(&tape, &bound, &f0).unwrap().features.data().to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn every_decoder_parameter_gradient_matches_finite_differences() {
        let cfg = DecoderConfig { layers: 1, hidden_dim: 4, heads: 2, ff_dim: 6, variant: Variant::TimeSpace };
        let (dec, store) = setup(cfg, 15);
        let f = random_input(2, 3, 4, 24);
        let w = random_input(2, 4, 4, 25);

        let loss_for = |store: &ParamStore| -> f64 {
            let tape = Tape::no_grad();
            let bound = store.bind(&tape);
            let f0 = dec.decoder_input(&tape, &bound, &f).unwrap();
            let f0 = dec.add_time_encoding(&tape, &f0).unwrap();
            let out = dec.forward(&tape, &bound, &f0).unwrap();
            let tape2 = Tape::no_grad();
            tape2.sum_all(&tape2.mul(&out.features, &w).unwrap()).value()
        };

        let tape = Tape::new();
        let bound = store.bind(&tape);
        let f0 = dec.decoder_input(&tape, &bound, &f).unwrap();
        let f0 = dec.add_time_encoding(&tape, &f0).unwrap();
        let out = dec.forward(&tape, &bound, &f0).unwrap();
        let loss = tape.sum_all(&tape.mul(&out.features, &w).unwrap());
        let grads = tape.backward(&loss).unwrap();

        let mut worst = 0.0f64;
        let names: Vec<String> = store.entries().iter().map(|e| e.name.clone()).collect();
        let mut probe = store.clone();
        for name in names {
            let analytic = grads.of(bound.get(&name)).unwrap().to_vec();
            let at = probe.get(&name).data.clone();
            let numeric = central_diff(
                |v| {
                    probe.data_mut(&name).copy_from_slice(v);
                    loss_for(&probe)
                },
                &at,
                FD_STEP,
            );
            probe.data_mut(&name).copy_from_slice(&at);
            let err = max_rel_error(&analytic, &numeric);
            worst = worst.max(err);
            assert!(err < FD_REL_TOL, "{name}: gradient mismatch {err}");
        }
        assert!(worst > 0.0, "finite differences must have exercised the parameters");
    }

    #[test]
    fn degenerate_axes_make_score_costs_equal() {
        let cfg = DecoderConfig { layers: 3, hidden_dim: 16, heads: 4, ff_dim: 32, variant: Variant::TimeSpace };
        let c = count_flops(&cfg, 1, 1);
        assert_eq!(c.time_space_scores, c.full_scores);
        assert_eq!(c.time_space, c.full);
    }

    #[test]
    fn factorized_attention_wins_at_scale() {
        let cfg = DecoderConfig {
            layers: 12,
            hidden_dim: 768,
            heads: 12,
            ff_dim: 3072,
            variant: Variant::TimeSpace,
        };
        let c = count_flops(&cfg, 8, 196);
        assert!(c.ratio() < 0.6, "ratio {}", c.ratio());
        assert!(c.time_space < c.full);
    }

    #[test]
    fn doubling_frames_quadruples_temporal_scores_and_full_grows_faster() {
        let cfg = DecoderConfig {
            layers: 2,
            hidden_dim: 64,
            heads: 4,
            ff_dim: 128,
            variant: Variant::TimeSpace,
        };
        // Spatial score cost is linear in T, so subtracting it isolates the
        // temporal score term 4*hw*T^2*d per layer.
        let spatial = |t: u64| cfg.layers as u64 * 4 * t * 16 * 16 * cfg.hidden_dim as u64;
        let a = count_flops(&cfg, 4, 16);
        let b = count_flops(&cfg, 8, 16);
        let temporal_a = a.time_space_scores - spatial(4);
        let temporal_b = b.time_space_scores - spatial(8);
        assert_eq!(temporal_b, 4 * temporal_a);
        assert!(b.full as f64 / a.full as f64 > b.time_space as f64 / a.time_space as f64);
    }
}
