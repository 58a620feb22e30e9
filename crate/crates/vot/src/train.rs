//! Training loop: AdamW with decoupled weight decay, global gradient-norm
//! clipping, and a linear-warmup/cosine-decay learning rate evaluated at
//! fractional epochs. One tape is built per batch step; every frame pair in
//! the batch contributes equally to the pooled loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::SequenceSample;
use crate::model::{ModelError, VotModel};
use crate::numerics::{NumericsError, Tape};
use crate::params::ParamStore;

pub const MAX_GRAD_NORM: f64 = 1.0;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss {value} at epoch {epoch} step {step}")]
    NonFiniteLoss { epoch: usize, step: usize, value: f64 },
    #[error("non-finite gradient in {param} at epoch {epoch} step {step}")]
    NonFiniteGradient { param: String, epoch: usize, step: usize },
    #[error("no training sequences")]
    NoSamples,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

/// Learning rate at fractional epoch `e`: linear from zero across the warmup
/// epochs, then a half cosine from the base rate down to zero at `epochs`.
pub fn lr_at(e: f64, cfg: &TrainConfig) -> f64 {
    let base = cfg.learning_rate;
    let warmup = cfg.warmup_epochs as f64;
    let total = cfg.epochs as f64;
    if e < warmup {
        return base * e / warmup;
    }
    if total <= warmup {
        return base;
    }
    let phase = (e - warmup) / (total - warmup);
    base * 0.5 * (1.0 + (std::f64::consts::PI * phase.clamp(0.0, 1.0)).cos())
}

/// Scales all gradients by max_norm/norm when the joint Euclidean norm
/// exceeds max_norm. Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.iter_mut() {
                *v *= s;
            }
        }
    }
    norm
}

/// AdamW over the trainable entries of a parameter store, in store order.
/// Weight decay is decoupled: it shrinks parameters directly and never enters
/// the moment estimates.
pub struct AdamW {
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(store: &ParamStore, weight_decay: f64) -> AdamW {
        assert!(weight_decay >= 0.0, "weight decay must be nonnegative, got {weight_decay}");
        let shapes: Vec<usize> = store.trainable().map(|e| e.data.len()).collect();
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn restore(store: &ParamStore, weight_decay: f64, step: u64, m: Vec<Vec<f64>>, v: Vec<Vec<f64>>) -> AdamW {
        let mut opt = AdamW::new(store, weight_decay);
        assert_eq!(m.len(), opt.m.len(), "moment count mismatch");
        assert_eq!(v.len(), opt.v.len(), "moment count mismatch");
        opt.step = step;
        opt.m = m;
        opt.v = v;
        opt
    }

    pub fn adam_step(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Vec<f64>], &[Vec<f64>]) {
        (&self.m, &self.v)
    }

    /// One update with gradients aligned to the store's trainable order.
    pub fn apply(&mut self, store: &mut ParamStore, grads: &[Vec<f64>], lr: f64) {
        let names: Vec<String> = store.trainable().map(|e| e.name.clone()).collect();
        assert_eq!(grads.len(), names.len(), "gradient/parameter count mismatch");
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, name) in names.iter().enumerate() {
            let data = store.data_mut(name);
            let g = &grads[i];
            assert_eq!(g.len(), data.len(), "{name}: gradient length mismatch");
            for j in 0..data.len() {
                self.m[i][j] = self.beta1 * self.m[i][j] + (1.0 - self.beta1) * g[j];
                self.v[i][j] = self.beta2 * self.v[i][j] + (1.0 - self.beta2) * g[j] * g[j];
                let mhat = self.m[i][j] / bc1;
                let vhat = self.v[i][j] / bc2;
                data[j] -= lr * (mhat / (vhat.sqrt() + self.eps) + self.weight_decay * data[j]);
            }
        }
    }
}

/// Sample visit order for an epoch; reseeded per (seed, epoch) so any epoch
/// can be re-derived in isolation when resuming.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mix = seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let mut rng = ChaCha8Rng::seed_from_u64(mix);
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    order
}

#[derive(Debug, Clone, Copy)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub rotation: f64,
    pub translation: f64,
    pub total: f64,
    pub lr: f64,
}

pub struct Trainer {
    model: VotModel,
    optimizer: AdamW,
    cfg: TrainConfig,
    epoch: usize,
    step_in_epoch: usize,
}

impl Trainer {
    pub fn new(model: VotModel, cfg: TrainConfig) -> Trainer {
        let optimizer = AdamW::new(model.store(), cfg.weight_decay);
        Trainer { model, optimizer, cfg, epoch: 0, step_in_epoch: 0 }
    }

    /// Rebuilds a trainer mid-run, continuing at `epoch`/`step_in_epoch`.
    pub fn resume(model: VotModel, cfg: TrainConfig, optimizer: AdamW, epoch: usize, step_in_epoch: usize) -> Trainer {
        Trainer { model, optimizer, cfg, epoch, step_in_epoch }
    }

    pub fn model(&self) -> &VotModel {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut VotModel {
        &mut self.model
    }

    pub fn into_model(self) -> VotModel {
        self.model
    }

    pub fn optimizer(&self) -> &AdamW {
        &self.optimizer
    }

    pub fn cfg(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn step_in_epoch(&self) -> usize {
        self.step_in_epoch
    }

    pub fn is_done(&self) -> bool {
        self.epoch >= self.cfg.epochs
    }

    pub fn steps_per_epoch(&self, n_samples: usize) -> usize {
        n_samples.div_ceil(self.cfg.batch_size.max(1))
    }

    /// Runs the remainder of the current epoch, one optimizer update per
    /// batch, invoking `sink` after each step.
    pub fn run_epoch(
        &mut self,
        samples: &[SequenceSample],
        mut sink: impl FnMut(&StepRecord),
    ) -> Result<(), TrainError> {
        if samples.is_empty() {
            return Err(TrainError::NoSamples);
        }
        if self.is_done() {
            return Ok(());
        }
        let epoch = self.epoch;
        let steps = self.steps_per_epoch(samples.len());
        let order = epoch_order(samples.len(), self.cfg.seed, epoch);
        let names: Vec<String> = self.model.store().trainable().map(|e| e.name.clone()).collect();

        for step in self.step_in_epoch..steps {
            let e = epoch as f64 + (step + 1) as f64 / steps as f64;
            let lr = lr_at(e, &self.cfg);
            let chunk =
                &order[step * self.cfg.batch_size..(samples.len().min((step + 1) * self.cfg.batch_size))];
            let batch: Vec<&SequenceSample> = chunk.iter().map(|&i| &samples[i]).collect();

            let tape = Tape::new();
            let bound = self.model.bind(&tape);
            let loss = self.model.loss(&tape, &bound, &batch)?;
            let (rotation, translation, total) =
                (loss.rotation.value(), loss.translation.value(), loss.total.value());
            if !total.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, step, value: total });
            }
            let grads = tape.backward(&loss.total)?;
            let mut gvecs: Vec<Vec<f64>> = Vec::with_capacity(names.len());
            for name in &names {
                let g = match grads.of(bound.get(name)) {
                    Some(g) => g.to_vec(),
                    None => vec![0.0; self.model.store().get(name).data.len()],
                };
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(TrainError::NonFiniteGradient { param: name.clone(), epoch, step });
                }
                gvecs.push(g);
            }
            clip_global_norm(&mut gvecs, MAX_GRAD_NORM);
            self.optimizer.apply(self.model.store_mut(), &gvecs, lr);
            sink(&StepRecord { epoch, step, rotation, translation, total, lr });
        }
        self.epoch += 1;
        self.step_in_epoch = 0;
        Ok(())
    }

    /// Runs every remaining epoch; `after_epoch` fires at each boundary.
    pub fn run(
        &mut self,
        samples: &[SequenceSample],
        mut sink: impl FnMut(&StepRecord),
        mut after_epoch: impl FnMut(&Trainer) -> Result<(), TrainError>,
    ) -> Result<(), TrainError> {
        while !self.is_done() {
            self.run_epoch(samples, &mut sink)?;
            after_epoch(self)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_sequence, sample_trajectory, Intrinsics, TrajectoryKind, World};
    use crate::decoder::{DecoderConfig, Variant};
    use crate::encoder::EncoderConfig;
    use crate::head::{LossWeights, Representation};

    fn sched() -> TrainConfig {
        TrainConfig {
            epochs: 60,
            warmup_epochs: 6,
            batch_size: 8,
            learning_rate: 3e-4,
            weight_decay: 0.01,
            seed: 7,
        }
    }

    #[test]
    fn warmup_is_linear_from_zero() {
        let cfg = sched();
        assert_eq!(lr_at(0.0, &cfg), 0.0);
        assert!((lr_at(3.0, &cfg) - 1.5e-4).abs() < 1e-18);
        assert!((lr_at(6.0, &cfg) - 3e-4).abs() < 1e-18);
    }

    #[test]
    fn cosine_tail_is_continuous_and_reaches_zero() {
        let cfg = sched();
        let eps = 1e-9;
        let before = lr_at(6.0 - eps, &cfg);
        let after = lr_at(6.0 + eps, &cfg);
        assert!((before - after).abs() < 1e-12);
        assert!((lr_at(33.0, &cfg) - 1.5e-4).abs() < 1e-18, "cosine midpoint is half the base");
        assert_eq!(lr_at(60.0, &cfg), 0.0);
    }

    #[test]
    fn degenerate_schedules_stay_finite() {
        let mut cfg = sched();
        cfg.epochs = 6; // no cosine phase at all
        assert_eq!(lr_at(6.0, &cfg), cfg.learning_rate);
        cfg.epochs = 0;
        cfg.warmup_epochs = 0;
        assert!(lr_at(0.0, &cfg).is_finite());
    }

    #[test]
    fn adamw_drives_a_quadratic_to_zero() {
        let mut store = ParamStore::new();
        store.insert("x", &[4], vec![1.0, -2.0, 3.0, -0.5], false);
        let mut opt = AdamW::new(&store, 0.0);
        for _ in 0..200 {
            let g: Vec<f64> = store.get("x").data.iter().map(|v| 2.0 * v).collect();
            opt.apply(&mut store, &[g], 0.1);
        }
        assert!(store.get("x").data.iter().all(|v| v.abs() < 1e-3));
    }

    #[test]
    fn zero_gradients_leave_parameters_unchanged_without_decay() {
        let mut store = ParamStore::new();
        store.insert("x", &[3], vec![0.5, -1.5, 2.0], false);
        let mut opt = AdamW::new(&store, 0.0);
        opt.apply(&mut store, &[vec![0.0; 3]], 0.1);
        assert_eq!(store.get("x").data, vec![0.5, -1.5, 2.0]);
    }

    #[test]
    fn weight_decay_shrinks_parameters_multiplicatively() {
        let mut store = ParamStore::new();
        store.insert("x", &[2], vec![2.0, -4.0], false);
        let mut opt = AdamW::new(&store, 0.01);
        opt.apply(&mut store, &[vec![0.0; 2]], 0.1);
        // Zero gradient leaves the Adam term at zero, so only decay acts.
        assert!((store.get("x").data[0] - 2.0 * (1.0 - 0.1 * 0.01)).abs() < 1e-15);
        assert!((store.get("x").data[1] + 4.0 * (1.0 - 0.1 * 0.01)).abs() < 1e-15);
    }

    #[test]
    fn clipping_rescales_only_above_the_threshold() {
        let mut big = vec![vec![3.0, 4.0], vec![0.0, 12.0]]; // norm 13
        let norm = clip_global_norm(&mut big, 1.0);
        assert!((norm - 13.0).abs() < 1e-12);
        let after: f64 = big.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
        assert!((after - 1.0).abs() < 1e-12);
        assert!((big[0][0] - 3.0 / 13.0).abs() < 1e-12, "direction preserved");

        let mut small = vec![vec![0.3, 0.4]];
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small[0], vec![0.3, 0.4]);
    }

    #[test]
    fn epoch_order_is_reproducible_and_epoch_dependent() {
        let a = epoch_order(20, 7, 3);
        let b = epoch_order(20, 7, 3);
        let c = epoch_order(20, 7, 4);
        assert_eq!(a, b);
        assert_ne!(a, c);
        let mut sorted = a.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..20).collect::<Vec<_>>());
    }

    fn tiny_model(seed: u64) -> VotModel {
        VotModel::new(
            EncoderConfig { patch_size: 8, hidden_dim: 8, frozen_layers: 0, seed: 3 },
            DecoderConfig { layers: 1, hidden_dim: 8, heads: 2, ff_dim: 12, variant: Variant::TimeSpace },
            Representation::RotationMatrix,
            LossWeights::default(),
            1,
            seed,
        )
    }

    fn tiny_samples(n: usize) -> Vec<SequenceSample> {
        (0..n)
            .map(|i| {
                let world = World::generate(70 + i as u64, 120, 4.0).unwrap();
                let traj = sample_trajectory(TrajectoryKind::IndoorWander, 8, 170 + i as u64);
                let intr = Intrinsics::default_for(8, 8);
                make_sequence(&world, &traj, 3, 2, 0, intr, 8, 8, 1).unwrap()
            })
            .collect()
    }

    #[test]
    fn one_epoch_steps_through_every_batch() {
        let cfg = TrainConfig {
            epochs: 1,
            warmup_epochs: 1,
            batch_size: 2,
            learning_rate: 1e-3,
            weight_decay: 0.0,
            seed: 5,
        };
        let mut trainer = Trainer::new(tiny_model(21), cfg);
        let samples = tiny_samples(5);
        let before = trainer.model().store().get("head.w").data.clone();
        let mut records = Vec::new();
        trainer.run_epoch(&samples, |r| records.push(*r)).unwrap();

        assert_eq!(records.len(), 3, "ceil(5/2) batches");
        for (i, r) in records.iter().enumerate() {
            assert_eq!(r.step, i);
            assert!(r.total.is_finite());
            let expect = lr_at((i + 1) as f64 / 3.0, &cfg);
            assert!((r.lr - expect).abs() < 1e-18);
        }
        assert!(trainer.is_done());
        assert_ne!(&before, &trainer.model().store().get("head.w").data, "parameters moved");
    }

    #[test]
    fn short_training_reduces_the_loss() {
        let cfg = TrainConfig {
            epochs: 20,
            warmup_epochs: 2,
            batch_size: 2,
            learning_rate: 1e-3,
            weight_decay: 0.0,
            seed: 6,
        };
        let mut trainer = Trainer::new(tiny_model(22), cfg);
        let samples = tiny_samples(2);
        let mut records = Vec::new();
        trainer.run(&samples, |r| records.push(*r), |_| Ok(())).unwrap();
        let first = records.first().unwrap().total;
        let last = records.last().unwrap().total;
        assert!(last < first, "loss should fall: {first} -> {last}");
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = TrainConfig {
            epochs: 2,
            warmup_epochs: 1,
            batch_size: 2,
            learning_rate: 1e-3,
            weight_decay: 0.01,
            seed: 9,
        };
        let samples = tiny_samples(4);
        let run = || {
            let mut trainer = Trainer::new(tiny_model(23), cfg);
            trainer.run(&samples, |_| {}, |_| Ok(())).unwrap();
            trainer.model().store().get("decoder.ce").data.clone()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn non_finite_losses_are_reported_with_context() {
        let cfg = TrainConfig {
            epochs: 1,
            warmup_epochs: 1,
            batch_size: 1,
            learning_rate: 1e-3,
            weight_decay: 0.0,
            seed: 11,
        };
        let mut model = tiny_model(24);
        model.store_mut().data_mut("head.w")[0] = f64::NAN;
        let mut trainer = Trainer::new(model, cfg);
        let samples = tiny_samples(1);
        let err = trainer.run_epoch(&samples, |_| {}).unwrap_err();
        assert!(matches!(err, TrainError::NonFiniteLoss { epoch: 0, step: 0, .. }));
        assert!(err.to_string().contains("epoch 0 step 0"));
    }
}
