//! Pose head: a linear readout from each camera state to a relative pose in
//! one of three rotation parameterizations, the geodesic/L1 training losses,
//! and the forward-only decoding of head outputs into rigid transforms.
//!
//! The matrix parameterization measures the geodesic angle on the
//! orthogonality-projected prediction and differentiates through the
//! projection exactly, using the closed-form derivative of the
//! nearest-rotation map rather than anything algorithmic. Quaternion and
//! Euler outputs build exact rotations, so their trace routes differentiate
//! end to end as ordinary graph operations.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    euler_to_rot, geodesic_angle, procrustes_project, projected_trace_with_grad, quat_to_rot,
    GeometryError, Pose, Rotation,
};
use crate::numerics::{NumericsError, Tape, Tensor};
use crate::params::{BoundParams, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    RotationMatrix,
    Quaternion,
    Euler,
}

impl Representation {
    /// Head output width: rotation parameters followed by the translation.
    pub fn width(&self) -> usize {
        match self {
            Representation::RotationMatrix => 12,
            Representation::Quaternion => 7,
            Representation::Euler => 6,
        }
    }
}

/// lambda scales the rotation term, gamma the translation term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> LossWeights {
        LossWeights { lambda: 10.0, gamma: 1.0 }
    }
}

#[derive(Debug, Error)]
pub enum HeadError {
    #[error("frame pair {pair}: {source}")]
    BadRotation {
        pair: usize,
        #[source]
        source: GeometryError,
    },
}

/// Per-pair loss terms, each a scalar tensor, in frame-pair order. Keeping
/// them separate lets a batch pool pairs from several sequences before
/// averaging.
pub struct PairTerms {
    pub rotation: Vec<Tensor>,
    pub translation: Vec<Tensor>,
}

pub struct Head {
    representation: Representation,
}

impl Head {
    /// Inserts the readout weight and a bias that decodes to the identity
    /// pose, so an untrained model predicts no motion. The weight starts
    /// small: camera states have norms in the tens, and a larger draw would
    /// swamp the identity bias and start the rotations essentially random.
    pub fn init(
        representation: Representation,
        hidden_dim: usize,
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
    ) -> Head {
        let width = representation.width();
        store.insert_gaussian("head.w", &[hidden_dim, width], 0.001, rng, false);
        store.insert("head.b", &[width], identity_bias(representation), false);
        Head { representation }
    }

    pub fn representation(&self) -> Representation {
        self.representation
    }

    /// T x width raw pose parameters, one row per camera state.
    pub fn outputs(
        &self,
        tape: &Tape,
        params: &BoundParams,
        camera_states: &Tensor,
    ) -> Result<Tensor, NumericsError> {
        tape.linear(camera_states, params.get("head.w"), params.get("head.b"))
    }

    /// Loss terms for rows 1..T against the T-1 ground-truth relative poses;
    /// row k predicts the motion from frame k-1 to frame k, so row 0 carries
    /// no pair and is skipped.
    pub fn pair_terms(
        &self,
        tape: &Tape,
        outputs: &Tensor,
        rel_gt: &[Pose],
    ) -> Result<PairTerms, NumericsError> {
        let t = outputs.shape()[0];
        let width = self.representation.width();
        assert_eq!(outputs.shape()[1], width, "head output width mismatch");
        assert_eq!(rel_gt.len(), t - 1, "need one ground-truth pose per frame pair");

        let mut rotation = Vec::with_capacity(t - 1);
        let mut translation = Vec::with_capacity(t - 1);
        for (pair, gt) in rel_gt.iter().enumerate() {
            let row = tape.reshape(&tape.slice(outputs, 0, pair + 1, pair + 2)?, &[width])?;
            let g = gt.rotation.matrix();
            let angle = match self.representation {
                Representation::RotationMatrix => {
                    let f9 = tape.slice(&row, 0, 0, 9)?;
                    let d = f9.data();
                    let m = [[d[0], d[1], d[2]], [d[3], d[4], d[5]], [d[6], d[7], d[8]]];
                    let projected = d
                        .iter()
                        .all(|v| v.is_finite())
                        .then(|| projected_trace_with_grad(&m, &g).ok())
                        .flatten();
                    let tr = match projected {
                        // The angle is measured on the orthogonality-projected
                        // matrix and the gradient follows the projection
                        // exactly: the graph node is the first-order expansion
                        // of tr(P(F)' G) around the current output. A raw
                        // trace would be gameable here, since scale alone can
                        // push it past the arccos clamp and zero the loss with
                        // the rotation still wrong.
                        Some((value, grad)) => {
                            let j9 =
                                Tensor::constant(&[9], grad.iter().flatten().copied().collect());
                            let lin = tape.sum_all(&tape.mul(&f9, &j9)?);
                            tape.add_scalar(&lin, value - lin.value())
                        }
                        // A rank-deficient output has no nearest rotation and
                        // a non-finite one cannot enter the decomposition; in
                        // both cases the raw trace keeps the step defined, so
                        // a NaN surfaces in the loss value and the gradient
                        // of a degenerate matrix pulls it back toward full
                        // rank.
                        None => {
                            let g9 =
                                Tensor::constant(&[9], g.iter().flatten().copied().collect());
                            tape.sum_all(&tape.mul(&f9, &g9)?)
                        }
                    };
                    angle_from_trace(tape, &tr)
                }
                Representation::Quaternion => quaternion_angle(tape, &row, &g)?,
                Representation::Euler => euler_angle(tape, &row, &g)?,
            };
            rotation.push(angle);

            let t3 = tape.slice(&row, 0, width - 3, width)?;
            let gt_t = Tensor::constant(&[3], gt.translation.to_vec());
            translation.push(tape.sum_all(&tape.abs(&tape.sub(&t3, &gt_t)?)));
        }
        Ok(PairTerms { rotation, translation })
    }

    /// Decodes head outputs into relative poses for rows 1..T, projecting or
    /// normalizing the rotation parameters as the representation requires.
    pub fn predict_poses(&self, outputs: &Tensor) -> Result<Vec<Pose>, HeadError> {
        let t = outputs.shape()[0];
        let width = self.representation.width();
        let data = outputs.data();
        let mut poses = Vec::with_capacity(t - 1);
        for pair in 0..t - 1 {
            let row = &data[(pair + 1) * width..(pair + 2) * width];
            let wrap = |source| HeadError::BadRotation { pair, source };
            let rotation = match self.representation {
                Representation::RotationMatrix => {
                    let m = [
                        [row[0], row[1], row[2]],
                        [row[3], row[4], row[5]],
                        [row[6], row[7], row[8]],
                    ];
                    procrustes_project(&m).map_err(wrap)?
                }
                Representation::Quaternion => {
                    quat_to_rot([row[0], row[1], row[2], row[3]]).map_err(wrap)?.0
                }
                Representation::Euler => euler_to_rot(row[0], row[1], row[2]),
            };
            let tr = &row[width - 3..];
            poses.push(Pose::new(rotation, [tr[0], tr[1], tr[2]]));
        }
        Ok(poses)
    }
}

fn identity_bias(representation: Representation) -> Vec<f64> {
    match representation {
        Representation::RotationMatrix => {
            vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]
        }
        Representation::Quaternion => vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        Representation::Euler => vec![0.0; 6],
    }
}

/// acos((tr - 1) / 2), the geodesic angle given a trace-against-target.
fn angle_from_trace(tape: &Tape, tr: &Tensor) -> Tensor {
    tape.acos_clip(&tape.add_scalar(&tape.scale(tr, 0.5), -0.5))
}

fn at(tape: &Tape, row: &Tensor, i: usize) -> Result<Tensor, NumericsError> {
    tape.slice(row, 0, i, i + 1)
}

/// Trace of G' R(q) with R in homogeneous form (entries quadratic in q,
/// divided by |q|^2), so no explicit normalization enters the graph.
fn quaternion_angle(tape: &Tape, row: &Tensor, g: &[[f64; 3]; 3]) -> Result<Tensor, NumericsError> {
    let w = at(tape, row, 0)?;
    let x = at(tape, row, 1)?;
    let y = at(tape, row, 2)?;
    let z = at(tape, row, 3)?;
    let ww = tape.mul(&w, &w)?;
    let xx = tape.mul(&x, &x)?;
    let yy = tape.mul(&y, &y)?;
    let zz = tape.mul(&z, &z)?;
    let xy = tape.mul(&x, &y)?;
    let wz = tape.mul(&w, &z)?;
    let xz = tape.mul(&x, &z)?;
    let wy = tape.mul(&w, &y)?;
    let yz = tape.mul(&y, &z)?;
    let wx = tape.mul(&w, &x)?;

    let m = [
        [
            tape.sub(&tape.add(&ww, &xx)?, &tape.add(&yy, &zz)?)?,
            tape.scale(&tape.sub(&xy, &wz)?, 2.0),
            tape.scale(&tape.add(&xz, &wy)?, 2.0),
        ],
        [
            tape.scale(&tape.add(&xy, &wz)?, 2.0),
            tape.add(&tape.sub(&ww, &xx)?, &tape.sub(&yy, &zz)?)?,
            tape.scale(&tape.sub(&yz, &wx)?, 2.0),
        ],
        [
            tape.scale(&tape.sub(&xz, &wy)?, 2.0),
            tape.scale(&tape.add(&yz, &wx)?, 2.0),
            tape.sub(&tape.add(&ww, &zz)?, &tape.add(&xx, &yy)?)?,
        ],
    ];
    let num = trace_against(tape, g, &m)?;
    let n2 = tape.add(&tape.add(&ww, &xx)?, &tape.add(&yy, &zz)?)?;
    Ok(angle_from_trace(tape, &tape.div(&num, &n2)?))
}

/// Trace of G' Rz(yaw) Ry(pitch) Rx(roll), entries written out so the graph
/// stays in sin/cos primitives.
fn euler_angle(tape: &Tape, row: &Tensor, g: &[[f64; 3]; 3]) -> Result<Tensor, NumericsError> {
    let yaw = at(tape, row, 0)?;
    let pitch = at(tape, row, 1)?;
    let roll = at(tape, row, 2)?;
    let sy = tape.sin(&yaw);
    let cy = tape.cos(&yaw);
    let sp = tape.sin(&pitch);
    let cp = tape.cos(&pitch);
    let sr = tape.sin(&roll);
    let cr = tape.cos(&roll);

    let m = [
        [
            tape.mul(&cy, &cp)?,
            tape.sub(&tape.mul(&tape.mul(&cy, &sp)?, &sr)?, &tape.mul(&sy, &cr)?)?,
            tape.add(&tape.mul(&tape.mul(&cy, &sp)?, &cr)?, &tape.mul(&sy, &sr)?)?,
        ],
        [
            tape.mul(&sy, &cp)?,
            tape.add(&tape.mul(&tape.mul(&sy, &sp)?, &sr)?, &tape.mul(&cy, &cr)?)?,
            tape.sub(&tape.mul(&tape.mul(&sy, &sp)?, &cr)?, &tape.mul(&cy, &sr)?)?,
        ],
        [tape.neg(&sp), tape.mul(&cp, &sr)?, tape.mul(&cp, &cr)?],
    ];
    let num = trace_against(tape, g, &m)?;
    Ok(angle_from_trace(tape, &num))
}

fn trace_against(
    tape: &Tape,
    g: &[[f64; 3]; 3],
    m: &[[Tensor; 3]; 3],
) -> Result<Tensor, NumericsError> {
    let mut acc: Option<Tensor> = None;
    for i in 0..3 {
        for j in 0..3 {
            let term = tape.scale(&m[i][j], g[i][j]);
            acc = Some(match acc {
                Some(a) => tape.add(&a, &term)?,
                None => term,
            });
        }
    }
    Ok(acc.expect("nine terms"))
}

/// Mean of the per-term scalars; the batch-level pooling step.
pub fn pool_terms(tape: &Tape, terms: &[Tensor]) -> Result<Tensor, NumericsError> {
    assert!(!terms.is_empty(), "cannot pool zero loss terms");
    let refs: Vec<&Tensor> = terms.iter().collect();
    Ok(tape.mean_all(&tape.concat(&refs, 0)?))
}

pub fn weighted_total(
    tape: &Tape,
    rotation: &Tensor,
    translation: &Tensor,
    weights: LossWeights,
) -> Result<Tensor, NumericsError> {
    tape.add(&tape.scale(rotation, weights.lambda), &tape.scale(translation, weights.gamma))
}

/// Mean geodesic angle between prediction/target rotation pairs.
pub fn rotation_loss(pred: &[Rotation], gt: &[Rotation]) -> f64 {
    assert_eq!(pred.len(), gt.len());
    assert!(!pred.is_empty());
    pred.iter().zip(gt).map(|(p, g)| geodesic_angle(p, g)).sum::<f64>() / pred.len() as f64
}

/// Mean L1 norm of prediction/target translation differences.
pub fn translation_loss(pred: &[[f64; 3]], gt: &[[f64; 3]]) -> f64 {
    assert_eq!(pred.len(), gt.len());
    assert!(!pred.is_empty());
    let total: f64 = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| (0..3).map(|i| (p[i] - g[i]).abs()).sum::<f64>())
        .sum();
    total / pred.len() as f64
}

pub fn total_loss(rotation: f64, translation: f64, weights: LossWeights) -> f64 {
    weights.lambda * rotation + weights.gamma * translation
}
