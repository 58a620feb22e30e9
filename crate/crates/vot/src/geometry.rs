//! SO(3)/SE(3) primitives: rotations with checked invariants, world-from-camera
//! poses, trajectory composition, the Procrustes projection onto SO(3), and the
//! representation conversions the rotation-head ablation needs.
//!
//! Conventions, used everywhere in this crate:
//! - poses are world-from-camera; a relative pose maps frame k to frame k+1 by
//!   right-composition, `abs[k+1] = abs[k] * rel[k]`;
//! - quaternions are (w, x, y, z) with w >= 0;
//! - Euler angles are intrinsic ZYX: R = Rz(yaw) * Ry(pitch) * Rx(roll).

use crate::numerics::svd3::{svd3, Mat3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::UnitSphere;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("degenerate 3x3 input: two smallest singular values {sigma1:.3e}, {sigma2:.3e} are below 1e-12")]
    DegenerateInput { sigma1: f64, sigma2: f64 },
    #[error("matrix is not a rotation: max |m'm - I| = {ortho_err:.3e}, det = {det:.6}")]
    NotARotation { ortho_err: f64, det: f64 },
    #[error("trajectory needs equally many poses and timestamps, got {poses} and {timestamps}")]
    LengthMismatch { poses: usize, timestamps: usize },
    #[error("trajectory must hold at least one pose")]
    Empty,
    #[error("timestamps must be strictly increasing, violated at index {index}")]
    NonMonotoneTimestamps { index: usize },
}

fn mat_identity() -> Mat3 {
    [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
}

fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            out[r][c] = a[r][0] * b[0][c] + a[r][1] * b[1][c] + a[r][2] * b[2][c];
        }
    }
    out
}

fn mat_transpose(m: &Mat3) -> Mat3 {
    let mut t = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            t[c][r] = m[r][c];
        }
    }
    t
}

fn mat_vec(m: &Mat3, v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

fn mat_det(m: &Mat3) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

fn vec_sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn vec_add(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn vec_norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// A 3x3 rotation matrix; constructors guarantee m'm = I and det = +1
/// within 1e-9.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation {
    m: Mat3,
}

impl Rotation {
    pub fn identity() -> Rotation {
        Rotation { m: mat_identity() }
    }

    /// Validates orthonormality and determinant before accepting the matrix.
    pub fn from_matrix(m: Mat3) -> Result<Rotation, GeometryError> {
        let mtm = mat_mul(&mat_transpose(&m), &m);
        let mut ortho_err = 0.0f64;
        for r in 0..3 {
            for c in 0..3 {
                let id = if r == c { 1.0 } else { 0.0 };
                ortho_err = ortho_err.max((mtm[r][c] - id).abs());
            }
        }
        let det = mat_det(&m);
        if ortho_err > 1e-9 || (det - 1.0).abs() > 1e-9 {
            return Err(GeometryError::NotARotation { ortho_err, det });
        }
        Ok(Rotation { m })
    }

    /// For matrices already known to lie on SO(3) (products of rotations,
    /// Procrustes output). Checked in debug builds only.
    pub(crate) fn from_matrix_unchecked(m: Mat3) -> Rotation {
        debug_assert!(
            Rotation::from_matrix(m).is_ok(),
            "from_matrix_unchecked received a non-rotation"
        );
        Rotation { m }
    }

    /// Rodrigues formula; the axis is normalized internally.
    pub fn from_axis_angle(axis: [f64; 3], angle: f64) -> Rotation {
        let n = vec_norm(axis);
        assert!(n > 0.0, "rotation axis must be non-zero");
        let (x, y, z) = (axis[0] / n, axis[1] / n, axis[2] / n);
        let (s, c) = angle.sin_cos();
        let t = 1.0 - c;
        Rotation {
            m: [
                [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
                [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
                [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
            ],
        }
    }

    pub fn matrix(&self) -> Mat3 {
        self.m
    }

    pub fn inverse(&self) -> Rotation {
        Rotation { m: mat_transpose(&self.m) }
    }

    pub fn compose(&self, other: &Rotation) -> Rotation {
        Rotation { m: mat_mul(&self.m, &other.m) }
    }

    pub fn apply(&self, v: [f64; 3]) -> [f64; 3] {
        mat_vec(&self.m, v)
    }

    /// Rotation angle away from identity, in radians.
    pub fn angle(&self) -> f64 {
        geodesic_angle(&Rotation::identity(), self)
    }
}

/// Nearest rotation to an arbitrary 3x3 matrix in Frobenius norm, via SVD
/// m = U S V' and R = U diag(1, 1, det(UV')) V'. Inputs of rank < 2 (the two
/// smallest singular values below 1e-12) are rejected rather than silently
/// resolved to an arbitrary rotation.
pub fn procrustes_project(m_raw: &Mat3) -> Result<Rotation, GeometryError> {
    let (u, sigma, v) = svd3(m_raw);
    if sigma[1] < 1e-12 {
        return Err(GeometryError::DegenerateInput { sigma1: sigma[1], sigma2: sigma[2] });
    }
    let s = mat_det(&u) * mat_det(&v);
    let mut u_fixed = u;
    for r in 0..3 {
        u_fixed[r][2] *= s;
    }
    Ok(Rotation::from_matrix_unchecked(mat_mul(&u_fixed, &mat_transpose(&v))))
}

/// Trace of the projected prediction against a target rotation,
/// tr(P(m)' g) with P the nearest-rotation map of `procrustes_project`,
/// together with its exact gradient in the nine entries of m.
///
/// The gradient comes from the perturbation identities of the SVD. Writing
/// m = U S V', d = (1, 1, s) with s = det(U) det(V), and A = U' E V for a
/// perturbation E of m, the projected matrix moves by U F V' where
///
///   F_ij = (A_ij - A_ji) / (s_i + s_j)   when d_i d_j = +1,
///   F_ij = (A_ij + A_ji) / (s_i - s_j)   when d_i d_j = -1,
///
/// with zero diagonal: the projection never responds to pure scale. The
/// returned gradient is the adjoint of that linear map applied to g.
/// Denominators are floored at 1e-9 of the leading singular value; only a
/// reflection-side input (s = -1) with tied trailing singular values gets
/// near the floor, and there the nearest rotation itself is not unique, so
/// a bounded direction is the best any answer can do. Inputs of rank < 2
/// are rejected exactly as in `procrustes_project`.
pub fn projected_trace_with_grad(m_raw: &Mat3, g: &Mat3) -> Result<(f64, Mat3), GeometryError> {
    let (u, sigma, v) = svd3(m_raw);
    if sigma[1] < 1e-12 {
        return Err(GeometryError::DegenerateInput { sigma1: sigma[1], sigma2: sigma[2] });
    }
    let s = mat_det(&u) * mat_det(&v);
    let mut u_fixed = u;
    for r in 0..3 {
        u_fixed[r][2] *= s;
    }
    let p = mat_mul(&u_fixed, &mat_transpose(&v));
    let mut trace = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            trace += p[i][j] * g[i][j];
        }
    }

    let b = mat_mul(&mat_transpose(&u), &mat_mul(g, &v));
    let d = [1.0, 1.0, s];
    let floor = 1e-9 * sigma[0].max(1.0);
    let mut psi = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in (i + 1)..3 {
            let t = if d[i] * d[j] > 0.0 {
                let t = (b[i][j] - b[j][i]) / (sigma[i] + sigma[j]).max(floor);
                psi[j][i] = -t;
                t
            } else {
                let t = (b[i][j] + b[j][i]) / (sigma[i] - sigma[j]).max(floor);
                psi[j][i] = t;
                t
            };
            psi[i][j] = t;
        }
    }
    let grad = mat_mul(&u, &mat_mul(&psi, &mat_transpose(&v)));
    Ok((trace, grad))
}

/// Geodesic distance on SO(3): arccos((Tr(a'b) - 1) / 2), clamped against
/// floating-point trace excursions beyond [-1, 1]. Result lies in [0, pi].
pub fn geodesic_angle(a: &Rotation, b: &Rotation) -> f64 {
    let m = mat_mul(&mat_transpose(&a.m), &b.m);
    let tr = m[0][0] + m[1][1] + m[2][2];
    (((tr - 1.0) / 2.0).clamp(-1.0, 1.0)).acos()
}

/// World-from-camera rigid transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: [f64; 3],
}

impl Pose {
    pub fn identity() -> Pose {
        Pose { rotation: Rotation::identity(), translation: [0.0; 3] }
    }

    pub fn new(rotation: Rotation, translation: [f64; 3]) -> Pose {
        Pose { rotation, translation }
    }

    /// Right-composition: applies `rel` in this pose's camera frame.
    pub fn compose(&self, rel: &Pose) -> Pose {
        Pose {
            rotation: self.rotation.compose(&rel.rotation),
            translation: vec_add(self.rotation.apply(rel.translation), self.translation),
        }
    }

    pub fn inverse(&self) -> Pose {
        let rot_inv = self.rotation.inverse();
        let t = rot_inv.apply(self.translation);
        Pose { rotation: rot_inv, translation: [-t[0], -t[1], -t[2]] }
    }

    /// Relative transform from `self` to `other`: self * rel = other.
    pub fn relative_to(&self, other: &Pose) -> Pose {
        self.inverse().compose(other)
    }

    /// Maps a point from this pose's camera frame into the world frame.
    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        vec_add(self.rotation.apply(p), self.translation)
    }
}

/// Ordered absolute poses with strictly increasing timestamps (seconds).
#[derive(Debug, Clone)]
pub struct Trajectory {
    poses: Vec<Pose>,
    timestamps: Vec<f64>,
}

impl Trajectory {
    pub fn new(poses: Vec<Pose>, timestamps: Vec<f64>) -> Result<Trajectory, GeometryError> {
        if poses.is_empty() {
            return Err(GeometryError::Empty);
        }
        if poses.len() != timestamps.len() {
            return Err(GeometryError::LengthMismatch {
                poses: poses.len(),
                timestamps: timestamps.len(),
            });
        }
        for i in 1..timestamps.len() {
            if timestamps[i] <= timestamps[i - 1] {
                return Err(GeometryError::NonMonotoneTimestamps { index: i });
            }
        }
        Ok(Trajectory { poses, timestamps })
    }

    pub fn poses(&self) -> &[Pose] {
        &self.poses
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        false // the constructor rejects empty trajectories
    }

    /// Consecutive frame-to-frame relative poses, length len() - 1.
    pub fn relative_poses(&self) -> Vec<Pose> {
        self.poses.windows(2).map(|w| w[0].relative_to(&w[1])).collect()
    }

    /// Total ground path length: sum of consecutive position distances.
    pub fn path_length(&self) -> f64 {
        self.poses
            .windows(2)
            .map(|w| vec_norm(vec_sub(w[1].translation, w[0].translation)))
            .sum()
    }
}

/// Accumulates consecutive relative poses onto `start`.
pub fn compose_poses(start: &Pose, rel_poses: &[Pose]) -> Vec<Pose> {
    let mut out = Vec::with_capacity(rel_poses.len() + 1);
    out.push(*start);
    for rel in rel_poses {
        let next = out.last().unwrap().compose(rel);
        out.push(next);
    }
    out
}

/// Absolute trajectory from a start pose and consecutive relative poses;
/// timestamps are the frame indices 0, 1, 2, ... in seconds.
pub fn compose_relative(start: &Pose, rel_poses: &[Pose]) -> Trajectory {
    let poses = compose_poses(start, rel_poses);
    let timestamps = (0..poses.len()).map(|i| i as f64).collect();
    Trajectory::new(poses, timestamps).expect("indices are strictly increasing")
}

/// Unit quaternion (w, x, y, z) with w >= 0.
pub fn rot_to_quat(r: &Rotation) -> [f64; 4] {
    let m = &r.m;
    let trace = m[0][0] + m[1][1] + m[2][2];
    let mut q;
    if trace > 0.0 {
        let s = (trace + 1.0).sqrt() * 2.0;
        q = [
            0.25 * s,
            (m[2][1] - m[1][2]) / s,
            (m[0][2] - m[2][0]) / s,
            (m[1][0] - m[0][1]) / s,
        ];
    } else if m[0][0] > m[1][1] && m[0][0] > m[2][2] {
        let s = (1.0 + m[0][0] - m[1][1] - m[2][2]).sqrt() * 2.0;
        q = [
            (m[2][1] - m[1][2]) / s,
            0.25 * s,
            (m[0][1] + m[1][0]) / s,
            (m[0][2] + m[2][0]) / s,
        ];
    } else if m[1][1] > m[2][2] {
        let s = (1.0 + m[1][1] - m[0][0] - m[2][2]).sqrt() * 2.0;
        q = [
            (m[0][2] - m[2][0]) / s,
            (m[0][1] + m[1][0]) / s,
            0.25 * s,
            (m[1][2] + m[2][1]) / s,
        ];
    } else {
        let s = (1.0 + m[2][2] - m[0][0] - m[1][1]).sqrt() * 2.0;
        q = [
            (m[1][0] - m[0][1]) / s,
            (m[0][2] + m[2][0]) / s,
            (m[1][2] + m[2][1]) / s,
            0.25 * s,
        ];
    }
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    for x in q.iter_mut() {
        *x /= n;
    }
    if q[0] < 0.0 {
        for x in q.iter_mut() {
            *x = -*x;
        }
    }
    q
}

/// Rotation from a quaternion (w, x, y, z). The input is normalized
/// internally; the second return value is the input's norm so callers can
/// record how far from unit it was. A zero quaternion is rejected.
pub fn quat_to_rot(q: [f64; 4]) -> Result<(Rotation, f64), GeometryError> {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    if n < 1e-12 {
        return Err(GeometryError::DegenerateInput { sigma1: n, sigma2: n });
    }
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    let m = [
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
        ],
        [
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
        ],
        [
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ];
    Ok((Rotation::from_matrix_unchecked(m), n))
}

/// Intrinsic ZYX Euler angles in radians. `gimbal_lock` is set when |pitch|
/// is within 1e-7 of pi/2; on that branch roll is absorbed into yaw and
/// reported as zero, which still reconstructs the input rotation exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EulerZyx {
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
    pub gimbal_lock: bool,
}

pub fn rot_to_euler(r: &Rotation) -> EulerZyx {
    let m = &r.m;
    let pitch = (-m[2][0]).clamp(-1.0, 1.0).asin();
    if std::f64::consts::FRAC_PI_2 - pitch.abs() < 1e-7 {
        // Only yaw -/+ roll is observable; pick roll = 0 deterministically.
        let yaw = (-m[0][1]).atan2(m[1][1]);
        return EulerZyx { yaw, pitch, roll: 0.0, gimbal_lock: true };
    }
    EulerZyx {
        yaw: m[1][0].atan2(m[0][0]),
        pitch,
        roll: m[2][1].atan2(m[2][2]),
        gimbal_lock: false,
    }
}

pub fn euler_to_rot(yaw: f64, pitch: f64, roll: f64) -> Rotation {
    let (sy, cy) = yaw.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let (sr, cr) = roll.sin_cos();
    let m = [
        [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
        [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
        [-sp, cp * sr, cp * cr],
    ];
    Rotation::from_matrix_unchecked(m)
}

/// Axis uniform on the sphere, angle uniform in (0, max_angle].
pub fn random_rotation_with<R: Rng>(rng: &mut R, max_angle: f64) -> Rotation {
    assert!(
        max_angle > 0.0 && max_angle <= std::f64::consts::PI,
        "max_angle must lie in (0, pi], got {max_angle}"
    );
    let axis: [f64; 3] = rng.sample(UnitSphere);
    let angle = max_angle * (1.0 - rng.random::<f64>()); // (0, max_angle]
    Rotation::from_axis_angle(axis, angle)
}

/// Deterministic per seed.
pub fn random_rotation(rng_seed: u64, max_angle: f64) -> Rotation {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    random_rotation_with(&mut rng, max_angle)
}
