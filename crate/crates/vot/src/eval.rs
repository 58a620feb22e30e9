//! Trajectory metrics: absolute translation/rotation RMSE, segment-relative
//! errors, and least-squares trajectory alignment (rigid or with scale).
//! Estimates are aligned onto the ground truth; rotation errors are reported
//! in degrees, translations in meters.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{geodesic_angle, GeometryError, Pose, Rotation, Trajectory};
use crate::numerics::svd3::{svd3, Mat3};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("trajectory lengths differ: ground truth {gt}, estimate {est}")]
    LengthMismatch { gt: usize, est: usize },
    #[error("need at least {needed} poses, got {got}")]
    TooFewPoses { needed: usize, got: usize },
    #[error("degenerate alignment: {what}")]
    Degenerate { what: String },
    #[error("no {definition} segments fit inside the trajectory")]
    NoSegments { definition: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignMode {
    None,
    Se3,
    Sim3,
}

/// How relative-error segments are chosen: every consecutive frame pair, or
/// from each frame to the first whose ground-truth path distance strictly
/// exceeds the given length in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentDef {
    PerFramePair,
    PerMeter(f64),
}

impl std::fmt::Display for SegmentDef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SegmentDef::PerFramePair => write!(f, "per_frame_pair"),
            SegmentDef::PerMeter(m) => write!(f, "per_meter({m})"),
        }
    }
}

/// Similarity transform est -> gt: p |-> scale * R p + t.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alignment {
    pub scale: f64,
    pub rotation: Rotation,
    pub translation: [f64; 3],
}

impl Alignment {
    pub fn identity() -> Alignment {
        Alignment { scale: 1.0, rotation: Rotation::identity(), translation: [0.0; 3] }
    }

    pub fn apply_point(&self, p: [f64; 3]) -> [f64; 3] {
        let r = self.rotation.apply(p);
        [
            self.scale * r[0] + self.translation[0],
            self.scale * r[1] + self.translation[1],
            self.scale * r[2] + self.translation[2],
        ]
    }

    /// Moves a camera pose: position like a point, orientation left-composed.
    pub fn apply_pose(&self, pose: &Pose) -> Pose {
        Pose::new(self.rotation.compose(&pose.rotation), self.apply_point(pose.translation))
    }
}

pub fn apply_alignment(a: &Alignment, poses: &[Pose]) -> Vec<Pose> {
    poses.iter().map(|p| a.apply_pose(p)).collect()
}

/// Least-squares similarity (or rigid, when `with_scale` is false) transform
/// mapping estimated positions onto ground-truth positions. Rejects point
/// sets whose cross-covariance is rank deficient (coincident or collinear
/// trajectories), where the rotation is not determined.
pub fn umeyama_align(est: &[Pose], gt: &[Pose], with_scale: bool) -> Result<Alignment, EvalError> {
    if est.len() != gt.len() {
        return Err(EvalError::LengthMismatch { gt: gt.len(), est: est.len() });
    }
    if est.len() < 3 {
        return Err(EvalError::TooFewPoses { needed: 3, got: est.len() });
    }
    let n = est.len() as f64;
    let mean = |ps: &[Pose]| -> [f64; 3] {
        let mut m = [0.0; 3];
        for p in ps {
            for k in 0..3 {
                m[k] += p.translation[k];
            }
        }
        [m[0] / n, m[1] / n, m[2] / n]
    };
    let mu_x = mean(est);
    let mu_y = mean(gt);

    let mut cov: Mat3 = [[0.0; 3]; 3];
    let mut var_x = 0.0;
    for (e, g) in est.iter().zip(gt) {
        let x = [
            e.translation[0] - mu_x[0],
            e.translation[1] - mu_x[1],
            e.translation[2] - mu_x[2],
        ];
        let y = [
            g.translation[0] - mu_y[0],
            g.translation[1] - mu_y[1],
            g.translation[2] - mu_y[2],
        ];
        for r in 0..3 {
            for c in 0..3 {
                cov[r][c] += y[r] * x[c] / n;
            }
        }
        var_x += (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]) / n;
    }

    let (u, d, v) = svd3(&cov);
    if d[1] <= 1e-9 * d[0].max(1e-300) || d[0] == 0.0 {
        return Err(EvalError::Degenerate {
            what: format!("cross-covariance is rank deficient (singular values {d:?})"),
        });
    }
    let det_sign = mat_det(&u) * mat_det(&v);
    let s2 = if det_sign < 0.0 { -1.0 } else { 1.0 };
    let mut u_fixed = u;
    for r in 0..3 {
        u_fixed[r][2] *= s2;
    }
    let rot = Rotation::from_matrix(mat_mul(&u_fixed, &mat_transpose(&v)))
        .map_err(|e| EvalError::Degenerate { what: e.to_string() })?;
    let scale = if with_scale {
        if var_x <= 0.0 {
            return Err(EvalError::Degenerate { what: "estimate has zero spread".into() });
        }
        (d[0] + d[1] + s2 * d[2]) / var_x
    } else {
        1.0
    };
    let rmx = rot.apply(mu_x);
    let translation = [
        mu_y[0] - scale * rmx[0],
        mu_y[1] - scale * rmx[1],
        mu_y[2] - scale * rmx[2],
    ];
    Ok(Alignment { scale, rotation: rot, translation })
}

fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            out[r][c] = (0..3).map(|k| a[r][k] * b[k][c]).sum();
        }
    }
    out
}

fn mat_transpose(a: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            out[r][c] = a[c][r];
        }
    }
    out
}

fn mat_det(a: &Mat3) -> f64 {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
        - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

fn check_lengths(gt: &[Pose], est: &[Pose]) -> Result<(), EvalError> {
    if gt.len() != est.len() {
        return Err(EvalError::LengthMismatch { gt: gt.len(), est: est.len() });
    }
    if gt.is_empty() {
        return Err(EvalError::TooFewPoses { needed: 1, got: 0 });
    }
    Ok(())
}

/// RMSE of per-frame position differences, meters.
pub fn ate_rmse(gt: &[Pose], est: &[Pose]) -> Result<f64, EvalError> {
    check_lengths(gt, est)?;
    let sum: f64 = gt
        .iter()
        .zip(est)
        .map(|(g, e)| {
            (0..3).map(|k| (g.translation[k] - e.translation[k]).powi(2)).sum::<f64>()
        })
        .sum();
    Ok((sum / gt.len() as f64).sqrt())
}

/// RMSE of per-frame geodesic rotation errors, degrees.
pub fn are_rmse_deg(gt: &[Pose], est: &[Pose]) -> Result<f64, EvalError> {
    check_lengths(gt, est)?;
    let sum: f64 = gt
        .iter()
        .zip(est)
        .map(|(g, e)| geodesic_angle(&g.rotation, &e.rotation).to_degrees().powi(2))
        .sum();
    Ok((sum / gt.len() as f64).sqrt())
}

/// Segment (start, end) index pairs under a definition; `per_meter` closes a
/// segment at the first frame whose ground-truth path distance from the start
/// strictly exceeds the length.
fn segments(gt: &Trajectory, def: SegmentDef) -> Vec<(usize, usize)> {
    let n = gt.len();
    match def {
        SegmentDef::PerFramePair => (0..n.saturating_sub(1)).map(|i| (i, i + 1)).collect(),
        SegmentDef::PerMeter(len) => {
            let mut cum = vec![0.0; n];
            for (i, w) in gt.poses().windows(2).enumerate() {
                let d: f64 = (0..3)
                    .map(|k| (w[1].translation[k] - w[0].translation[k]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                cum[i + 1] = cum[i] + d;
            }
            let mut out = Vec::new();
            let mut j = 0;
            for i in 0..n {
                if j <= i {
                    j = i + 1;
                }
                while j < n && cum[j] - cum[i] <= len {
                    j += 1;
                }
                if j < n {
                    out.push((i, j));
                }
            }
            out
        }
    }
}

/// Relative translation (meters) and rotation (degrees) RMSE over segments:
/// the residual rel_gt^-1 * rel_est per segment.
pub fn rte_rre(gt: &Trajectory, est: &Trajectory, def: SegmentDef) -> Result<(f64, f64), EvalError> {
    if gt.len() != est.len() {
        return Err(EvalError::LengthMismatch { gt: gt.len(), est: est.len() });
    }
    let segs = segments(gt, def);
    if segs.is_empty() {
        return Err(EvalError::NoSegments { definition: def.to_string() });
    }
    let mut t2 = 0.0;
    let mut r2 = 0.0;
    for &(i, j) in &segs {
        let rel_gt = gt.poses()[i].relative_to(&gt.poses()[j]);
        let rel_est = est.poses()[i].relative_to(&est.poses()[j]);
        let residual = rel_gt.inverse().compose(&rel_est);
        t2 += residual.translation.iter().map(|v| v * v).sum::<f64>();
        r2 += residual.rotation.angle().to_degrees().powi(2);
    }
    let n = segs.len() as f64;
    Ok(((t2 / n).sqrt(), (r2 / n).sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub ate_m: f64,
    pub are_deg: f64,
    pub rte_m: f64,
    pub rre_deg: f64,
    pub aligned: AlignMode,
    pub segment_definition: SegmentDef,
}

impl MetricReport {
    /// Single-row CSV, columns in absolute-then-relative order.
    pub fn to_csv(&self) -> String {
        format!(
            "ate_m,are_deg,rte_m,rre_deg\n{},{},{},{}\n",
            self.ate_m, self.are_deg, self.rte_m, self.rre_deg
        )
    }
}

/// Full comparison: optional alignment of the estimate onto the ground truth,
/// then absolute and segment-relative metrics on the (aligned) estimate.
pub fn evaluate(
    gt: &Trajectory,
    est: &Trajectory,
    align: AlignMode,
    segment: SegmentDef,
) -> Result<MetricReport, EvalError> {
    if gt.len() != est.len() {
        return Err(EvalError::LengthMismatch { gt: gt.len(), est: est.len() });
    }
    let est_poses = match align {
        AlignMode::None => est.poses().to_vec(),
        AlignMode::Se3 => {
            apply_alignment(&umeyama_align(est.poses(), gt.poses(), false)?, est.poses())
        }
        AlignMode::Sim3 => {
            apply_alignment(&umeyama_align(est.poses(), gt.poses(), true)?, est.poses())
        }
    };
    let ate_m = ate_rmse(gt.poses(), &est_poses)?;
    let are_deg = are_rmse_deg(gt.poses(), &est_poses)?;
    let est_aligned = Trajectory::new(est_poses, est.timestamps().to_vec())?;
    let (rte_m, rre_deg) = rte_rre(gt, &est_aligned, segment)?;
    Ok(MetricReport { ate_m, are_deg, rte_m, rre_deg, aligned: align, segment_definition: segment })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{random_rotation, compose_poses};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn straight_line(n: usize, step: f64) -> Vec<Pose> {
        (0..n)
            .map(|i| Pose::new(Rotation::identity(), [step * i as f64, 0.0, 0.0]))
            .collect()
    }

    fn wiggly(seed: u64, n: usize) -> Trajectory {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rels: Vec<Pose> = (0..n - 1)
            .map(|_| {
                Pose::new(
                    random_rotation(rng.random(), 0.3),
                    [
                        rng.random_range(-0.2..0.2),
                        rng.random_range(-0.2..0.2),
                        rng.random_range(0.1..0.4),
                    ],
                )
            })
            .collect();
        let poses = compose_poses(&Pose::identity(), &rels);
        let ts = (0..n).map(|i| i as f64).collect();
        Trajectory::new(poses, ts).unwrap()
    }

    #[test]
    fn alternating_offsets_give_root_half() {
        let gt = straight_line(10, 1.0);
        let est: Vec<Pose> = gt
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let dy = if i % 2 == 1 { 1.0 } else { 0.0 };
                Pose::new(p.rotation, [p.translation[0], p.translation[1] + dy, p.translation[2]])
            })
            .collect();
        assert!((ate_rmse(&gt, &est).unwrap() - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn rotation_errors_average_in_squares() {
        let gt = straight_line(4, 1.0);
        let ten = Rotation::from_axis_angle([0.0, 0.0, 1.0], 10f64.to_radians());
        let est: Vec<Pose> = gt
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let r = if i % 2 == 1 { ten.compose(&p.rotation) } else { p.rotation };
                Pose::new(r, p.translation)
            })
            .collect();
        assert!((are_rmse_deg(&gt, &est).unwrap() - 10.0 / 2f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn rigid_alignment_cancels_a_global_offset() {
        let gt = wiggly(1, 30);
        let offset = Pose::new(random_rotation(99, 1.0), [4.0, -2.0, 7.0]);
        let est_poses: Vec<Pose> = gt.poses().iter().map(|p| offset.compose(p)).collect();
        let est = Trajectory::new(est_poses, gt.timestamps().to_vec()).unwrap();

        let raw = evaluate(&gt, &est, AlignMode::None, SegmentDef::PerFramePair).unwrap();
        assert!(raw.ate_m > 1.0, "offset must show up unaligned: {}", raw.ate_m);

        let aligned = evaluate(&gt, &est, AlignMode::Se3, SegmentDef::PerFramePair).unwrap();
        assert!(aligned.ate_m < 1e-9, "rigid alignment removes the offset: {}", aligned.ate_m);
        // Angles this small bottom out at arccos resolution, ~1e-8 rad.
        assert!(aligned.are_deg < 1e-5);
        // Relative errors never saw the offset in the first place.
        assert!(raw.rte_m < 1e-9 && raw.rre_deg < 1e-5);
    }

    #[test]
    fn one_percent_scale_drift_shows_up_per_meter() {
        // Steps of 1/8 m are exact in binary, so every cumulative distance
        // comparison is deterministic: segments close at the first frame
        // strictly past 1 m, which is 9 steps = 1.125 m.
        let gt_poses = straight_line(100, 0.125);
        let est_poses: Vec<Pose> = gt_poses
            .iter()
            .map(|p| Pose::new(p.rotation, [p.translation[0] * 1.01, 0.0, 0.0]))
            .collect();
        let ts: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let gt = Trajectory::new(gt_poses, ts.clone()).unwrap();
        let est = Trajectory::new(est_poses, ts).unwrap();

        let (rte, rre) = rte_rre(&gt, &est, SegmentDef::PerMeter(1.0)).unwrap();
        assert!((rte - 0.01 * 1.125).abs() < 1e-12, "rte {rte}");
        assert!(rre < 1e-9, "pure scale drift has no rotation error");
    }

    #[test]
    fn similarity_alignment_recovers_the_inverse_scale() {
        let gt = wiggly(2, 40);
        let est_poses: Vec<Pose> = gt
            .poses()
            .iter()
            .map(|p| {
                Pose::new(
                    p.rotation,
                    [2.0 * p.translation[0], 2.0 * p.translation[1], 2.0 * p.translation[2]],
                )
            })
            .collect();
        let a = umeyama_align(&est_poses, gt.poses(), true).unwrap();
        assert!((a.scale - 0.5).abs() < 1e-9, "doubled estimate aligns back with scale one half");
        assert!(geodesic_angle(&a.rotation, &Rotation::identity()) < 1e-9);

        let rigid = umeyama_align(&est_poses, gt.poses(), false).unwrap();
        assert_eq!(rigid.scale, 1.0);
    }

    #[test]
    fn alignment_never_hurts_ate() {
        for seed in 0..8 {
            let gt = wiggly(10 + seed, 25);
            let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
            let est_poses: Vec<Pose> = gt
                .poses()
                .iter()
                .map(|p| {
                    Pose::new(
                        random_rotation(rng.random(), 0.2).compose(&p.rotation),
                        [
                            p.translation[0] + rng.random_range(-0.3..0.3),
                            p.translation[1] + rng.random_range(-0.3..0.3),
                            p.translation[2] + rng.random_range(-0.3..0.3),
                        ],
                    )
                })
                .collect();
            let est = Trajectory::new(est_poses, gt.timestamps().to_vec()).unwrap();
            let raw = evaluate(&gt, &est, AlignMode::None, SegmentDef::PerFramePair).unwrap();
            let se3 = evaluate(&gt, &est, AlignMode::Se3, SegmentDef::PerFramePair).unwrap();
            let sim3 = evaluate(&gt, &est, AlignMode::Sim3, SegmentDef::PerFramePair).unwrap();
            assert!(se3.ate_m <= raw.ate_m + 1e-12);
            assert!(sim3.ate_m <= se3.ate_m + 1e-12, "scale freedom can only help");
        }
    }

    #[test]
    fn rigid_alignment_preserves_inter_frame_distances() {
        let gt = wiggly(3, 20);
        let est = wiggly(4, 20);
        let a = umeyama_align(est.poses(), gt.poses(), false).unwrap();
        let moved = apply_alignment(&a, est.poses());
        for i in 0..20 {
            for j in i + 1..20 {
                let before: f64 = (0..3)
                    .map(|k| (est.poses()[i].translation[k] - est.poses()[j].translation[k]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                let after: f64 = (0..3)
                    .map(|k| (moved[i].translation[k] - moved[j].translation[k]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                assert!((before - after).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn collinear_trajectories_cannot_be_aligned() {
        let gt = straight_line(10, 0.5);
        let est = straight_line(10, 0.4);
        let err = umeyama_align(&est, &gt, false).unwrap_err();
        assert!(matches!(err, EvalError::Degenerate { .. }));
        assert!(umeyama_align(&est[..2], &gt[..2], false).is_err(), "two poses are never enough");
    }

    #[test]
    fn per_meter_segments_need_enough_path() {
        let gt = wiggly(5, 6);
        let est = wiggly(6, 6);
        let err = rte_rre(&gt, &est, SegmentDef::PerMeter(100.0)).unwrap_err();
        assert!(matches!(err, EvalError::NoSegments { .. }));
        assert!(err.to_string().contains("per_meter(100)"));
    }

    #[test]
    fn mismatched_lengths_are_rejected() {
        let gt = straight_line(5, 1.0);
        let est = straight_line(4, 1.0);
        assert!(matches!(
            ate_rmse(&gt, &est),
            Err(EvalError::LengthMismatch { gt: 5, est: 4 })
        ));
    }

    #[test]
    fn report_serializes_with_metric_names() {
        let report = MetricReport {
            ate_m: 0.5,
            are_deg: 2.0,
            rte_m: 0.1,
            rre_deg: 1.0,
            aligned: AlignMode::Se3,
            segment_definition: SegmentDef::PerMeter(1.0),
        };
        let json = serde_json::to_string(&report).unwrap();
        for key in ["ate_m", "are_deg", "rte_m", "rre_deg", "se3", "per_meter"] {
            assert!(json.contains(key), "missing {key} in {json}");
        }
        let back: MetricReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
        let csv = report.to_csv();
        assert!(csv.starts_with("ate_m,are_deg,rte_m,rre_deg\n"));
        assert!(csv.contains("0.5,2,0.1,1"));
    }

    /// Independent re-computation of every metric with direct formulas.
    #[test]
    fn metrics_match_a_naive_reimplementation() {
        let gt = wiggly(7, 51);
        let mut rng = ChaCha8Rng::seed_from_u64(500);
        let est_poses: Vec<Pose> = gt
            .poses()
            .iter()
            .map(|p| {
                Pose::new(
                    random_rotation(rng.random(), 0.4).compose(&p.rotation),
                    [
                        p.translation[0] + rng.random_range(-0.5..0.5),
                        p.translation[1] + rng.random_range(-0.5..0.5),
                        p.translation[2] + rng.random_range(-0.5..0.5),
                    ],
                )
            })
            .collect();
        let est = Trajectory::new(est_poses.clone(), gt.timestamps().to_vec()).unwrap();

        // ATE, elementwise.
        let mut sum = 0.0;
        for i in 0..51 {
            let g = gt.poses()[i].translation;
            let e = est_poses[i].translation;
            sum += (g[0] - e[0]).powi(2) + (g[1] - e[1]).powi(2) + (g[2] - e[2]).powi(2);
        }
        let naive_ate = (sum / 51.0).sqrt();
        assert!((ate_rmse(gt.poses(), &est_poses).unwrap() - naive_ate).abs() < 1e-9);

        // ARE from the trace formula.
        let mut sum = 0.0;
        for i in 0..51 {
            let a = gt.poses()[i].rotation.matrix();
            let b = est_poses[i].rotation.matrix();
            let mut tr = 0.0;
            for r in 0..3 {
                for c in 0..3 {
                    tr += a[r][c] * b[r][c]; // tr(A^T B)
                }
            }
            let ang = ((tr - 1.0) / 2.0).clamp(-1.0, 1.0).acos().to_degrees();
            sum += ang * ang;
        }
        let naive_are = (sum / 51.0).sqrt();
        assert!((are_rmse_deg(gt.poses(), &est_poses).unwrap() - naive_are).abs() < 1e-9);

        // Frame-pair relative errors from explicit matrix algebra.
        let mut t2 = 0.0;
        let mut r2 = 0.0;
        for i in 0..50 {
            let rel = |ps: &[Pose]| {
                let a = &ps[i];
                let b = &ps[i + 1];
                let rot = a.rotation.inverse().compose(&b.rotation);
                let d = [
                    b.translation[0] - a.translation[0],
                    b.translation[1] - a.translation[1],
                    b.translation[2] - a.translation[2],
                ];
                (rot, a.rotation.inverse().apply(d))
            };
            let (rg, tg) = rel(gt.poses());
            let (re, te) = rel(&est_poses);
            let rot_residual = rg.inverse().compose(&re);
            // residual translation: Rg^-1 (te - tg)
            let dt = [te[0] - tg[0], te[1] - tg[1], te[2] - tg[2]];
            let tres = rg.inverse().apply(dt);
            t2 += tres[0] * tres[0] + tres[1] * tres[1] + tres[2] * tres[2];
            r2 += rot_residual.angle().to_degrees().powi(2);
        }
        let naive_rte = (t2 / 50.0).sqrt();
        let naive_rre = (r2 / 50.0).sqrt();
        let (rte, rre) = rte_rre(&gt, &est, SegmentDef::PerFramePair).unwrap();
        assert!((rte - naive_rte).abs() < 1e-9, "{rte} vs {naive_rte}");
        assert!((rre - naive_rre).abs() < 1e-9, "{rre} vs {naive_rre}");
    }
}
