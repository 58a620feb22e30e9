//! Pinhole Gaussian-splat renderer. Each world point projects to
//! u = fx x/z + cx, v = fy y/z + cy in the camera frame and is drawn as an
//! isotropic Gaussian whose pixel radius shrinks with depth. Intensities
//! accumulate additively and clamp to [0,1]; there is no occlusion.

use super::{Intrinsics, Raster, World};
use crate::geometry::Pose;

/// Points closer than this to the camera plane are culled; splat radius and
/// projection both blow up as z approaches 0.
pub const NEAR_PLANE_M: f64 = 0.05;

/// How many standard deviations of each splat get rasterized.
const SPLAT_SUPPORT_SIGMAS: f64 = 3.0;

/// Renders the world from a world-from-camera pose. Pixel (row, col) samples
/// the image plane at u = col, v = row.
pub fn render(
    world: &World,
    pose: &Pose,
    intrinsics: &Intrinsics,
    height: usize,
    width: usize,
    channels: usize,
) -> Raster {
    let mut out = Raster::filled(height, width, channels, world.background);
    let cam_from_world = pose.inverse();
    for point in &world.points {
        let p = cam_from_world.apply(point.position);
        let z = p[2];
        if z <= NEAR_PLANE_M {
            continue;
        }
        let u = intrinsics.fx * p[0] / z + intrinsics.cx;
        let v = intrinsics.fy * p[1] / z + intrinsics.cy;
        let sigma = point.radius / z;
        let support = SPLAT_SUPPORT_SIGMAS * sigma;
        if u + support < 0.0 || v + support < 0.0 {
            continue;
        }
        let col_lo = ((u - support).floor().max(0.0)) as usize;
        let col_hi = ((u + support).ceil() as usize).min(width.saturating_sub(1));
        let row_lo = ((v - support).floor().max(0.0)) as usize;
        let row_hi = ((v + support).ceil() as usize).min(height.saturating_sub(1));
        if col_lo > col_hi || row_lo > row_hi {
            continue;
        }
        let inv_two_sigma2 = 1.0 / (2.0 * sigma * sigma);
        for row in row_lo..=row_hi {
            let dv = row as f64 - v;
            for col in col_lo..=col_hi {
                let du = col as f64 - u;
                let w = point.intensity * (-(du * du + dv * dv) * inv_two_sigma2).exp();
                for ch in 0..channels {
                    let cur = out.get(row, col, ch);
                    out.set(row, col, ch, cur + w);
                }
            }
        }
    }
    for v in &mut out.data {
        *v = v.clamp(0.0, 1.0);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SplatPoint;
    use crate::geometry::Rotation;

    fn single_point_world(position: [f64; 3]) -> World {
        World {
            points: vec![SplatPoint { position, intensity: 1.0, radius: 2.0 }],
            background: 0.0,
            seed: 0,
        }
    }

    fn argmax_pixel(r: &Raster) -> (usize, usize) {
        let mut best = (0, 0);
        let mut best_v = f64::NEG_INFINITY;
        for row in 0..r.height {
            for col in 0..r.width {
                let v = r.get(row, col, 0);
                if v > best_v {
                    best_v = v;
                    best = (row, col);
                }
            }
        }
        best
    }

    #[test]
    fn culled_world_renders_pure_background() {
        let behind: Vec<SplatPoint> = (0..60)
            .map(|i| SplatPoint {
                position: [i as f64 * 0.1, 0.0, -3.0],
                intensity: 1.0,
                radius: 2.0,
            })
            .collect();
        let world = World { points: behind, background: 0.25, seed: 0 };
        let r = render(&world, &Pose::identity(), &Intrinsics::default_for(8, 8), 8, 8, 1);
        assert!(r.data.iter().all(|&v| v == 0.25));
    }

    #[test]
    fn axis_point_peaks_at_principal_point() {
        let world = single_point_world([0.0, 0.0, 2.0]);
        let intr = Intrinsics::default_for(16, 16);
        let r = render(&world, &Pose::identity(), &intr, 16, 16, 1);
        assert_eq!(argmax_pixel(&r), (intr.cy as usize, intr.cx as usize));
    }

    #[test]
    fn lateral_camera_shift_moves_peak_by_projection_formula() {
        let world = single_point_world([0.0, 0.0, 2.0]);
        let intr = Intrinsics::default_for(32, 32);
        let z = 2.0;
        // Pick delta so the predicted peak shift -fx*delta/z is exactly -3 px.
        let delta = 3.0 * z / intr.fx;
        let moved = Pose::new(Rotation::identity(), [delta, 0.0, 0.0]);
        let base = render(&world, &Pose::identity(), &intr, 32, 32, 1);
        let shifted = render(&world, &moved, &intr, 32, 32, 1);
        let (r0, c0) = argmax_pixel(&base);
        let (r1, c1) = argmax_pixel(&shifted);
        assert_eq!(r1, r0);
        assert_eq!(c1 as isize - c0 as isize, -3);
    }

    #[test]
    fn rendering_commutes_with_rigid_world_motion() {
        let world = World::generate(8, 80, 4.0).unwrap();
        let pose = Pose::new(
            Rotation::from_axis_angle([0.1, 1.0, -0.3], 0.4),
            [0.5, -0.2, 0.8],
        );
        let s = Pose::new(Rotation::from_axis_angle([1.0, 0.2, 0.0], 1.1), [-1.0, 0.4, 2.0]);
        let moved_world = World {
            points: world
                .points
                .iter()
                .map(|p| SplatPoint { position: s.apply(p.position), ..*p })
                .collect(),
            ..world.clone()
        };
        let intr = Intrinsics::default_for(24, 24);
        let a = render(&world, &pose, &intr, 24, 24, 1);
        let b = render(&moved_world, &s.compose(&pose), &intr, 24, 24, 1);
        for (x, y) in a.data.iter().zip(&b.data) {
            assert!((x - y).abs() < 1e-9, "rasters differ: {x} vs {y}");
        }
    }
}
