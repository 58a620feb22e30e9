//! 3x3 singular value decomposition built on a Jacobi eigendecomposition of
//! m'm. Dependency-free and accurate to ~1e-12 for the matrices this crate
//! produces, which is what the Procrustes projection needs. Always defined:
//! rank-deficient inputs get an orthonormal completion of U.

pub type Mat3 = [[f64; 3]; 3];

/// Maximum Jacobi sweeps; convergence is quadratic, so this is never reached
/// in practice.
const MAX_SWEEPS: usize = 100;
/// Relative off-diagonal mass at which the eigendecomposition is considered
/// converged. The check runs before each sweep, so the final sweep overshoots
/// well past this bound.
const OFF_DIAG_TOL: f64 = 1e-14;

fn transpose(m: &Mat3) -> Mat3 {
    let mut t = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            t[c][r] = m[r][c];
        }
    }
    t
}

fn matmul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            out[r][c] = a[r][0] * b[0][c] + a[r][1] * b[1][c] + a[r][2] * b[2][c];
        }
    }
    out
}

fn mat_vec(m: &Mat3, v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm(v: [f64; 3]) -> f64 {
    dot(v, v).sqrt()
}

fn scale(v: [f64; 3], s: f64) -> [f64; 3] {
    [v[0] * s, v[1] * s, v[2] * s]
}

fn column(m: &Mat3, c: usize) -> [f64; 3] {
    [m[0][c], m[1][c], m[2][c]]
}

/// One-sided Jacobi rotation on the symmetric matrix `b`, zeroing b[p][q],
/// with the accumulated eigenvector matrix `v` updated in step.
fn jacobi_rotate(b: &mut Mat3, v: &mut Mat3, p: usize, q: usize) {
    if b[p][q] == 0.0 {
        return;
    }
    let tau = (b[q][q] - b[p][p]) / (2.0 * b[p][q]);
    let t = if tau >= 0.0 {
        1.0 / (tau + (1.0 + tau * tau).sqrt())
    } else {
        -1.0 / (-tau + (1.0 + tau * tau).sqrt())
    };
    let c = 1.0 / (1.0 + t * t).sqrt();
    let s = t * c;

    for k in 0..3 {
        let bkp = b[k][p];
        let bkq = b[k][q];
        b[k][p] = c * bkp - s * bkq;
        b[k][q] = s * bkp + c * bkq;
    }
    for k in 0..3 {
        let bpk = b[p][k];
        let bqk = b[q][k];
        b[p][k] = c * bpk - s * bqk;
        b[q][k] = s * bpk + c * bqk;
    }
    for k in 0..3 {
        let vkp = v[k][p];
        let vkq = v[k][q];
        v[k][p] = c * vkp - s * vkq;
        v[k][q] = s * vkp + c * vkq;
    }
}

/// Eigendecomposition of a symmetric 3x3 matrix: returns (eigenvalues,
/// eigenvectors as columns), unsorted.
fn symmetric_eigen(mut b: Mat3) -> ([f64; 3], Mat3) {
    let mut v = [[0.0; 3], [0.0; 3], [0.0; 3]];
    for i in 0..3 {
        v[i][i] = 1.0;
    }
    let frob2: f64 = b.iter().flatten().map(|x| x * x).sum();
    // `off` below is a squared mass, so the relative tolerance is squared too.
    let tol = OFF_DIAG_TOL * OFF_DIAG_TOL * frob2.max(1.0);
    for _ in 0..MAX_SWEEPS {
        let off = b[0][1] * b[0][1] + b[0][2] * b[0][2] + b[1][2] * b[1][2];
        if off <= tol {
            break;
        }
        jacobi_rotate(&mut b, &mut v, 0, 1);
        jacobi_rotate(&mut b, &mut v, 0, 2);
        jacobi_rotate(&mut b, &mut v, 1, 2);
    }
    ([b[0][0], b[1][1], b[2][2]], v)
}

/// SVD of an arbitrary finite 3x3 matrix: m = U diag(sigma) V'. Singular
/// values are non-negative and sorted descending; U and V are orthogonal.
pub fn svd3(m: &Mat3) -> (Mat3, [f64; 3], Mat3) {
    let b = matmul(&transpose(m), m);
    let (_eigs, vecs) = symmetric_eigen(b);

    // sigma_i = |m v_i| rather than sqrt(eigenvalue): forming m'm loses half
    // the precision in its eigenvalues, and sqrt of that noise would inflate
    // tiny singular values to ~1e-8. The applied norm resolves them down to
    // the roundoff floor, which the rank test in the Procrustes caller needs.
    let mut pairs: Vec<([f64; 3], f64)> = (0..3)
        .map(|i| {
            let v = column(&vecs, i);
            (v, norm(mat_vec(m, v)))
        })
        .collect();
    pairs.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    let mut sigma = [0.0; 3];
    let mut v_cols = [[0.0; 3]; 3];
    for (slot, (v, s)) in pairs.into_iter().enumerate() {
        sigma[slot] = s;
        v_cols[slot] = v;
    }

    // Rebuild U columns as m v_i / sigma_i where sigma_i carries signal,
    // re-orthonormalizing as we go; complete rank-deficient directions with
    // an orthonormal basis.
    // Below this the direction of m v_i / sigma_i is dominated by roundoff
    // (floor ~1e-16 sigma_0), so its column is completed instead of computed.
    let usable = |s: f64| s > 1e-7 * sigma[0].max(1e-300);
    let mut u_cols = [[0.0; 3]; 3];
    let mut have = 0;
    for i in 0..3 {
        if !usable(sigma[i]) {
            break;
        }
        let mut u = scale(mat_vec(m, v_cols[i]), 1.0 / sigma[i]);
        for built in u_cols.iter().take(have) {
            let proj = dot(u, *built);
            for k in 0..3 {
                u[k] -= proj * built[k];
            }
        }
        let n = norm(u);
        if n < 1e-12 {
            break;
        }
        u_cols[i] = scale(u, 1.0 / n);
        have = i + 1;
    }
    match have {
        0 => {
            u_cols = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        }
        1 => {
            let u0 = u_cols[0];
            // Cross with the axis least aligned with u0 for a stable normal.
            let axis = if u0[0].abs() <= u0[1].abs() && u0[0].abs() <= u0[2].abs() {
                [1.0, 0.0, 0.0]
            } else if u0[1].abs() <= u0[2].abs() {
                [0.0, 1.0, 0.0]
            } else {
                [0.0, 0.0, 1.0]
            };
            let u1 = cross(u0, axis);
            u_cols[1] = scale(u1, 1.0 / norm(u1));
            u_cols[2] = cross(u0, u_cols[1]);
        }
        2 => {
            u_cols[2] = cross(u_cols[0], u_cols[1]);
        }
        _ => {}
    }

    let mut u = [[0.0; 3]; 3];
    let mut v = [[0.0; 3]; 3];
    for c in 0..3 {
        for r in 0..3 {
            u[r][c] = u_cols[c][r];
            v[r][c] = v_cols[c][r];
        }
    }
    (u, sigma, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn reconstruct(u: &Mat3, s: &[f64; 3], v: &Mat3) -> Mat3 {
        let mut us = *u;
        for r in 0..3 {
            for c in 0..3 {
                us[r][c] *= s[c];
            }
        }
        matmul(&us, &transpose(v))
    }

    fn max_abs_diff(a: &Mat3, b: &Mat3) -> f64 {
        let mut m = 0.0f64;
        for r in 0..3 {
            for c in 0..3 {
                m = m.max((a[r][c] - b[r][c]).abs());
            }
        }
        m
    }

    fn orthogonality_error(m: &Mat3) -> f64 {
        let mtm = matmul(&transpose(m), m);
        let mut e = 0.0f64;
        for r in 0..3 {
            for c in 0..3 {
                let id = if r == c { 1.0 } else { 0.0 };
                e = e.max((mtm[r][c] - id).abs());
            }
        }
        e
    }

    const I3: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

    #[test]
    fn identity_has_unit_singular_values() {
        let (_, s, _) = svd3(&I3);
        assert_eq!(s, [1.0, 1.0, 1.0]);
    }

    #[test]
    fn diagonal_matrix_recovers_entries_sorted() {
        let m = [[3.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 1.0]];
        let (u, s, v) = svd3(&m);
        assert!((s[0] - 3.0).abs() < 1e-12 && (s[1] - 2.0).abs() < 1e-12 && (s[2] - 1.0).abs() < 1e-12);
        // U and V equal identity up to per-column sign.
        for c in 0..3 {
            for r in 0..3 {
                let expect = if r == c { 1.0 } else { 0.0 };
                assert!((u[r][c].abs() - expect).abs() < 1e-12, "u[{r}][{c}] = {}", u[r][c]);
                assert!((v[r][c].abs() - expect).abs() < 1e-12, "v[{r}][{c}] = {}", v[r][c]);
            }
        }
    }

    #[test]
    fn random_matrices_reconstruct_within_1e9() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..1000 {
            let mut m = [[0.0; 3]; 3];
            for row in m.iter_mut() {
                for x in row.iter_mut() {
                    *x = rng.random_range(-2.0..2.0);
                }
            }
            let (u, s, v) = svd3(&m);
            assert!(s[0] >= s[1] && s[1] >= s[2] && s[2] >= 0.0, "unsorted sigma {s:?}");
            let err = max_abs_diff(&reconstruct(&u, &s, &v), &m);
            assert!(err < 1e-9, "trial {trial}: reconstruction error {err}");
            assert!(orthogonality_error(&u) < 1e-9, "trial {trial}: U not orthogonal");
            assert!(orthogonality_error(&v) < 1e-9, "trial {trial}: V not orthogonal");
        }
    }

    #[test]
    fn rank_deficient_inputs_still_decompose() {
        // Rank 1: outer product.
        let a = [1.0, -2.0, 0.5];
        let b = [0.3, 0.4, -1.2];
        let mut m = [[0.0; 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                m[r][c] = a[r] * b[c];
            }
        }
        let (u, s, v) = svd3(&m);
        assert!(s[1] < 1e-12 && s[2] < 1e-12, "rank-1 input should have one singular value");
        assert!(max_abs_diff(&reconstruct(&u, &s, &v), &m) < 1e-9);
        assert!(orthogonality_error(&u) < 1e-9);

        let zero = [[0.0; 3]; 3];
        let (u, s, _) = svd3(&zero);
        assert_eq!(s, [0.0, 0.0, 0.0]);
        assert!(orthogonality_error(&u) < 1e-12);
    }
}
