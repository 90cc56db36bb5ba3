//! Axis-angle and rotation-matrix conversions, plus the 3x3 helpers the VAE
//! losses need (determinant, cofactors, projection onto SO(3)).

use super::PoseVector;
use crate::error::{Error, Result};
use crate::linalg::{jacobi_eigen, SymMatrix, DEFAULT_EIGEN_TOL};

pub type Mat3 = [[f64; 3]; 3];

pub const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
const ORTHO_TOL: f64 = 1e-6;

/// One rotation matrix per joint.
#[derive(Debug, Clone, PartialEq)]
pub struct RotationMatrixSet {
    pub matrices: Vec<Mat3>,
}

impl RotationMatrixSet {
    pub fn joints(&self) -> usize {
        self.matrices.len()
    }

    /// Row-major entries of each matrix, joint after joint (`9 * J` values).
    pub fn flatten(&self) -> Vec<f64> {
        self.matrices.iter().flat_map(|m| m.iter().flatten().copied()).collect()
    }

    pub fn from_flat(values: &[f64]) -> Result<Self> {
        if values.is_empty() || !values.len().is_multiple_of(9) {
            return Err(Error::invalid(format!(
                "flattened matrix set length {} is not a positive multiple of 9",
                values.len()
            )));
        }
        Ok(RotationMatrixSet { matrices: values.chunks(9).map(mat_from_slice).collect() })
    }
}

pub fn mat_from_slice(v: &[f64]) -> Mat3 {
    [[v[0], v[1], v[2]], [v[3], v[4], v[5]], [v[6], v[7], v[8]]]
}

pub fn skew(w: [f64; 3]) -> Mat3 {
    [[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]]
}

pub fn matmul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

pub fn transpose(a: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[j][i];
        }
    }
    out
}

pub fn add(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = *a;
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] += b[i][j];
        }
    }
    out
}

pub fn scale(a: &Mat3, s: f64) -> Mat3 {
    a.map(|row| row.map(|v| v * s))
}

pub fn frobenius_sq(a: &Mat3) -> f64 {
    a.iter().flatten().map(|v| v * v).sum()
}

/// Determinant by cofactor expansion along the first row.
pub fn det3(m: &Mat3) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Cofactor matrix; equals the gradient of `det3` with respect to `m`.
pub fn cofactor3(m: &Mat3) -> Mat3 {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let (i1, i2) = ((i + 1) % 3, (i + 2) % 3);
            let (j1, j2) = ((j + 1) % 3, (j + 2) % 3);
            c[i][j] = m[i1][j1] * m[i2][j2] - m[i1][j2] * m[i2][j1];
        }
    }
    c
}

fn norm3(w: [f64; 3]) -> f64 {
    (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt()
}

/// Rodrigues formula `R = I + sin(t) K + (1 - cos(t)) K^2` with `K` the
/// cross-product matrix of the unit axis.
pub fn rodrigues(w: [f64; 3]) -> Mat3 {
    let theta = norm3(w);
    if theta < 1e-12 {
        return IDENTITY;
    }
    let k = skew([w[0] / theta, w[1] / theta, w[2] / theta]);
    let k2 = matmul(&k, &k);
    add(&add(&IDENTITY, &scale(&k, theta.sin())), &scale(&k2, 1.0 - theta.cos()))
}

/// Partial derivatives `dR/dw_i` of [`rodrigues`].
///
/// Uses `R = I + a(t) [w]x + b(t) [w]x^2` with `a = sin t / t` and
/// `b = (1 - cos t) / t^2`; near zero the coefficients come from their
/// Taylor series.
pub fn rodrigues_jacobian(w: [f64; 3]) -> [Mat3; 3] {
    let t2 = w[0] * w[0] + w[1] * w[1] + w[2] * w[2];
    let t = t2.sqrt();
    let (a, b, da, db) = if t < 1e-2 {
        let t4 = t2 * t2;
        (
            1.0 - t2 / 6.0 + t4 / 120.0,
            0.5 - t2 / 24.0 + t4 / 720.0,
            -1.0 / 3.0 + t2 / 30.0 - t4 / 840.0,
            -1.0 / 12.0 + t2 / 180.0 - t4 / 6720.0,
        )
    } else {
        let (s, c) = t.sin_cos();
        (s / t, (1.0 - c) / t2, (t * c - s) / (t2 * t), (t * s - 2.0 * (1.0 - c)) / (t2 * t2))
    };
    let k = skew(w);
    let k2 = matmul(&k, &k);
    let mut out = [[[0.0; 3]; 3]; 3];
    for (i, slot) in out.iter_mut().enumerate() {
        let mut e = [0.0; 3];
        e[i] = 1.0;
        let ei = skew(e);
        let sym = add(&matmul(&ei, &k), &matmul(&k, &ei));
        *slot = add(
            &add(&scale(&k, da * w[i]), &scale(&ei, a)),
            &add(&scale(&k2, db * w[i]), &scale(&sym, b)),
        );
    }
    out
}

/// Inverse of [`rodrigues`] for a proper rotation; the angle lies in `[0, pi]`.
///
/// The angle is `atan2(|skew part| / 2, (trace - 1) / 2)`, which agrees with
/// `arccos((trace - 1) / 2)` but stays accurate near 0 and pi. Past pi/2 the
/// axis is read from the symmetric part instead of the vanishing skew part.
pub fn log_map(r: &Mat3) -> [f64; 3] {
    let v = [r[2][1] - r[1][2], r[0][2] - r[2][0], r[1][0] - r[0][1]];
    let c = ((r[0][0] + r[1][1] + r[2][2] - 1.0) * 0.5).clamp(-1.0, 1.0);
    let s = 0.5 * norm3(v);
    let theta = s.atan2(c);
    if theta < 1e-8 {
        return [0.0; 3];
    }
    if c >= 0.0 {
        let f = theta / (2.0 * s);
        return [v[0] * f, v[1] * f, v[2] * f];
    }
    // (R + R^T)/2 = c I + (1 - c) n n^T
    let mut b = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let sym = 0.5 * (r[i][j] + r[j][i]) - if i == j { c } else { 0.0 };
            b[i][j] = sym / (1.0 - c);
        }
    }
    let k = (0..3).max_by(|&i, &j| b[i][i].total_cmp(&b[j][j])).unwrap();
    let inv = 1.0 / b[k][k].max(0.0).sqrt();
    let mut n = [b[0][k] * inv, b[1][k] * inv, b[2][k] * inv];
    let nn = norm3(n);
    n = [n[0] / nn, n[1] / nn, n[2] / nn];
    if n[0] * v[0] + n[1] * v[1] + n[2] * v[2] < 0.0 {
        n = [-n[0], -n[1], -n[2]];
    }
    [n[0] * theta, n[1] * theta, n[2] * theta]
}

/// `|R R^T - I|_F` and `det(R)`.
pub fn orthonormality_error(r: &Mat3) -> (f64, f64) {
    let mut e = matmul(r, &transpose(r));
    for (i, row) in e.iter_mut().enumerate() {
        row[i] -= 1.0;
    }
    (frobenius_sq(&e).sqrt(), det3(r))
}

pub fn axis_angle_to_matrices(p: &PoseVector) -> RotationMatrixSet {
    RotationMatrixSet { matrices: (0..p.joints()).map(|j| rodrigues(p.joint(j))).collect() }
}

pub fn matrices_to_axis_angle(r: &RotationMatrixSet) -> Result<PoseVector> {
    let mut out = Vec::with_capacity(r.joints() * 3);
    for (j, m) in r.matrices.iter().enumerate() {
        let (err, det) = orthonormality_error(m);
        if !(err < ORTHO_TOL) || !((det - 1.0).abs() < ORTHO_TOL) {
            return Err(Error::invalid(format!(
                "joint {j}: matrix is not a rotation (orthonormality error {err:e}, det {det})"
            )));
        }
        out.extend_from_slice(&log_map(m));
    }
    PoseVector::new(out)
}

/// Nearest proper rotation to an arbitrary 3x3 matrix, computed through the
/// eigendecomposition of `M^T M` (polar route) and sign-corrected so that
/// `det = +1`. Keeps the SVD pieces for backpropagation.
#[derive(Debug, Clone)]
pub struct RotationProjection {
    pub rotation: Mat3,
    u: Mat3,
    w: Mat3,
    sigma: [f64; 3],
    signs: [f64; 3],
}

fn column(m: &Mat3, k: usize) -> [f64; 3] {
    [m[0][k], m[1][k], m[2][k]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub fn project_to_rotation(m: &Mat3) -> Result<RotationProjection> {
    let mtm = matmul(&transpose(m), m);
    let sym = SymMatrix::new(3, mtm.iter().flatten().copied().collect())?;
    let eig = jacobi_eigen(&sym, DEFAULT_EIGEN_TOL)?;
    let w = mat_from_slice(&eig.basis);
    let ev = &eig.eigenvalues;
    let sigma = [ev[0].max(0.0).sqrt(), ev[1].max(0.0).sqrt(), ev[2].max(0.0).sqrt()];
    if !(sigma[0] > 0.0) {
        return Err(Error::Numerical("cannot project a zero matrix onto SO(3)".into()));
    }
    let mut u = [[0.0; 3]; 3];
    let rank2 = sigma[2] <= 1e-12 * sigma[0];
    for k in 0..3 {
        let col = if k == 2 && rank2 {
            cross(column(&u, 0), column(&u, 1))
        } else {
            let mw = column(&matmul(m, &w), k);
            [mw[0] / sigma[k], mw[1] / sigma[k], mw[2] / sigma[k]]
        };
        for i in 0..3 {
            u[i][k] = col[i];
        }
    }
    let s = (det3(&u) * det3(&w)).signum();
    let signs = [1.0, 1.0, if s < 0.0 { -1.0 } else { 1.0 }];
    let ue = [0, 1, 2].map(|i| [0, 1, 2].map(|k| u[i][k] * signs[k]));
    let rotation = matmul(&ue, &transpose(&w));
    Ok(RotationProjection { rotation, u, w, sigma, signs })
}

impl RotationProjection {
    /// Maps a gradient with respect to the projected rotation back to the
    /// input matrix. Only the tangent (skew) component of `grad_r` matters.
    pub fn pullback(&self, grad_r: &Mat3) -> Mat3 {
        let b = matmul(&matmul(&transpose(&self.u), grad_r), &self.w);
        let (s, e) = (self.sigma, self.signs);
        // dK_ij = a_ij dP_ij + c_ij dP_ji with P = U^T dM W
        let coef = |i: usize, j: usize| -> (f64, f64) {
            if e[i] == e[j] {
                let d = e[i] / (s[i] + s[j]);
                (d, -d)
            } else {
                let d = e[i] / (s[i] - s[j]);
                (d, d)
            }
        };
        let mut c = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                if i == j {
                    continue;
                }
                let (a_ij, _) = coef(i, j);
                let (_, c_ji) = coef(j, i);
                c[i][j] = b[i][j] * a_ij + b[j][i] * c_ji;
            }
        }
        matmul(&matmul(&self.u, &c), &transpose(&self.w))
    }
}

/// Gradient of `|log_map(R)|^2` with respect to a rotation `R`, expressed as
/// `R [phi]x` (its tangent-space representative).
pub fn angle_sq_grad(r: &Mat3, phi: [f64; 3]) -> Mat3 {
    matmul(r, &skew(phi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::PI;
    use rand_chacha::ChaCha8Rng;

    fn max_diff(a: &Mat3, b: &Mat3) -> f64 {
        a.iter().flatten().zip(b.iter().flatten()).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
    }

    fn random_axis_angle(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> [f64; 3] {
        loop {
            let v = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let n = norm3(v);
            if n > 0.1 && n <= 1.0 {
                let angle = rng.random_range(lo..hi);
                return [v[0] / n * angle, v[1] / n * angle, v[2] / n * angle];
            }
        }
    }

    #[test]
    fn zero_is_identity() {
        assert_eq!(rodrigues([0.0; 3]), IDENTITY);
        assert_eq!(log_map(&IDENTITY), [0.0; 3]);
    }

    #[test]
    fn quarter_turn_about_z() {
        let r = rodrigues([0.0, 0.0, PI / 2.0]);
        let expected = [[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(max_diff(&r, &expected) < 1e-15);
        let w = log_map(&expected);
        assert!(w[0].abs() < 1e-12 && w[1].abs() < 1e-12 && (w[2] - PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn half_turn_round_trip() {
        for axis in [[1.0, 0.0, 0.0], [0.0, 0.6, 0.8], [-0.48, 0.6, 0.64]] {
            let w = [axis[0] * PI, axis[1] * PI, axis[2] * PI];
            let back = log_map(&rodrigues(w));
            // at exactly pi the sign of the axis is ambiguous
            let same = (0..3).all(|i| (back[i] - w[i]).abs() < 1e-9);
            let flipped = (0..3).all(|i| (back[i] + w[i]).abs() < 1e-9);
            assert!(same || flipped, "{back:?} vs {w:?}");
        }
    }

    #[test]
    fn set_conversions() {
        let p = PoseVector::new(vec![0.0, 0.0, 0.0, 0.0, 0.0, PI / 2.0]).unwrap();
        let set = axis_angle_to_matrices(&p);
        assert_eq!(set.joints(), 2);
        assert_eq!(set.flatten().len(), 18);
        let back = matrices_to_axis_angle(&set).unwrap();
        assert!(back.as_slice().iter().zip(p.as_slice()).all(|(a, b)| (a - b).abs() < 1e-12));
        let bad = RotationMatrixSet { matrices: vec![scale(&IDENTITY, 2.0)] };
        assert!(matrices_to_axis_angle(&bad).is_err());
    }

    #[test]
    fn det_and_cofactor() {
        assert_eq!(det3(&scale(&IDENTITY, 2.0)), 8.0);
        let m = [[1.0, 2.0, 3.0], [0.5, -1.0, 4.0], [2.0, 0.0, 1.5]];
        let c = cofactor3(&m);
        // row expansion with cofactors reproduces det
        let d: f64 = (0..3).map(|j| m[1][j] * c[1][j]).sum();
        assert!((d - det3(&m)).abs() < 1e-12);
    }

    #[test]
    fn rodrigues_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut points: Vec<[f64; 3]> = (0..20).map(|_| random_axis_angle(&mut rng, 0.0, 3.0)).collect();
        points.push([1e-4, -2e-4, 5e-5]);
        points.push([0.005, 0.001, -0.002]);
        for w in points {
            let jac = rodrigues_jacobian(w);
            for i in 0..3 {
                let h = 1e-6;
                let mut wp = w;
                let mut wm = w;
                wp[i] += h;
                wm[i] -= h;
                let (rp, rm) = (rodrigues(wp), rodrigues(wm));
                for a in 0..3 {
                    for b in 0..3 {
                        let fd = (rp[a][b] - rm[a][b]) / (2.0 * h);
                        assert!((fd - jac[i][a][b]).abs() < 1e-7, "w={w:?} i={i}");
                    }
                }
            }
        }
    }

    #[test]
    fn projection_of_rotation_is_itself() {
        let r = rodrigues([0.3, -0.2, 1.1]);
        let p = project_to_rotation(&r).unwrap();
        assert!(max_diff(&p.rotation, &r) < 1e-12);
        let p = project_to_rotation(&scale(&r, 3.0)).unwrap();
        assert!(max_diff(&p.rotation, &r) < 1e-12);
    }

    #[test]
    fn projection_corrects_reflections() {
        let m = [[1.0, 0.1, 0.0], [0.0, 1.2, 0.3], [0.0, 0.0, -0.5]];
        let p = project_to_rotation(&m).unwrap();
        let (err, det) = orthonormality_error(&p.rotation);
        assert!(err < 1e-12 && (det - 1.0).abs() < 1e-12);
    }

    #[test]
    fn projection_pullback_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for trial in 0..30 {
            let m: Mat3 = [0, 1, 2].map(|_| [0, 1, 2].map(|_| rng.random_range(-1.0..1.0)));
            if trial % 2 == 0 && det3(&m) > 0.0 {
                continue;
            }
            // loss = |log(proj(M))|^2
            let loss = |mm: &Mat3| {
                let w = log_map(&project_to_rotation(mm).unwrap().rotation);
                w[0] * w[0] + w[1] * w[1] + w[2] * w[2]
            };
            let proj = project_to_rotation(&m).unwrap();
            let phi = log_map(&proj.rotation);
            if norm3(phi) > 3.0 {
                continue;
            }
            let g = proj.pullback(&angle_sq_grad(&proj.rotation, phi));
            for a in 0..3 {
                for b in 0..3 {
                    let h = 1e-6;
                    let mut mp = m;
                    let mut mm = m;
                    mp[a][b] += h;
                    mm[a][b] -= h;
                    let fd = (loss(&mp) - loss(&mm)) / (2.0 * h);
                    assert!((fd - g[a][b]).abs() < 1e-5 * (1.0 + fd.abs()), "trial {trial}: fd {fd} vs {}", g[a][b]);
                }
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn rodrigues_is_orthonormal(x in -3.0f64..3.0, y in -3.0f64..3.0, z in -3.0f64..3.0) {
                let n = norm3([x, y, z]);
                let w = if n > PI { [x / n * PI, y / n * PI, z / n * PI] } else { [x, y, z] };
                let (err, det) = orthonormality_error(&rodrigues(w));
                prop_assert!(err < 1e-9);
                prop_assert!((det - 1.0).abs() <= 1e-9);
            }

            #[test]
            fn axis_angle_round_trip(seed in any::<u64>()) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let w = random_axis_angle(&mut rng, 1e-6, PI - 1e-6);
                let back = log_map(&rodrigues(w));
                for i in 0..3 {
                    prop_assert!((back[i] - w[i]).abs() < 1e-9);
                }
            }
        }
    }
}
