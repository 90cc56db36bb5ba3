//! The five VAE loss terms and their gradients.
//!
//! Matrix-valued inputs are flattened per joint, row-major, 9 values each.

use crate::error::{check_dim, Error, Result};
use crate::posedata::rotation::{
    angle_sq_grad, cofactor3, det3, log_map, mat_from_slice, matmul, project_to_rotation, transpose, Mat3,
};

fn check_matrices(flat: &[f64]) -> Result<()> {
    if flat.is_empty() || !flat.len().is_multiple_of(9) {
        return Err(Error::invalid(format!("{} values do not form 3x3 matrices", flat.len())));
    }
    Ok(())
}

/// `KL(N(mu, diag(exp(logvar))) || N(0, I))`.
pub fn kl_loss(mu: &[f64], logvar: &[f64]) -> Result<f64> {
    check_dim(mu.len(), logvar.len())?;
    Ok(0.5 * mu.iter().zip(logvar).map(|(m, lv)| m * m + lv.exp() - 1.0 - lv).sum::<f64>())
}

/// Gradients of [`kl_loss`] with respect to `mu` and `logvar`.
pub fn kl_grad(mu: &[f64], logvar: &[f64]) -> (Vec<f64>, Vec<f64>) {
    (mu.to_vec(), logvar.iter().map(|lv| 0.5 * (lv.exp() - 1.0)).collect())
}

/// Sum of squared differences.
pub fn rec_loss(r: &[f64], r_hat: &[f64]) -> Result<f64> {
    check_dim(r.len(), r_hat.len())?;
    Ok(r.iter().zip(r_hat).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// Gradient of [`rec_loss`] with respect to `r_hat`.
pub fn rec_grad(r: &[f64], r_hat: &[f64]) -> Vec<f64> {
    r.iter().zip(r_hat).map(|(a, b)| 2.0 * (b - a)).collect()
}

fn gram_error(m: &Mat3) -> Mat3 {
    let mut e = matmul(m, &transpose(m));
    for (i, row) in e.iter_mut().enumerate() {
        row[i] -= 1.0;
    }
    e
}

/// `sum_j |R_j R_j^T - I|_F^2`.
pub fn orth_loss(r_hat: &[f64]) -> Result<f64> {
    check_matrices(r_hat)?;
    Ok(r_hat
        .chunks(9)
        .map(|c| gram_error(&mat_from_slice(c)).iter().flatten().map(|v| v * v).sum::<f64>())
        .sum())
}

/// Gradient of [`orth_loss`]: `4 (R R^T - I) R` per joint.
pub fn orth_grad(r_hat: &[f64]) -> Vec<f64> {
    r_hat
        .chunks(9)
        .flat_map(|c| {
            let m = mat_from_slice(c);
            let g = matmul(&gram_error(&m), &m);
            g.into_iter().flatten().map(|v| 4.0 * v)
        })
        .collect()
}

/// `sum_j |det(R_j) - 1|`.
pub fn det1_loss(r_hat: &[f64]) -> Result<f64> {
    check_matrices(r_hat)?;
    Ok(r_hat.chunks(9).map(|c| (det3(&mat_from_slice(c)) - 1.0).abs()).sum())
}

/// Subgradient of [`det1_loss`]: `sign(det - 1) * cofactor(R)` per joint.
pub fn det1_grad(r_hat: &[f64]) -> Vec<f64> {
    r_hat
        .chunks(9)
        .flat_map(|c| {
            let m = mat_from_slice(c);
            let d = det3(&m) - 1.0;
            let s = if d > 0.0 {
                1.0
            } else if d < 0.0 {
                -1.0
            } else {
                0.0
            };
            cofactor3(&m).into_iter().flatten().map(move |v| s * v)
        })
        .collect()
}

/// Squared L2 norm of a pose vector.
pub fn reg_loss(pose: &[f64]) -> f64 {
    pose.iter().map(|v| v * v).sum()
}

/// Projects each raw decoder matrix to the nearest rotation, recovers its
/// axis-angle vector and returns `(pose, |pose|^2, d|pose|^2 / d r_hat)`.
pub fn reg_terms(r_hat: &[f64]) -> Result<(Vec<f64>, f64, Vec<f64>)> {
    check_matrices(r_hat)?;
    let mut pose = Vec::with_capacity(r_hat.len() / 3);
    let mut grad = Vec::with_capacity(r_hat.len());
    for c in r_hat.chunks(9) {
        let proj = project_to_rotation(&mat_from_slice(c))?;
        let phi = log_map(&proj.rotation);
        let g = proj.pullback(&angle_sq_grad(&proj.rotation, phi));
        pose.extend_from_slice(&phi);
        grad.extend(g.into_iter().flatten());
    }
    let loss = reg_loss(&pose);
    Ok((pose, loss, grad))
}
