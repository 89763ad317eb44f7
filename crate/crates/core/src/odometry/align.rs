//! Rigid alignment of paired points: closed-form point-to-point (Kabsch) and a
//! Gauss-Newton step for the point-to-line metric.

use nalgebra::{Matrix3, Matrix6, Rotation3, Vector3, Vector6};

use super::OdometryError;
use crate::geometry::Pose;

/// Relative size of the second scatter eigenvalue below which the pairs are
/// considered collinear.
const COLLINEAR_TOL: f64 = 1e-12;

/// Rigid transform `T` minimizing `Σ ‖T(source_j) − target_j‖²`.
///
/// Planar input is fine; the rotation is always proper (the smallest singular
/// direction is flipped when the SVD yields a reflection).
pub fn best_fit_transform(source: &[Vector3<f64>], target: &[Vector3<f64>]) -> Result<Pose, OdometryError> {
    if source.len() != target.len() {
        return Err(OdometryError::LengthMismatch {
            what: "correspondence sets",
            left: source.len(),
            right: target.len(),
        });
    }
    if source.len() < 3 {
        return Err(OdometryError::DegenerateGeometry(format!(
            "{} pairs, need at least 3",
            source.len()
        )));
    }
    let n = source.len() as f64;
    let src_mean = source.iter().sum::<Vector3<f64>>() / n;
    let tgt_mean = target.iter().sum::<Vector3<f64>>() / n;

    let mut cross = Matrix3::zeros();
    let mut scatter = Matrix3::zeros();
    for (s, t) in source.iter().zip(target) {
        let sc = s - src_mean;
        let tc = t - tgt_mean;
        cross += sc * tc.transpose();
        scatter += sc * sc.transpose();
    }

    let mut eig = scatter.symmetric_eigenvalues();
    eig.as_mut_slice().sort_by(|a, b| b.total_cmp(a));
    if !(eig[0] > 0.0) || eig[1] <= COLLINEAR_TOL * eig[0] {
        return Err(OdometryError::DegenerateGeometry(
            "pairs are collinear or coincident".into(),
        ));
    }

    let svd = cross.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(OdometryError::DegenerateGeometry("SVD did not converge".into())),
    };
    let v = v_t.transpose();
    let mut fix = Matrix3::identity();
    if (v * u.transpose()).determinant() < 0.0 {
        fix[(svd.singular_values.imin(), svd.singular_values.imin())] = -1.0;
    }
    let rotation = v * fix * u.transpose();
    let translation = tgt_mean - rotation * src_mean;
    Pose::from_approx(rotation, translation).map_err(|e| OdometryError::DegenerateGeometry(e.to_string()))
}

/// Projector onto the directions in which a target point's surface is
/// constrained, estimated from the point and its neighbors.
///
/// Line-like neighborhoods (scan rows, walls, pole outlines) keep the plane
/// orthogonal to the line; surface-like ones keep only the surface normal. Too
/// few neighbors falls back to the identity, i.e. plain point distance.
pub fn local_projector(neighborhood: &[Vector3<f64>]) -> Matrix3<f64> {
    if neighborhood.len() < 3 {
        return Matrix3::identity();
    }
    let n = neighborhood.len() as f64;
    let mean = neighborhood.iter().sum::<Vector3<f64>>() / n;
    let cov = neighborhood
        .iter()
        .map(|p| (p - mean) * (p - mean).transpose())
        .sum::<Matrix3<f64>>()
        / n;
    let eig = cov.symmetric_eigen();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let (l1, l2) = (eig.eigenvalues[order[0]], eig.eigenvalues[order[1]]);
    if !(l1 > 0.0) {
        return Matrix3::identity();
    }
    if l2 <= LINE_LIKE_RATIO * l1 {
        let d = eig.eigenvectors.column(order[0]).into_owned();
        Matrix3::identity() - d * d.transpose()
    } else {
        let normal = eig.eigenvectors.column(order[2]).into_owned();
        normal * normal.transpose()
    }
}

/// Neighborhoods whose second principal variance is below this fraction of the
/// first are treated as lines.
const LINE_LIKE_RATIO: f64 = 0.05;

/// Tukey biweight for each residual, with the scale estimated from the median
/// absolute residual but never below `scale_floor`.
pub fn tukey_weights(residuals: &[f64], scale_floor: f64) -> Vec<f64> {
    if residuals.is_empty() {
        return Vec::new();
    }
    let mut sorted: Vec<f64> = residuals.iter().map(|r| r.abs()).collect();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    let cutoff = TUKEY_C * (MAD_TO_SIGMA * median).max(scale_floor);
    residuals
        .iter()
        .map(|r| {
            let u = r.abs() / cutoff;
            if u < 1.0 {
                (1.0 - u * u).powi(2)
            } else {
                0.0
            }
        })
        .collect()
}

const TUKEY_C: f64 = 4.685;
const MAD_TO_SIGMA: f64 = 1.4826;

/// One Gauss-Newton update of `current` for `Σ w_j ‖M_j (T(source_j) − target_j)‖²`,
/// where `M_j` are symmetric projectors. Directions the pairs do not constrain
/// (e.g. out-of-plane motion for planar scans) are left unchanged.
pub fn point_to_line_step(
    source: &[Vector3<f64>],
    target: &[Vector3<f64>],
    projectors: &[Matrix3<f64>],
    weights: &[f64],
    current: &Pose,
) -> Result<Pose, OdometryError> {
    let n = source.len();
    if target.len() != n || projectors.len() != n || weights.len() != n {
        return Err(OdometryError::LengthMismatch {
            what: "correspondence sets",
            left: n,
            right: target.len().min(projectors.len()).min(weights.len()),
        });
    }
    let mut h = Matrix6::zeros();
    let mut g = Vector6::zeros();
    for (((s, t), m), &w) in source.iter().zip(target).zip(projectors).zip(weights) {
        if w == 0.0 {
            continue;
        }
        let x = current.transform_point(s);
        // d(x)/d(ω, v) for x ← exp([ω]×)·x + v.
        let mut jac = nalgebra::Matrix3x6::zeros();
        jac.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-x.cross_matrix()));
        jac.fixed_view_mut::<3, 3>(0, 3).copy_from(&Matrix3::identity());
        let mj = m * jac * w;
        h += jac.transpose() * mj;
        g += mj.transpose() * (x - t);
    }
    let scale = h.diagonal().max();
    if !(scale > 0.0) {
        return Err(OdometryError::DegenerateGeometry("no constrained directions".into()));
    }
    let step = h
        .svd(true, true)
        .solve(&(-g), scale * 1e-12)
        .map_err(|e| OdometryError::DegenerateGeometry(e.to_string()))?;
    let omega = Vector3::new(step[0], step[1], step[2]);
    let v = Vector3::new(step[3], step[4], step[5]);
    let delta =
        Pose::new(*Rotation3::new(omega).matrix(), v).map_err(|e| OdometryError::DegenerateGeometry(e.to_string()))?;
    Ok(delta.compose(current))
}
