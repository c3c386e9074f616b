//! Singular values of the small dense matrices that show up per point.

use nalgebra::{DMatrix, DVector, SVD};

/// Smallest singular value with its left/right singular vectors. Ties go to
/// the first pair in nalgebra's ordering. `None` when the SVD does not
/// converge or the input is not finite.
pub fn min_singular_triplet(m: &DMatrix<f64>) -> Option<(f64, DVector<f64>, DVector<f64>)> {
    if m.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let svd = SVD::try_new(m.clone(), true, true, f64::EPSILON, 1000)?;
    let k = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(&b.0)))
        .map(|(k, _)| k)?;
    let u = svd.u.as_ref()?.column(k).into_owned();
    let v = svd.v_t.as_ref()?.row(k).transpose();
    Some((svd.singular_values[k], u, v))
}

pub fn min_singular_value(m: &DMatrix<f64>) -> f64 {
    m.singular_values().iter().copied().fold(f64::INFINITY, f64::min)
}

/// Spectral norm (largest singular value).
pub fn operator_norm(m: &DMatrix<f64>) -> f64 {
    m.singular_values().iter().copied().fold(0.0, f64::max)
}

/// `+1`, `-1`, or `0` for an exactly vanishing determinant.
pub fn det_sign(det: f64) -> i8 {
    if det > 0.0 {
        1
    } else if det < 0.0 {
        -1
    } else {
        0
    }
}
