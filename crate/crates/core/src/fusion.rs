//! Weighted quaternion averaging: the chordal mean of a set of attitudes is the
//! dominant eigenvector of `M = Σ wⱼ qⱼ qⱼᵀ`.

use nalgebra::{Matrix4, Vector4};

use crate::attitude::{sign_align, Quaternion};
use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 30;
const OFF_DIAGONAL_TOL: f64 = 1e-13;
const EIGEN_TIE_TOL: f64 = 1e-12;

/// Eigen-decomposition of a symmetric 4×4 matrix by cyclic Jacobi rotations.
/// Eigenvalues are returned in descending order with matching unit columns.
pub fn symmetric_eigen_4x4(m: &Matrix4<f64>) -> ([f64; 4], Matrix4<f64>) {
    let mut a = 0.5 * (m + m.transpose());
    let mut v = Matrix4::<f64>::identity();
    let scale = a.abs().max().max(f64::MIN_POSITIVE);

    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..4)
            .flat_map(|p| ((p + 1)..4).map(move |q| (p, q)))
            .map(|(p, q)| a[(p, q)] * a[(p, q)])
            .sum::<f64>()
            .sqrt();
        if off <= OFF_DIAGONAL_TOL * scale {
            break;
        }
        for p in 0..3 {
            for q in (p + 1)..4 {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..4 {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..4 {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..4 {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order = [0usize, 1, 2, 3];
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]));
    let values = order.map(|i| a[(i, i)]);
    let vectors = Matrix4::from_columns(&order.map(|i| v.column(i).normalize()));
    (values, vectors)
}

/// Dominant eigenpair of a symmetric 4×4 matrix.
pub fn symmetric_eigmax_4x4(m: &Matrix4<f64>) -> (f64, Vector4<f64>) {
    let (values, vectors) = symmetric_eigen_4x4(m);
    (values[0], vectors.column(0).into_owned())
}

/// Weighted chordal mean of `quats`, sign-aligned to `prev`.
///
/// Returns [`Error::DegenerateSpectrum`] when the top two eigenvalues tie; its
/// `fallback` is whichever of the two eigenvectors lies closest to `prev`.
pub fn markley_mean(
    quats: &[Quaternion],
    weights: &[f64],
    prev: &Quaternion,
) -> Result<Quaternion> {
    assert_eq!(quats.len(), weights.len(), "one weight per quaternion");
    assert!(!quats.is_empty(), "fusion needs at least one quaternion");

    let m = quats
        .iter()
        .zip(weights)
        .fold(Matrix4::zeros(), |acc, (q, &w)| {
            let v = q.as_vector4();
            acc + w * v * v.transpose()
        });
    let (values, vectors) = symmetric_eigen_4x4(&m);
    let pick = |i: usize| {
        sign_align(
            &Quaternion::from_vector4(&vectors.column(i).into_owned()).normalize(),
            prev,
        )
    };

    if values[0] - values[1] <= EIGEN_TIE_TOL * values[0].abs().max(1.0) {
        let (a, b) = (pick(0), pick(1));
        let fallback = if a.dot(prev).abs() >= b.dot(prev).abs() {
            a
        } else {
            b
        };
        return Err(Error::DegenerateSpectrum { fallback });
    }
    Ok(pick(0))
}
