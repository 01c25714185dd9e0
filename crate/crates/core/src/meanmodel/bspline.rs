//! Cubic B-splines on equally spaced knots and difference penalties
//! (P-spline construction).

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Evaluates `k` cubic B-splines on `[0, 1]` at `points`.
///
/// The knots are equally spaced with `k − 3` segments covering `[0, 1]` and
/// three extra knots on each side, so the basis sums to one on the interval
/// and coefficients linear in the index reproduce straight lines.
pub fn cubic_bspline_basis(points: &[f64], k: usize) -> Result<DMatrix<f64>> {
    if k < 4 {
        return Err(Error::InvalidSpec(format!("basis size {k} must be at least 4")));
    }
    let segments = k - 3;
    let h = 1.0 / segments as f64;
    let mut basis = DMatrix::zeros(points.len(), k);
    for (row, &t) in points.iter().enumerate() {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::InvalidInput(format!("spline argument {t} outside [0, 1]")));
        }
        let span = ((t / h).floor() as usize).min(segments - 1);
        let u = t / h - span as f64;
        let u2 = u * u;
        let u3 = u2 * u;
        let v = 1.0 - u;
        basis[(row, span)] = v * v * v / 6.0;
        basis[(row, span + 1)] = (3.0 * u3 - 6.0 * u2 + 4.0) / 6.0;
        basis[(row, span + 2)] = (-3.0 * u3 + 3.0 * u2 + 3.0 * u + 1.0) / 6.0;
        basis[(row, span + 3)] = u3 / 6.0;
    }
    Ok(basis)
}

/// Difference operator `D_order` of shape `(k − order) × k`.
pub fn difference_matrix(k: usize, order: usize) -> DMatrix<f64> {
    let mut d = DMatrix::<f64>::identity(k, k);
    for _ in 0..order {
        let rows = d.nrows() - 1;
        d = DMatrix::from_fn(rows, k, |i, j| d[(i + 1, j)] - d[(i, j)]);
    }
    d
}

/// `DᵀD` for the difference operator of the given order.
pub fn difference_penalty(k: usize, order: usize) -> DMatrix<f64> {
    let d = difference_matrix(k, order);
    d.tr_mul(&d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn partition_of_unity_and_linear_reproduction() {
        let pts: Vec<f64> = (0..41).map(|i| i as f64 / 40.0).collect();
        let b = cubic_bspline_basis(&pts, 10).unwrap();
        for r in 0..pts.len() {
            assert_abs_diff_eq!(b.row(r).sum(), 1.0, epsilon = 1e-14);
        }
        // Greville abscissae of uniform cubic splines are the knot midpoints shifted by one segment.
        let h = 1.0 / 7.0;
        let coef = nalgebra::DVector::from_fn(10, |j, _| (j as f64 - 1.0) * h);
        let line = &b * coef;
        for (r, t) in pts.iter().enumerate() {
            assert_abs_diff_eq!(line[r], *t, epsilon = 1e-13);
        }
    }

    #[test]
    fn second_difference_penalty() {
        let p = difference_penalty(4, 2);
        let expected = DMatrix::from_row_slice(
            4,
            4,
            &[
                1.0, -2.0, 1.0, 0.0, -2.0, 5.0, -4.0, 1.0, 1.0, -4.0, 5.0, -2.0, 0.0, 1.0, -2.0, 1.0,
            ],
        );
        assert_eq!(p, expected);
        assert_eq!(difference_matrix(5, 1).nrows(), 4);
    }

    #[test]
    fn rejects_small_basis() {
        assert!(cubic_bspline_basis(&[0.5], 3).is_err());
        assert!(cubic_bspline_basis(&[1.5], 5).is_err());
    }
}
