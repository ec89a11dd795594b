//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative threshold below which eigenvalues are treated as zero.
pub const EIGEN_CLAMP_REL: f64 = 1e-12;

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    m.is_square()
        && (0..m.nrows()).all(|i| (0..i).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= tol))
}

pub fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// Eigen-decomposition of the symmetric part of `m`, eigenvalues ascending.
pub fn sym_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

pub fn lambda_min(m: &DMatrix<f64>) -> f64 {
    let (values, _) = sym_eigen(m);
    values.iter().copied().fold(f64::INFINITY, f64::min)
}

pub fn lambda_max(m: &DMatrix<f64>) -> f64 {
    let (values, _) = sym_eigen(m);
    values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Zeroes eigenvalues with `|λ| < EIGEN_CLAMP_REL · max|λ|` in place and
/// reports whether any were clamped.
pub fn clamp_small_eigenvalues(values: &mut DVector<f64>) -> bool {
    let scale = values.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let mut clamped = false;
    for v in values.iter_mut() {
        if v.abs() < EIGEN_CLAMP_REL * scale || scale == 0.0 {
            *v = 0.0;
            clamped = true;
        }
    }
    clamped
}

/// Symmetric square root `V` with `VᵀV = V V = m` of a PSD matrix.
pub fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (values, vectors) = sym_eigen(m);
    let root = DMatrix::from_diagonal(&values.map(|v| v.max(0.0).sqrt()));
    &vectors * root * vectors.transpose()
}

/// Requires a symmetric positive definite matrix.
pub fn check_pd(m: &DMatrix<f64>, name: &str) -> Result<()> {
    if !m.is_square() {
        return Err(Error::invalid(format!("{name} must be square, got {}x{}", m.nrows(), m.ncols())));
    }
    if !all_finite(m) {
        return Err(Error::invalid(format!("{name} has non-finite entries")));
    }
    if !is_symmetric(m, 1e-9) {
        return Err(Error::invalid(format!("{name} must be symmetric")));
    }
    let lmin = lambda_min(m);
    if lmin <= 0.0 {
        return Err(Error::invalid(format!("{name} must be positive definite (λ_min = {lmin:e})")));
    }
    Ok(())
}

/// Smallest singular value of a square matrix.
pub fn sigma_min(m: &DMatrix<f64>) -> f64 {
    let svd = m.clone().svd(false, false);
    svd.singular_values.iter().copied().fold(f64::INFINITY, f64::min)
}

/// `(x − c)ᵀ M (x − c)` on plain slices.
pub fn quad_form(m: &DMatrix<f64>, x: &[f64], center: &[f64]) -> f64 {
    let n = x.len();
    let mut acc = 0.0;
    for j in 0..n {
        let dj = x[j] - center[j];
        if dj == 0.0 {
            continue;
        }
        let mut row = 0.0;
        for i in 0..n {
            row += m[(i, j)] * (x[i] - center[i]);
        }
        acc += row * dj;
    }
    acc
}

/// `out = M x` on plain slices.
pub fn mat_vec_into(m: &DMatrix<f64>, x: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    for (j, xj) in x.iter().enumerate() {
        if *xj == 0.0 {
            continue;
        }
        for (i, o) in out.iter_mut().enumerate() {
            *o += m[(i, j)] * xj;
        }
    }
}

/// Neumaier-compensated sum.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn sqrt_squares_back() {
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let v = sym_sqrt(&q);
        assert_relative_eq!(v.transpose() * &v, q, epsilon = 1e-12);
    }

    #[test]
    fn eigen_sorted() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0, 2.0]));
        let (values, _) = sym_eigen(&m);
        assert_eq!(values.as_slice(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn quad_form_matches_nalgebra() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let x = [1.0, -2.0];
        let c = [0.5, 0.5];
        let d = DVector::from_vec(vec![0.5, -2.5]);
        let expected = (d.transpose() * &m * &d)[(0, 0)];
        assert_relative_eq!(quad_form(&m, &x, &c), expected, epsilon = 1e-14);
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let vals = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(compensated_sum(vals), 2.0);
    }

    #[test]
    fn pd_check() {
        assert!(check_pd(&DMatrix::identity(3, 3), "Q").is_ok());
        assert!(check_pd(&DMatrix::zeros(2, 2), "Q").is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(check_pd(&asym, "Q").is_err());
    }
}
