use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative asymmetry accepted (and removed) by [`symmetrized`].
pub(crate) const SYMMETRY_TOL: f64 = 1e-8;

/// Returns `(M + M') / 2`, or an error when `M` is not square or is asymmetric beyond
/// [`SYMMETRY_TOL`] relative to its largest entry.
pub(crate) fn symmetrized(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::InvalidInput(format!(
            "expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    let scale = m.amax();
    let n = m.nrows();
    let mut asym = 0.0f64;
    for j in 0..n {
        for i in (j + 1)..n {
            asym = asym.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::InvalidInput(format!(
            "matrix is not symmetric (max asymmetry {asym:e}, scale {scale:e})"
        )));
    }
    Ok((m + m.transpose()) * 0.5)
}

/// Eigenpairs of a symmetric matrix ordered by descending eigenvalue. Ties keep the order
/// returned by the solver (stable sort).
pub(crate) fn sorted_eigen(m: DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(order.len(), order.iter().map(|&i| eig.eigenvalues[i]));
    let vectors = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| {
        eig.eigenvectors[(r, order[c])]
    });
    (values, vectors)
}

pub(crate) fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.symmetric_eigenvalues().min()
}

pub(crate) fn frobenius_sq(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|x| x * x).sum()
}

pub(crate) fn cholesky(m: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    Cholesky::new(m.clone())
}

/// `log |M|` from a Cholesky factor.
pub(crate) fn log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol
        .l_dirty()
        .diagonal()
        .iter()
        .map(|x| x.ln())
        .sum::<f64>()
}

/// Symmetric Toeplitz matrix with first row `taus`.
pub(crate) fn toeplitz(taus: &[f64]) -> DMatrix<f64> {
    let n = taus.len();
    DMatrix::from_fn(n, n, |i, j| taus[i.abs_diff(j)])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetrize_tolerates_rounding_only() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5 + 1e-12, 2.0]);
        let s = symmetrized(&m).unwrap();
        assert_eq!(s[(0, 1)], s[(1, 0)]);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.6, 2.0]);
        assert!(symmetrized(&bad).is_err());
        assert!(symmetrized(&DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn eigen_sorted_descending() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 3.0, 2.0]));
        let (vals, vecs) = sorted_eigen(m.clone());
        assert_eq!(vals.as_slice(), &[3.0, 2.0, 1.0]);
        let rebuilt = &vecs * DMatrix::from_diagonal(&vals) * vecs.transpose();
        assert!((rebuilt - m).amax() < 1e-12);
    }

    #[test]
    fn toeplitz_layout() {
        let t = toeplitz(&[1.0, 2.0, 3.0]);
        assert_eq!(
            t,
            DMatrix::from_row_slice(3, 3, &[1., 2., 3., 2., 1., 2., 3., 2., 1.])
        );
    }
}
