//! Small dense linear algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Eigenpairs of a symmetric matrix, eigenvalues ascending, eigenvectors as columns.
pub fn sym_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = DMatrix::zeros(n, n);
    for (k, &i) in idx.iter().enumerate() {
        let mut col = eig.eigenvectors.column(i).into_owned();
        // deterministic sign: first component with |x| > 1e-12 positive
        if let Some(x) = col.iter().find(|x| x.abs() > 1e-12) {
            if *x < 0.0 {
                col = -col;
            }
        }
        vecs.set_column(k, &col);
    }
    (vals, vecs)
}

/// Real parts of the eigenvalues of a general square matrix.
pub fn eigen_real_parts(m: &DMatrix<f64>) -> Vec<f64> {
    m.clone().complex_eigenvalues().iter().map(|c| c.re).collect()
}

/// Solve A Σ + Σ Aᵀ + Q = 0 by vectorisation (column-major vec).
pub fn solve_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    // vec(AΣ) = (I⊗A) vec Σ, vec(ΣAᵀ) = (A⊗I) vec Σ
    let k = eye.kronecker(a) + a.kronecker(&eye);
    let rhs = -DVector::from_column_slice(q.as_slice());
    let sol = k
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Spectral("singular Lyapunov operator".into()))?;
    let s = DMatrix::from_column_slice(n, n, sol.as_slice());
    Ok((&s + s.transpose()) * 0.5)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_sorted_and_signed() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let (vals, vecs) = sym_eigen(&m);
        assert!((vals[0] - 1.0).abs() < 1e-14 && (vals[1] - 3.0).abs() < 1e-14);
        assert!(vecs[(0, 0)] > 0.0 && vecs[(0, 1)] > 0.0);
        let recon = &vecs * DMatrix::from_diagonal(&DVector::from_vec(vals)) * vecs.transpose();
        assert!((recon - m).norm() < 1e-13);
    }

    #[test]
    fn lyapunov_two_by_two() {
        // A = [[0,1],[-2,-1]], Q = diag(0,1): Σ = diag(1/4, 1/2)
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -1.0]);
        let q = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]);
        let s = solve_lyapunov(&a, &q).unwrap();
        let want = DMatrix::from_row_slice(2, 2, &[0.25, 0.0, 0.0, 0.5]);
        assert!((s - want).norm() < 1e-14);
    }
}
