//! Small dense helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, Dyn, SymmetricEigen};

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    let mut s = m.clone();
    symmetrize(&mut s);
    s.symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Eigen-decomposition of the symmetric part of `m`.
pub fn sym_eigen(m: &DMatrix<f64>) -> SymmetricEigen<f64, Dyn> {
    let mut s = m.clone();
    symmetrize(&mut s);
    SymmetricEigen::new(s)
}

/// Largest `alpha` with `x + alpha * dx` PSD, given the Cholesky factor of `x`.
/// Returns `f64::INFINITY` when the direction never leaves the cone.
pub fn max_step(chol: &Cholesky<f64, Dyn>, dx: &DMatrix<f64>) -> f64 {
    let l = chol.l();
    let t = l
        .solve_lower_triangular(dx)
        .expect("cholesky factor is nonsingular");
    let mut w = l
        .solve_lower_triangular(&t.transpose())
        .expect("cholesky factor is nonsingular");
    symmetrize(&mut w);
    let lam = w
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if lam >= 0.0 {
        f64::INFINITY
    } else {
        -1.0 / lam
    }
}
