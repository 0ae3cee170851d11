use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{Error, Result};

/// Ratio of extreme absolute eigenvalues of a symmetric matrix.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let eig = m.clone().symmetric_eigenvalues();
    let max = eig.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let min = eig.iter().fold(f64::INFINITY, |a, &b| a.min(b.abs()));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

#[cfg(test)]
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigenvalues().min()
}

/// Cholesky factor of a symmetric positive definite matrix, or an error that
/// carries its condition number.
pub fn cholesky(m: &DMatrix<f64>, what: &'static str) -> Result<Cholesky<f64, Dyn>> {
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::Singular {
            what,
            condition: f64::NAN,
        });
    }
    Cholesky::new(m.clone()).ok_or_else(|| Error::Singular {
        what,
        condition: condition_number(m),
    })
}

pub fn log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}
