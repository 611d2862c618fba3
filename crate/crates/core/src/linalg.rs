//! Small dense helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return f64::NAN;
    }
    SymmetricEigen::new(a.clone()).eigenvalues.min()
}

/// Cholesky factorization or a numerical error naming `what`.
pub fn cholesky(a: DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    let probe = a.clone();
    Cholesky::new(a).ok_or_else(|| {
        Error::Numerical(format!(
            "{what} is not positive definite (minimum eigenvalue estimate {:.3e})",
            min_eigenvalue(&probe)
        ))
    })
}

/// Draws from N(0, A⁻¹) given the Cholesky factor L of the precision A = L Lᵀ.
pub fn sample_with_precision_factor(chol: &Cholesky<f64, Dyn>, z: &DVector<f64>) -> DVector<f64> {
    // Solve Lᵀ x = z, so cov(x) = L⁻ᵀ L⁻¹ = A⁻¹.
    chol.l()
        .transpose()
        .solve_upper_triangular(z)
        .expect("Cholesky factor has a nonzero diagonal")
}

pub fn column_mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// Pearson correlation, or `None` when either input has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa > 0.0 && sbb > 0.0 {
        Some(sab / (saa * sbb).sqrt())
    } else {
        None
    }
}
