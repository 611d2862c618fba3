//! The three conjugate Gibbs blocks.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::ar::{is_stationary, ArPrior};
use crate::error::{Error, Result};
use crate::linalg::{cholesky, sample_with_precision_factor};
use crate::rng::standard_normal_vector;

/// Consecutive non-stationary draws tolerated before giving up.
pub const MAX_RHO_REJECTIONS: usize = 10_000;

/// Gaussian full conditional of ρ before truncation to the stationary region.
#[derive(Clone, Debug)]
pub struct RhoConditional {
    pub mean: DVector<f64>,
    /// Posterior precision A_n⁻¹.
    pub precision: DMatrix<f64>,
}

/// ρ | rest from the lag regression u_t = Σ_k ρ_k u_{t−k} + ε_t pooled over
/// voxels with per-voxel noise variances.
///
/// `u_star` is the T★×J residual Y★ − H(F)B − Z★Γ; its first K rows are the
/// presample lags. The prior covariance A₀ enters through its inverse.
pub fn rho_conditional(u_star: &DMatrix<f64>, sigma2: &DVector<f64>, prior: &ArPrior) -> Result<RhoConditional> {
    let k = prior.order();
    if u_star.nrows() <= k || u_star.ncols() != sigma2.len() {
        return Err(Error::Shape(format!(
            "residual matrix {:?} does not fit AR order {k} and {} voxels",
            u_star.shape(),
            sigma2.len()
        )));
    }
    let a0_inv = cholesky(prior.a0.clone(), "AR prior covariance")?.inverse();
    let t = u_star.nrows() - k;
    let mut dtd = DMatrix::<f64>::zeros(k, k);
    let mut dtu = DVector::<f64>::zeros(k);
    for (j, s2) in sigma2.iter().enumerate() {
        let u = u_star.column(j);
        // D_j has rows (u_{t−1}, …, u_{t−K}) for t = K..T★.
        let d = DMatrix::from_fn(t, k, |r, c| u[k + r - c - 1]);
        let target = u.rows(k, t);
        dtd += d.tr_mul(&d) / *s2;
        dtu += d.tr_mul(&target) / *s2;
    }
    let precision = dtd + &a0_inv;
    let rhs = dtu + &a0_inv * &prior.rho0;
    let chol = cholesky(precision.clone(), "ρ posterior precision")?;
    Ok(RhoConditional {
        mean: chol.solve(&rhs),
        precision,
    })
}

/// Draws ρ from its conditional, redrawing until the draw is stationary.
pub fn sample_rho<R: Rng + ?Sized>(
    u_star: &DMatrix<f64>,
    sigma2: &DVector<f64>,
    prior: &ArPrior,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let cond = rho_conditional(u_star, sigma2, prior)?;
    let chol = cholesky(cond.precision, "ρ posterior precision")?;
    for _ in 0..MAX_RHO_REJECTIONS {
        let z = standard_normal_vector(cond.mean.len(), rng);
        let rho = &cond.mean + sample_with_precision_factor(&chol, &z);
        if is_stationary(rho.as_slice()) {
            return Ok(rho);
        }
    }
    Err(Error::Divergence(format!(
        "{MAX_RHO_REJECTIONS} consecutive non-stationary AR draws; conditional mean {:?}",
        cond.mean.as_slice()
    )))
}

/// Inverse-gamma parameters (shape, per-voxel scales) of σ² | rest.
///
/// Shape c₀ + T/2, scale d₀ + ½‖ỹ_j − X̃q_j‖². With `coef_prior` set, the
/// prior on Q (which is conditional on σ²) also contributes: the shape grows by
/// half the rank of P_Q and the scale by ½(q_j − q₀_j)ᵀP_Q(q_j − q₀_j).
pub fn sigma2_conditional(
    y_t: &DMatrix<f64>,
    x_t: &DMatrix<f64>,
    q: &DMatrix<f64>,
    c0: f64,
    d0: f64,
    coef_prior: Option<(&DMatrix<f64>, &DMatrix<f64>)>,
) -> Result<(f64, Vec<f64>)> {
    let resid = y_t - x_t * q;
    let mut shape = c0 + y_t.nrows() as f64 / 2.0;
    let mut scales: Vec<f64> = resid.column_iter().map(|r| d0 + 0.5 * r.norm_squared()).collect();
    if let Some((pq, q0)) = coef_prior {
        let rank = pq.clone().svd(false, false).rank(1e-300);
        shape += rank as f64 / 2.0;
        for (j, s) in scales.iter_mut().enumerate() {
            let dq = q.column(j) - q0.column(j);
            *s += 0.5 * dq.dot(&(pq * &dq));
        }
    }
    if let Some(j) = scales.iter().position(|s| !(*s > 0.0)) {
        return Err(Error::Numerical(format!(
            "σ² conditional for voxel {j} has scale {} (zero residuals with d₀ = 0 give an improper conditional)",
            scales[j]
        )));
    }
    if !(shape > 0.0) {
        return Err(Error::Numerical(format!("σ² conditional has shape {shape}")));
    }
    Ok((shape, scales))
}

/// One draw from InvGamma(shape, scale): the reciprocal of a Gamma(shape, 1/scale).
pub fn sample_inv_gamma<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> Result<f64> {
    let g = Gamma::new(shape, 1.0 / scale)
        .map_err(|e| Error::Numerical(format!("inverse-gamma({shape}, {scale}): {e}")))?;
    Ok(1.0 / g.sample(rng))
}

pub fn sample_sigma2<R: Rng + ?Sized>(shape: f64, scales: &[f64], rng: &mut R) -> Result<DVector<f64>> {
    let mut out = DVector::zeros(scales.len());
    for (o, s) in out.iter_mut().zip(scales) {
        *o = sample_inv_gamma(shape, *s, rng)?;
    }
    Ok(out)
}

/// Q | σ², ρ, F: column j ~ N(q̄_j, σ_j² Λ⁻¹) with Λ = P_Q + X̃ᵀX̃ and
/// Q̄ = Λ⁻¹(X̃ᵀỸ + P_Q Q₀).
#[derive(Clone, Debug)]
pub struct CoefConditional {
    pub mean: DMatrix<f64>,
    pub chol: Cholesky<f64, Dyn>,
}

pub fn coef_conditional(
    x_t: &DMatrix<f64>,
    y_t: &DMatrix<f64>,
    pq: &DMatrix<f64>,
    q0: &DMatrix<f64>,
) -> Result<CoefConditional> {
    let lambda = pq + x_t.tr_mul(x_t);
    let chol = cholesky(lambda, "coefficient posterior precision P_Q + X̃ᵀX̃").map_err(|e| match e {
        Error::Numerical(m) => Error::Numerical(format!("{m}; increase κ or τ, or check the design for collinearity")),
        other => other,
    })?;
    // Cholesky succeeds on exactly collinear designs with a rounding-sized
    // pivot; treat a pivot ratio below 1e-7 (condition number above 1e14)
    // as singular.
    let diag = chol.l_dirty().diagonal();
    if diag.min() < 1e-7 * diag.max() {
        return Err(Error::Numerical(format!(
            "coefficient posterior precision P_Q + X̃ᵀX̃ is numerically singular (pivot ratio {:.1e}); increase κ or τ, or check the design for collinearity",
            diag.min() / diag.max()
        )));
    }
    let rhs = x_t.tr_mul(y_t) + pq * q0;
    let mean = chol.solve(&rhs);
    Ok(CoefConditional { mean, chol })
}

pub fn sample_coefficients<R: Rng + ?Sized>(
    cond: &CoefConditional,
    sigma2: &DVector<f64>,
    rng: &mut R,
) -> DMatrix<f64> {
    let mut q = cond.mean.clone();
    let n = q.nrows();
    for (j, s2) in sigma2.iter().enumerate() {
        let z = standard_normal_vector(n, rng);
        let dev = sample_with_precision_factor(&cond.chol, &z) * s2.sqrt();
        let mut col = q.column_mut(j);
        col += dev;
    }
    q
}
