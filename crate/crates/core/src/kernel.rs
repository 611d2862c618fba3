//! Matérn-5/2 kernel and Gaussian-process priors over the T★ time grid.
//!
//! Distances are measured in TR samples.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::min_eigenvalue;
use crate::rng::standard_normal_vector;

pub const DEFAULT_JITTER: f64 = 1e-6;
const MAX_JITTER: f64 = 1e-2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelHyper {
    pub lengthscale: f64,
    /// Marginal variance ω².
    pub variance: f64,
    /// Diagonal jitter relative to ω².
    pub jitter: f64,
}

impl KernelHyper {
    pub fn new(lengthscale: f64, variance: f64) -> Self {
        KernelHyper {
            lengthscale,
            variance,
            jitter: DEFAULT_JITTER,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lengthscale > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "kernel lengthscale must be positive, got {}",
                self.lengthscale
            )));
        }
        // ω² = 0 is accepted as the degenerate point-mass prior.
        if !(self.variance >= 0.0) || !(self.jitter >= 0.0) {
            return Err(Error::InvalidParameter(
                "kernel variance and jitter must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Kernel hyperparameters as written in a run config. Exactly one of
/// `variance` (ω²) or `omega` (ω) must be given.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub lengthscale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
    #[serde(default = "default_jitter")]
    pub jitter: f64,
}

fn default_jitter() -> f64 {
    DEFAULT_JITTER
}

impl KernelConfig {
    pub fn to_hyper(&self) -> Result<KernelHyper> {
        let variance = match (self.variance, self.omega) {
            (Some(v), None) => v,
            (None, Some(w)) => w * w,
            _ => {
                return Err(Error::InvalidParameter(
                    "kernel config needs exactly one of `variance` (ω²) or `omega` (ω)".into(),
                ))
            }
        };
        let h = KernelHyper {
            lengthscale: self.lengthscale,
            variance,
            jitter: self.jitter,
        };
        h.validate()?;
        Ok(h)
    }
}

/// Matérn ν = 5/2: ω²(1 + √5 r/l + 5r²/(3l²)) exp(−√5 r/l).
///
/// The 1/3 on the quadratic term is what makes the kernel positive definite;
/// without it the spectral density turns negative above unit frequency.
pub fn matern52(r: f64, hyper: &KernelHyper) -> Result<f64> {
    if !(r >= 0.0) {
        return Err(Error::InvalidParameter(format!("kernel distance must be non-negative, got {r}")));
    }
    let s = 5f64.sqrt() * r / hyper.lengthscale;
    Ok(hyper.variance * (1.0 + s + s * s / 3.0) * (-s).exp())
}

#[derive(Clone, Debug)]
pub struct GpPrior {
    pub mean: DVector<f64>,
    /// K(𝒯★, 𝒯★) including the diagonal jitter.
    pub cov: DMatrix<f64>,
    /// Lower-triangular factor of `cov`.
    pub chol: DMatrix<f64>,
    /// Relative jitter actually used after escalation.
    pub jitter_used: f64,
}

impl GpPrior {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }
}

/// Kernel matrix over `times`, filled symmetrically.
pub fn kernel_matrix(times: &[f64], hyper: &KernelHyper) -> Result<DMatrix<f64>> {
    let n = times.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = matern52((times[i] - times[j]).abs(), hyper)?;
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// Builds the prior N(mean, K(times, times)) and its Cholesky factor, escalating
/// the jitter tenfold up to 1e-2 if the factorization fails.
pub fn build_gp_prior(mean: DVector<f64>, times: &[f64], hyper: &KernelHyper) -> Result<GpPrior> {
    hyper.validate()?;
    if mean.len() != times.len() {
        return Err(Error::Shape(format!(
            "GP mean has length {} but the grid has {} points",
            mean.len(),
            times.len()
        )));
    }
    if times.len() > 1 {
        let step = times[1] - times[0];
        let equispaced = times
            .windows(2)
            .all(|w| w[1] > w[0] && ((w[1] - w[0]) - step).abs() <= 1e-9 * step.abs().max(1.0));
        if !equispaced {
            return Err(Error::InvalidParameter(
                "GP time grid must be strictly increasing and equally spaced".into(),
            ));
        }
    }
    let n = times.len();
    let cov = kernel_matrix(times, hyper)?;
    if hyper.variance == 0.0 {
        return Ok(GpPrior {
            mean,
            chol: DMatrix::zeros(n, n),
            cov,
            jitter_used: hyper.jitter,
        });
    }
    let (cov, chol, jitter_used) = factor_with_jitter(&cov, hyper.variance, hyper.jitter)?;
    Ok(GpPrior {
        mean,
        cov,
        chol,
        jitter_used,
    })
}

/// Cholesky factor of `cov + jitter·scale·I`, escalating the relative jitter
/// tenfold from `start` up to 1e-2. Returns the jittered matrix, its lower
/// factor and the jitter used.
pub fn factor_with_jitter(cov: &DMatrix<f64>, scale: f64, start: f64) -> Result<(DMatrix<f64>, DMatrix<f64>, f64)> {
    let n = cov.nrows();
    let mut jitter = start;
    loop {
        let mut a = cov.clone();
        for i in 0..n {
            a[(i, i)] += jitter * scale;
        }
        if let Some(ch) = nalgebra::Cholesky::new(a.clone()) {
            // The returned matrix carries the jitter so that L·Lᵀ reproduces it.
            return Ok((a, ch.unpack(), jitter));
        }
        if jitter >= MAX_JITTER {
            return Err(Error::Numerical(format!(
                "GP covariance factorization failed with jitter {jitter:e}; minimum eigenvalue estimate {:.3e}",
                min_eigenvalue(cov)
            )));
        }
        jitter = if jitter == 0.0 { DEFAULT_JITTER } else { (jitter * 10.0).min(MAX_JITTER) };
        log::debug!("escalating GP jitter to {jitter:e}");
    }
}

/// Prior on the sample grid 0, 1, …, n−1.
pub fn build_gp_prior_on_grid(mean: DVector<f64>, hyper: &KernelHyper) -> Result<GpPrior> {
    let times: Vec<f64> = (0..mean.len()).map(|i| i as f64).collect();
    build_gp_prior(mean, &times, hyper)
}

pub fn sample_gp<R: Rng + ?Sized>(prior: &GpPrior, rng: &mut R) -> DVector<f64> {
    let z = standard_normal_vector(prior.len(), rng);
    &prior.mean + &prior.chol * z
}
