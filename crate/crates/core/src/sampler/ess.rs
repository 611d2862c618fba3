//! Elliptical slice sampling for a latent vector with a Gaussian prior.

use std::f64::consts::TAU;

use nalgebra::DVector;
use rand::Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct EssOutcome {
    pub state: DVector<f64>,
    pub loglik: f64,
    /// Bracket shrinkages before acceptance.
    pub shrinks: usize,
}

/// One elliptical slice step.
///
/// `nu` is a draw from the centered prior N(0, Σ). Proposals lie on the ellipse
/// `mean + (current − mean)·cos θ + nu·sin θ`. The bracket on θ shrinks toward
/// the current state until a proposal clears the slice level.
pub fn ess_step<R, L>(
    current: &DVector<f64>,
    mean: &DVector<f64>,
    nu: &DVector<f64>,
    current_loglik: f64,
    mut loglik: L,
    rng: &mut R,
) -> Result<EssOutcome>
where
    R: Rng + ?Sized,
    L: FnMut(&DVector<f64>) -> Result<f64>,
{
    if current_loglik.is_nan() || current_loglik == f64::INFINITY || current_loglik == f64::NEG_INFINITY {
        return Err(Error::Numerical(format!(
            "elliptical slice step started from log-likelihood {current_loglik}"
        )));
    }
    let centered = current - mean;
    let u: f64 = rng.random();
    let level = current_loglik + u.ln();
    let mut theta = rng.random::<f64>() * TAU;
    let (mut lo, mut hi) = (theta - TAU, theta);
    let mut shrinks = 0;
    loop {
        let proposal = mean + &centered * theta.cos() + nu * theta.sin();
        let ll = loglik(&proposal)?;
        if ll > level {
            debug_assert!(ll > level);
            return Ok(EssOutcome {
                state: proposal,
                loglik: ll,
                shrinks,
            });
        }
        if theta < 0.0 {
            lo = theta;
        } else {
            hi = theta;
        }
        if hi - lo <= f64::EPSILON {
            return Err(Error::Divergence(format!(
                "slice bracket collapsed after {shrinks} shrinkages (level {level}, current {current_loglik})"
            )));
        }
        theta = lo + rng.random::<f64>() * (hi - lo);
        shrinks += 1;
    }
}
