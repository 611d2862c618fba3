//! The predicted-BOLD block of the sampler.
//!
//! The conjugate steps only see the activation design (T★×M_b). How that
//! design is produced, and whether it moves, depends on the model: the GP
//! model samples F and uses H(F), the fixed baselines hold it constant, and
//! the FIR baseline samples a filter.

use nalgebra::{DMatrix, DVector};

use super::ess::ess_step;
use crate::ar::prewhiten_columns;
use crate::error::{Error, Result};
use crate::identify::transform;
use crate::kernel::{build_gp_prior_on_grid, GpPrior};
use crate::rng::{standard_normal_vector, ChainRng};

#[derive(Clone, Debug, PartialEq)]
pub struct LatentState {
    /// Unidentified predicted BOLD, T★×M.
    pub f: DMatrix<f64>,
    /// FIR filter coefficients, when the model has them.
    pub h: Option<DVector<f64>>,
    /// Activation design entering the regression, T★×M_b.
    pub design: DMatrix<f64>,
}

/// Everything the latent update needs from the other blocks.
///
/// The log-likelihood of a design X is −½ Σ_j ‖r_j − Φ_C(X) b_j‖² / σ_j² with
/// r = Φ_C(Y★ − Z★Γ); terms that do not depend on X are dropped.
pub struct LikelihoodContext<'a> {
    pub r: &'a DMatrix<f64>,
    pub b: &'a DMatrix<f64>,
    pub sigma2: &'a DVector<f64>,
    pub rho: &'a [f64],
}

impl LikelihoodContext<'_> {
    pub fn loglik(&self, design: &DMatrix<f64>) -> Result<f64> {
        let xw = prewhiten_columns(design, self.rho)?;
        let resid = self.r - xw * self.b;
        Ok(-0.5
            * resid
                .column_iter()
                .zip(self.sigma2.iter())
                .map(|(c, s2)| c.norm_squared() / s2)
                .sum::<f64>())
    }

    /// Log-likelihood of H(f) against `reference`; a column H cannot
    /// normalize is an impossible state.
    pub fn loglik_identified(&self, f: &DMatrix<f64>, reference: &DMatrix<f64>) -> Result<f64> {
        match transform(f, reference) {
            Ok(lb) => self.loglik(&lb.transformed),
            Err(Error::DegenerateInput(_)) => Ok(f64::NEG_INFINITY),
            Err(e) => Err(e),
        }
    }
}

pub trait LatentModel: Sync {
    fn name(&self) -> &str;
    fn initial(&self) -> Result<LatentState>;
    /// False when step 4 is skipped.
    fn is_sampled(&self) -> bool;
    /// Updates `state` in place and returns the number of slice shrinkages.
    fn update(&self, state: &mut LatentState, ctx: &LikelihoodContext, rng: &mut ChainRng) -> Result<usize>;
    /// Relative jitter per GP block, for the metadata.
    fn jitter(&self) -> Vec<f64> {
        Vec::new()
    }
}

/// Independent GP priors on the columns of F; the design is H(F).
pub struct GpLatent {
    pub priors: Vec<GpPrior>,
    /// F₀, the reference for the identifying transform.
    pub reference: DMatrix<f64>,
}

impl GpLatent {
    pub fn new(f0: &DMatrix<f64>, kernels: &[crate::kernel::KernelHyper]) -> Result<Self> {
        if kernels.len() != f0.ncols() {
            return Err(Error::Shape(format!("{} kernels for {} stimuli", kernels.len(), f0.ncols())));
        }
        let priors = kernels
            .iter()
            .enumerate()
            .map(|(m, k)| build_gp_prior_on_grid(f0.column(m).into_owned(), k))
            .collect::<Result<Vec<_>>>()?;
        Ok(GpLatent {
            priors,
            reference: f0.clone(),
        })
    }
}

impl LatentModel for GpLatent {
    fn name(&self) -> &str {
        "gp"
    }

    fn initial(&self) -> Result<LatentState> {
        let f = self.reference.clone();
        let design = transform(&f, &self.reference)?.transformed;
        Ok(LatentState { f, h: None, design })
    }

    fn is_sampled(&self) -> bool {
        true
    }

    fn update(&self, state: &mut LatentState, ctx: &LikelihoodContext, rng: &mut ChainRng) -> Result<usize> {
        let mut shrinks = 0;
        let mut cur = ctx.loglik(&state.design)?;
        for (m, prior) in self.priors.iter().enumerate() {
            let nu = &prior.chol * standard_normal_vector(prior.len(), rng);
            let current = state.f.column(m).into_owned();
            let mut work = state.f.clone();
            let out = ess_step(
                &current,
                &prior.mean,
                &nu,
                cur,
                |col| {
                    work.set_column(m, col);
                    ctx.loglik_identified(&work, &self.reference)
                },
                rng,
            )?;
            state.f.set_column(m, &out.state);
            cur = out.loglik;
            shrinks += out.shrinks;
        }
        state.design = transform(&state.f, &self.reference)?.transformed;
        Ok(shrinks)
    }

    fn jitter(&self) -> Vec<f64> {
        self.priors.iter().map(|p| p.jitter_used).collect()
    }
}

/// A design held fixed for the whole chain.
pub struct FixedLatent {
    pub name: String,
    pub f: DMatrix<f64>,
    pub design: DMatrix<f64>,
}

impl LatentModel for FixedLatent {
    fn name(&self) -> &str {
        &self.name
    }

    fn initial(&self) -> Result<LatentState> {
        Ok(LatentState {
            f: self.f.clone(),
            h: None,
            design: self.design.clone(),
        })
    }

    fn is_sampled(&self) -> bool {
        false
    }

    fn update(&self, _: &mut LatentState, _: &LikelihoodContext, _: &mut ChainRng) -> Result<usize> {
        Ok(0)
    }
}
