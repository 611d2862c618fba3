//! Blocked Gibbs sampler for one parcel.
//!
//! Each sweep draws ρ, then σ², then Q = (B; Γ), then the latent predicted
//! BOLD. All matrix-normal draws reduce to independent column draws because
//! their row covariance is shared across voxels.

pub mod conditionals;
pub mod data;
pub mod draws;
pub mod ess;
pub mod init;
pub mod latent;
pub mod spec;

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

pub use conditionals::{
    coef_conditional, rho_conditional, sample_coefficients, sample_rho, sample_sigma2, sigma2_conditional,
    CoefConditional, RhoConditional, MAX_RHO_REJECTIONS,
};
pub use data::ParcelData;
pub use draws::{DrawsMeta, PosteriorDraws, Timing};
pub use ess::{ess_step, EssOutcome};
pub use init::{full_design, initialize_with, InitReport};
pub use latent::{FixedLatent, GpLatent, LatentModel, LatentState, LikelihoodContext};
pub use spec::{ArPriorConfig, InitSettings, ModelSpec, PriorConfig, RidgePenalty, SamplerSettings};

use crate::ar::prewhiten_columns;
use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, ChainRng};

#[derive(Clone, Debug, PartialEq)]
pub struct ChainState {
    pub latent: LatentState,
    pub b: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    pub sigma2: DVector<f64>,
    pub rho: DVector<f64>,
}

impl ChainState {
    pub fn q(&self) -> DMatrix<f64> {
        let mb = self.b.nrows();
        let p = self.gamma.nrows();
        let mut q = DMatrix::zeros(mb + p, self.b.ncols());
        q.rows_mut(0, mb).copy_from(&self.b);
        q.rows_mut(mb, p).copy_from(&self.gamma);
        q
    }

    /// Y★ − design·B − Z★Γ.
    pub fn residual(&self, data: &ParcelData) -> DMatrix<f64> {
        &data.y - &self.latent.design * &self.b - &data.z * &self.gamma
    }
}

/// Starting values for the GP model: F at its prior mean.
pub fn initialize_chain(data: &ParcelData, spec: &ModelSpec) -> Result<ChainState> {
    spec.validate(data)?;
    let latent = GpLatent::new(&spec.f0, &spec.kernels)?;
    Ok(initialize_with(data, spec, latent.initial()?)?.state)
}

/// One full sweep. Returns the slice shrinkages of the latent step.
pub fn gibbs_sweep(
    state: &mut ChainState,
    data: &ParcelData,
    spec: &ModelSpec,
    latent: &dyn LatentModel,
    pq: &DMatrix<f64>,
    q0: &DMatrix<f64>,
    rng: &mut ChainRng,
) -> Result<usize> {
    // 1. ρ from the current residuals, then pre-whiten with it.
    state.rho = sample_rho(&state.residual(data), &state.sigma2, &spec.ar, rng)?;
    let rho = state.rho.as_slice();
    let yt = prewhiten_columns(&data.y, rho)?;
    let zt = prewhiten_columns(&data.z, rho)?;
    let xt = full_design(&prewhiten_columns(&state.latent.design, rho)?, &zt);

    // 2. σ²
    let coef_prior = spec.sigma2_includes_coef_prior.then_some((pq, q0));
    let (shape, scales) = sigma2_conditional(&yt, &xt, &state.q(), spec.c0, spec.d0, coef_prior)?;
    state.sigma2 = sample_sigma2(shape, &scales, rng)?;

    // 3. Q = (B; Γ)
    let cond = coef_conditional(&xt, &yt, pq, q0)?;
    let q = sample_coefficients(&cond, &state.sigma2, rng);
    let mb = state.b.nrows();
    state.b = q.rows(0, mb).into_owned();
    state.gamma = q.rows(mb, data.n_nuisance()).into_owned();

    // 4. latent predicted BOLD
    if !latent.is_sampled() {
        return Ok(0);
    }
    let r = yt - zt * &state.gamma;
    let ctx = LikelihoodContext {
        r: &r,
        b: &state.b,
        sigma2: &state.sigma2,
        rho,
    };
    latent.update(&mut state.latent, &ctx, rng)
}

/// Runs the GP model.
pub fn run_chain(data: &ParcelData, spec: &ModelSpec) -> Result<PosteriorDraws> {
    let latent = GpLatent::new(&spec.f0, &spec.kernels)?;
    run_chain_with(data, spec, &latent, "parcel")
}

/// Runs the sampler with any latent block, keeping post-burn-in draws at the
/// thinning interval. The same seed gives bit-identical draws.
pub fn run_chain_with(
    data: &ParcelData,
    spec: &ModelSpec,
    latent: &dyn LatentModel,
    parcel_id: &str,
) -> Result<PosteriorDraws> {
    let clock = Instant::now();
    let start = latent.initial()?;
    let mb = start.design.ncols();
    if spec.b0.nrows() != mb {
        return Err(Error::Shape(format!(
            "the {} model has {mb} activation columns but B₀ has {} rows",
            latent.name(),
            spec.b0.nrows()
        )));
    }
    spec.validate(data)?;
    let init = initialize_with(data, spec, start)?;
    let init_seconds = clock.elapsed().as_secs_f64();

    let settings = &spec.sampler;
    let n = settings.retained_count();
    let (tstar, m, j, p, k) = (
        data.n_total(),
        spec.n_stimuli(),
        data.n_voxels(),
        data.n_nuisance(),
        data.presample,
    );
    let mut f = DMatrix::zeros(n, tstar * m);
    let mut design = DMatrix::zeros(n, tstar * mb);
    let mut h = init.state.latent.h.as_ref().map(|v| DMatrix::zeros(n, v.len()));
    let mut b = DMatrix::zeros(n, mb * j);
    let mut gamma = DMatrix::zeros(n, p * j);
    let mut sigma2 = DMatrix::zeros(n, j);
    let mut rho = DMatrix::zeros(n, k);

    let pq = spec.coef_precision();
    let q0 = spec.coef_mean();
    let mut rng = rng_from_seed(settings.seed);
    let mut state = init.state.clone();
    let mut shrinks = 0usize;
    let mut row = 0;
    let clock = Instant::now();
    for i in 0..settings.n_iter {
        shrinks += gibbs_sweep(&mut state, data, spec, latent, &pq, &q0, &mut rng).map_err(|e| Error::Sweep {
            sweep: i,
            source: Box::new(e),
        })?;
        if settings.is_retained(i) {
            f.row_mut(row).copy_from_slice(state.latent.f.as_slice());
            design.row_mut(row).copy_from_slice(state.latent.design.as_slice());
            if let (Some(hd), Some(hv)) = (h.as_mut(), state.latent.h.as_ref()) {
                hd.row_mut(row).copy_from_slice(hv.as_slice());
            }
            b.row_mut(row).copy_from_slice(state.b.as_slice());
            gamma.row_mut(row).copy_from_slice(state.gamma.as_slice());
            sigma2.row_mut(row).copy_from_slice(state.sigma2.as_slice());
            rho.row_mut(row).copy_from_slice(state.rho.as_slice());
            row += 1;
        }
    }
    debug_assert_eq!(row, n);
    let meta = DrawsMeta {
        parcel_id: parcel_id.to_string(),
        model: latent.name().to_string(),
        n_iter: settings.n_iter,
        burn_in: settings.burn_in,
        thin: settings.thin,
        seed: settings.seed,
        retained: n,
        n_total: tstar,
        presample: k,
        n_stimuli: m,
        n_basis: mb,
        n_voxels: j,
        n_nuisance: p,
        latent_sampled: latent.is_sampled(),
        ridge_penalty: init.ridge_penalty,
        init_iterations: init.iterations,
        init_converged: init.converged,
        gp_jitter: latent.jitter(),
        kappa: spec.kappa,
        c0: spec.c0,
        d0: spec.d0,
        sigma2_includes_coef_prior: spec.sigma2_includes_coef_prior,
        mean_slice_shrinks: shrinks as f64 / settings.n_iter as f64,
    };
    Ok(PosteriorDraws {
        meta,
        timing: Timing {
            init_seconds,
            sampling_seconds: clock.elapsed().as_secs_f64(),
        },
        f,
        design,
        h,
        b,
        gamma,
        sigma2,
        rho,
    })
}
