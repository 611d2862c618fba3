//! Comparison models sharing the Gibbs machinery: the predicted BOLD fixed at
//! its prior mean, the same plus its temporal derivative, and a smooth FIR
//! filter sampled by elliptical slice sampling.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::identify::transform;
use crate::kernel::{factor_with_jitter, kernel_matrix, KernelHyper, DEFAULT_JITTER};
use crate::paradigm::{HrfParams, Paradigm};
use crate::rng::{standard_normal_vector, ChainRng};
use crate::sampler::{
    ess_step, run_chain_with, FixedLatent, GpLatent, LatentModel, LatentState, LikelihoodContext, ModelSpec, ParcelData,
    PosteriorDraws,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "gp")]
    Gp,
    #[serde(rename = "fixed")]
    Fixed,
    #[serde(rename = "fixed-deriv")]
    FixedDeriv,
    #[serde(rename = "fir")]
    Fir,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Gp => "gp",
            ModelKind::Fixed => "fixed",
            ModelKind::FixedDeriv => "fixed-deriv",
            ModelKind::Fir => "fir",
        }
    }

    /// Whether the fit depends on the GP kernel of F.
    pub fn uses_kernel(self) -> bool {
        self == ModelKind::Gp
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gp" => Ok(ModelKind::Gp),
            "fixed" => Ok(ModelKind::Fixed),
            "fixed-deriv" => Ok(ModelKind::FixedDeriv),
            "fir" => Ok(ModelKind::Fir),
            other => Err(Error::InvalidParameter(format!(
                "unknown model {other:?}; expected gp, fixed, fixed-deriv or fir"
            ))),
        }
    }
}

/// Fits `kind` to one parcel.
pub fn fit_model(
    kind: ModelKind,
    data: &ParcelData,
    spec: &ModelSpec,
    paradigm: &Paradigm,
    fir: &FirSpec,
    parcel_id: &str,
) -> Result<PosteriorDraws> {
    match kind {
        ModelKind::Gp => {
            let latent = GpLatent::new(&spec.f0, &spec.kernels)?;
            run_chain_with(data, spec, &latent, parcel_id)
        }
        ModelKind::Fixed => fit_fixed(data, spec, parcel_id),
        ModelKind::FixedDeriv => fit_fixed_with_derivative(data, spec, paradigm.tr, parcel_id),
        ModelKind::Fir => fit_smooth_fir(data, spec, paradigm, fir, parcel_id),
    }
}

/// Step 4 skipped, design H(F₀).
pub fn fixed_latent(spec: &ModelSpec) -> Result<FixedLatent> {
    Ok(FixedLatent {
        name: "fixed".into(),
        f: spec.f0.clone(),
        design: transform(&spec.f0, &spec.f0)?.transformed,
    })
}

pub fn fit_fixed(data: &ParcelData, spec: &ModelSpec, parcel_id: &str) -> Result<PosteriorDraws> {
    run_chain_with(data, spec, &fixed_latent(spec)?, parcel_id)
}

/// Forward difference per TR, the last entry repeating the one before.
fn forward_difference(col: &[f64], tr: f64) -> Vec<f64> {
    let n = col.len();
    let mut d: Vec<f64> = (0..n.saturating_sub(1)).map(|t| (col[t + 1] - col[t]) / tr).collect();
    if let Some(&last) = d.last() {
        d.push(last);
    }
    d
}

/// [H(F₀) | standardized first differences of F₀]: columns 0..M are the
/// first basis, M..2M the derivatives.
pub fn derivative_basis(f0: &DMatrix<f64>, tr: f64) -> Result<DMatrix<f64>> {
    let (n, m) = f0.shape();
    if n < 2 {
        return Err(Error::Shape("a derivative basis needs at least two time points".into()));
    }
    let first = transform(f0, f0)?.transformed;
    let mut x = DMatrix::zeros(n, 2 * m);
    x.columns_mut(0, m).copy_from(&first);
    for c in 0..m {
        let d = forward_difference(f0.column(c).as_slice(), tr);
        let mean = d.iter().sum::<f64>() / n as f64;
        let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        if !(var.sqrt() > 1e-12 * f0.column(c).amax().max(f64::MIN_POSITIVE)) {
            return Err(Error::DegenerateInput(format!(
                "derivative of stimulus {c}'s prior mean is constant and collinear with the nuisance constant"
            )));
        }
        let sd = var.sqrt();
        for t in 0..n {
            x[(t, m + c)] = (d[t] - mean) / sd;
        }
    }
    Ok(x)
}

pub fn fixed_derivative_latent(spec: &ModelSpec, tr: f64) -> Result<FixedLatent> {
    Ok(FixedLatent {
        name: "fixed-deriv".into(),
        f: spec.f0.clone(),
        design: derivative_basis(&spec.f0, tr)?,
    })
}

/// Fixed basis with the temporal derivative. B gains one row per stimulus;
/// activity is read from the first-basis rows.
pub fn fit_fixed_with_derivative(
    data: &ParcelData,
    spec: &ModelSpec,
    tr: f64,
    parcel_id: &str,
) -> Result<PosteriorDraws> {
    let latent = fixed_derivative_latent(spec, tr)?;
    let wide = spec.with_basis_rows(2 * spec.n_stimuli());
    run_chain_with(data, &wide, &latent, parcel_id)
}

/// Settings of the smooth FIR model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FirSpec {
    /// Filter length in samples; `None` means kernel_length / TR.
    pub filter_length: Option<usize>,
    /// Lengthscale in samples.
    pub lengthscale: f64,
    pub variance: f64,
    pub hrf: HrfParams,
}

impl Default for FirSpec {
    fn default() -> Self {
        FirSpec {
            filter_length: None,
            lengthscale: 3.0,
            variance: 0.5,
            hrf: HrfParams::default(),
        }
    }
}

impl FirSpec {
    pub fn resolved_length(&self, tr: f64) -> usize {
        self.filter_length
            .unwrap_or_else(|| (self.hrf.kernel_length / tr).round() as usize)
    }
}

/// T★×(K·M) lagged stimulus matrix: column m·K + k is stimulus m's indicator
/// delayed by k samples.
pub fn fir_design(paradigm: &Paradigm, filter_length: usize) -> Result<DMatrix<f64>> {
    paradigm.validate()?;
    if filter_length == 0 || filter_length > paradigm.n_time {
        return Err(Error::InvalidParameter(format!(
            "FIR filter length {filter_length} must lie in 1..={}",
            paradigm.n_time
        )));
    }
    let n = paradigm.n_total();
    let m = paradigm.n_stimuli();
    let mut x = DMatrix::zeros(n, filter_length * m);
    for s in 0..m {
        let u = paradigm.indicator(s);
        for k in 0..filter_length {
            for t in k..n {
                x[(t, s * filter_length + k)] = u[t - k];
            }
        }
    }
    Ok(x)
}

/// Conditional GP prior of one filter's interior given its clamped endpoints.
struct InteriorPrior {
    chol: DMatrix<f64>,
    jitter: f64,
}

/// Smooth FIR model: F = X_FIR·h per stimulus, design H(F) against X_FIR·μ_h.
/// The first and last coefficient of every filter stay at their prior means.
pub struct FirLatent {
    pub x_fir: DMatrix<f64>,
    pub filter_length: usize,
    /// Prior mean of h, stacked per stimulus.
    pub mean: DVector<f64>,
    pub reference: DMatrix<f64>,
    interior: InteriorPrior,
}

impl FirLatent {
    pub fn new(paradigm: &Paradigm, fir: &FirSpec) -> Result<Self> {
        let k = fir.resolved_length(paradigm.tr);
        if k < 3 {
            return Err(Error::InvalidParameter(format!(
                "FIR filter length {k} leaves no interior coefficients"
            )));
        }
        let x_fir = fir_design(paradigm, k)?;
        let mut hrf = fir.hrf.sampled(paradigm.tr)?;
        hrf.resize(k, 0.0);
        // Sup-normalized so the kernel variance is on the scale of the filter.
        let peak = hrf.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        if !(peak > 0.0) {
            return Err(Error::DegenerateInput("sampled HRF is zero over the filter length".into()));
        }
        let one: Vec<f64> = hrf.iter().map(|v| v / peak).collect();
        let m = paradigm.n_stimuli();
        let mean = DVector::from_iterator(k * m, (0..m).flat_map(|_| one.iter().copied()));
        let hyper = KernelHyper {
            lengthscale: fir.lengthscale,
            variance: fir.variance,
            jitter: DEFAULT_JITTER,
        };
        hyper.validate()?;
        let lags: Vec<f64> = (0..k).map(|i| i as f64).collect();
        let full = kernel_matrix(&lags, &hyper)?;
        // Condition on h₀ and h_{K−1}: Σ_II − Σ_IE Σ_EE⁻¹ Σ_EI.
        let ends = [0, k - 1];
        let s_ee = DMatrix::from_fn(2, 2, |a, b| full[(ends[a], ends[b])]);
        let s_ie = DMatrix::from_fn(k - 2, 2, |i, b| full[(i + 1, ends[b])]);
        let s_ii = full.view((1, 1), (k - 2, k - 2)).into_owned();
        let s_ee_inv = s_ee
            .try_inverse()
            .ok_or_else(|| Error::Numerical("FIR endpoint covariance is singular".into()))?;
        let mut cond = &s_ii - &s_ie * s_ee_inv * s_ie.transpose();
        cond = (&cond + cond.transpose()) * 0.5;
        let (chol, jitter) = if hyper.variance == 0.0 {
            (DMatrix::zeros(k - 2, k - 2), 0.0)
        } else {
            let (_, l, j) = factor_with_jitter(&cond, hyper.variance, hyper.jitter)?;
            (l, j)
        };
        let mut latent = FirLatent {
            x_fir,
            filter_length: k,
            mean,
            reference: DMatrix::zeros(0, 0),
            interior: InteriorPrior { chol, jitter },
        };
        latent.reference = latent.predicted(&latent.mean);
        Ok(latent)
    }

    /// X_FIR·h arranged T★×M.
    pub fn predicted(&self, h: &DVector<f64>) -> DMatrix<f64> {
        let k = self.filter_length;
        let m = self.mean.len() / k;
        let mut f = DMatrix::zeros(self.x_fir.nrows(), m);
        for s in 0..m {
            let col = self.x_fir.columns(s * k, k) * h.rows(s * k, k);
            f.set_column(s, &col);
        }
        f
    }
}

impl LatentModel for FirLatent {
    fn name(&self) -> &str {
        "fir"
    }

    fn initial(&self) -> Result<LatentState> {
        let f = self.reference.clone();
        let design = transform(&f, &self.reference)?.transformed;
        Ok(LatentState {
            f,
            h: Some(self.mean.clone()),
            design,
        })
    }

    fn is_sampled(&self) -> bool {
        true
    }

    fn update(&self, state: &mut LatentState, ctx: &LikelihoodContext, rng: &mut ChainRng) -> Result<usize> {
        let k = self.filter_length;
        let m = self.mean.len() / k;
        let mut h = state
            .h
            .clone()
            .ok_or_else(|| Error::InvalidParameter("FIR state carries no filter".into()))?;
        let mut cur = ctx.loglik(&state.design)?;
        let mut shrinks = 0;
        for s in 0..m {
            let lo = s * k + 1;
            let n_int = k - 2;
            let current = h.rows(lo, n_int).into_owned();
            let mean = self.mean.rows(lo, n_int).into_owned();
            let nu = &self.interior.chol * standard_normal_vector(n_int, rng);
            let mut f = state.f.clone();
            let mut work = h.clone();
            let out = ess_step(
                &current,
                &mean,
                &nu,
                cur,
                |x| {
                    work.rows_mut(lo, n_int).copy_from(x);
                    let col = self.x_fir.columns(s * k, k) * work.rows(s * k, k);
                    f.set_column(s, &col);
                    ctx.loglik_identified(&f, &self.reference)
                },
                rng,
            )?;
            h.rows_mut(lo, n_int).copy_from(&out.state);
            let col = self.x_fir.columns(s * k, k) * h.rows(s * k, k);
            state.f.set_column(s, &col);
            cur = out.loglik;
            shrinks += out.shrinks;
        }
        state.design = transform(&state.f, &self.reference)?.transformed;
        state.h = Some(h);
        Ok(shrinks)
    }

    fn jitter(&self) -> Vec<f64> {
        vec![self.interior.jitter]
    }
}

pub fn fit_smooth_fir(
    data: &ParcelData,
    spec: &ModelSpec,
    paradigm: &Paradigm,
    fir: &FirSpec,
    parcel_id: &str,
) -> Result<PosteriorDraws> {
    let latent = FirLatent::new(paradigm, fir)?;
    run_chain_with(data, spec, &latent, parcel_id)
}
