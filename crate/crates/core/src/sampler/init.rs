//! Starting values: F at its prior mean, then Cochrane–Orcutt iterations
//! alternating a ridge fit of (B; Γ) on pre-whitened data with a regularized
//! pooled AR fit on the residuals.

use nalgebra::{DMatrix, DVector};

use super::conditionals::rho_conditional;
use super::data::ParcelData;
use super::latent::LatentState;
use super::spec::{constant_columns, ModelSpec, RidgePenalty};
use super::ChainState;
use crate::ar::{is_stationary, prewhiten_columns};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct InitReport {
    pub state: ChainState,
    pub ridge_penalty: f64,
    pub iterations: usize,
    pub converged: bool,
    pub mse_trace: Vec<f64>,
}

/// [design | Z★].
pub fn full_design(design: &DMatrix<f64>, z: &DMatrix<f64>) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(design.nrows(), design.ncols() + z.ncols());
    x.columns_mut(0, design.ncols()).copy_from(design);
    x.columns_mut(design.ncols(), z.ncols()).copy_from(z);
    x
}

struct RidgeFit {
    q: DMatrix<f64>,
    rss: f64,
    df: f64,
}

fn ridge(xtx: &DMatrix<f64>, xty: &DMatrix<f64>, xt: &DMatrix<f64>, yt: &DMatrix<f64>, penalty: &DVector<f64>, lambda: f64) -> Option<RidgeFit> {
    let a = xtx + DMatrix::from_diagonal(&(penalty * lambda));
    let chol = nalgebra::Cholesky::new(a)?;
    let q = chol.solve(xty);
    let rss = (yt - xt * &q).norm_squared();
    let df = chol.solve(xtx).trace();
    Some(RidgeFit { q, rss, df })
}

/// Ridge fit with a penalty shared by all voxels. Constant columns are left
/// unpenalized. Returns the coefficients and the penalty used.
fn ridge_fit(xt: &DMatrix<f64>, yt: &DMatrix<f64>, penalty: &DVector<f64>, choice: RidgePenalty) -> Result<(DMatrix<f64>, f64)> {
    let xtx = xt.tr_mul(xt);
    let xty = xt.tr_mul(yt);
    let fail = |l: f64| Error::Numerical(format!("ridge system singular at penalty {l:e}"));
    match choice {
        RidgePenalty::Fixed(l) => {
            if !(l >= 0.0) {
                return Err(Error::InvalidParameter(format!("ridge penalty must be non-negative, got {l}")));
            }
            let fit = ridge(&xtx, &xty, xt, yt, penalty, l).ok_or_else(|| fail(l))?;
            Ok((fit.q, l))
        }
        RidgePenalty::Gcv => {
            let n = xt.nrows() as f64;
            let scale = (xtx.trace() / xtx.nrows() as f64).max(f64::MIN_POSITIVE);
            let grid = std::iter::once(0.0).chain((0..=40).map(|i| scale * 10f64.powf(-6.0 + 0.25 * i as f64)));
            let mut best: Option<(f64, f64, DMatrix<f64>)> = None;
            for l in grid {
                let Some(fit) = ridge(&xtx, &xty, xt, yt, penalty, l) else { continue };
                if fit.df >= n {
                    continue;
                }
                let gcv = n * fit.rss / (n - fit.df).powi(2);
                if best.as_ref().is_none_or(|(g, _, _)| gcv < *g) {
                    best = Some((gcv, l, fit.q));
                }
            }
            let (_, l, q) = best.ok_or_else(|| fail(f64::NAN))?;
            Ok((q, l))
        }
    }
}

fn mean_square(m: &DMatrix<f64>) -> f64 {
    m.norm_squared() / m.len() as f64
}

/// Regularized pooled AR fit, pulled toward zero until stationary.
fn fit_rho(u: &DMatrix<f64>, rho: &[f64], spec: &ModelSpec) -> Result<DVector<f64>> {
    let e = prewhiten_columns(u, rho)?;
    let floor = 1e-12 * mean_square(u).max(1e-300);
    let s2 = DVector::from_iterator(e.ncols(), e.column_iter().map(|c| (c.norm_squared() / c.len() as f64).max(floor)));
    let mut next = rho_conditional(u, &s2, &spec.ar)?.mean;
    while !is_stationary(next.as_slice()) {
        next *= 0.9;
    }
    Ok(next)
}

/// Starting state for a chain whose latent block starts at `latent`.
pub fn initialize_with(data: &ParcelData, spec: &ModelSpec, latent: LatentState) -> Result<InitReport> {
    let x = full_design(&latent.design, &data.z);
    let mb = latent.design.ncols();
    let constant = constant_columns(&data.z);
    let penalty = DVector::from_fn(x.ncols(), |c, _| if c >= mb && constant.contains(&(c - mb)) { 0.0 } else { 1.0 });
    let k = data.presample;
    let mut rho = DVector::zeros(k);
    let mut prev = f64::INFINITY;
    let mut trace = Vec::new();
    let mut q = DMatrix::zeros(x.ncols(), data.n_voxels());
    let mut lambda = 0.0;
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=spec.init.max_iter.max(1) {
        iterations = it;
        let yt = prewhiten_columns(&data.y, rho.as_slice())?;
        let xt = prewhiten_columns(&x, rho.as_slice())?;
        (q, lambda) = ridge_fit(&xt, &yt, &penalty, spec.init.ridge)?;
        let u = &data.y - &x * &q;
        rho = fit_rho(&u, rho.as_slice(), spec)?;
        let mse = mean_square(&prewhiten_columns(&u, rho.as_slice())?);
        trace.push(mse);
        if (mse - prev).abs() < spec.init.tolerance {
            converged = true;
            break;
        }
        prev = mse;
    }
    if !converged {
        log::warn!(
            "initialization did not converge in {iterations} iterations; using the last iterate"
        );
    }
    let e = prewhiten_columns(&(&data.y - &x * &q), rho.as_slice())?;
    let floor = 1e-12 * mean_square(&data.y).max(1e-300);
    let sigma2 = DVector::from_iterator(e.ncols(), e.column_iter().map(|c| (c.norm_squared() / c.len() as f64).max(floor)));
    let state = ChainState {
        b: q.rows(0, mb).into_owned(),
        gamma: q.rows(mb, data.n_nuisance()).into_owned(),
        latent,
        sigma2,
        rho,
    };
    Ok(InitReport {
        state,
        ridge_penalty: lambda,
        iterations,
        converged,
        mse_trace: trace,
    })
}
