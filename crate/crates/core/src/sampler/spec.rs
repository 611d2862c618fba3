use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::data::ParcelData;
use crate::ar::ArPrior;
use crate::error::{Error, Result};
use crate::kernel::KernelHyper;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerSettings {
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
}

impl Default for SamplerSettings {
    fn default() -> Self {
        SamplerSettings {
            n_iter: 4000,
            burn_in: 1000,
            thin: 3,
            seed: 0,
        }
    }
}

impl SamplerSettings {
    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 {
            return Err(Error::InvalidParameter("thin must be at least 1".into()));
        }
        if self.n_iter <= self.burn_in {
            return Err(Error::InvalidParameter(format!(
                "n_iter ({}) must exceed burn_in ({})",
                self.n_iter, self.burn_in
            )));
        }
        Ok(())
    }

    /// Sweep `i` (0-based) is kept when it is past burn-in and completes a
    /// block of `thin` sweeps.
    pub fn is_retained(&self, i: usize) -> bool {
        i >= self.burn_in && (i - self.burn_in + 1) % self.thin == 0
    }

    pub fn retained_count(&self) -> usize {
        (self.n_iter - self.burn_in) / self.thin
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RidgePenalty {
    /// Shared penalty picked by generalized cross-validation over a log grid.
    Gcv,
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InitSettings {
    pub ridge: RidgePenalty,
    /// Stop once the mean squared error changes by less than this.
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for InitSettings {
    fn default() -> Self {
        InitSettings {
            ridge: RidgePenalty::Gcv,
            tolerance: 0.01,
            max_iter: 100,
        }
    }
}

/// All prior hyperparameters and sampler settings for one parcel.
///
/// The coefficient prior is Q = (B; Γ) | Ω ~ MN(Q₀, Ω ⊗ P_Q⁻¹) with
/// P_Q = diag(κP, diag(τ)). A zero τ entry leaves that nuisance row flat.
#[derive(Clone, Debug)]
pub struct ModelSpec {
    /// Prior mean of F on 𝒯★, T★×M.
    pub f0: DMatrix<f64>,
    pub kernels: Vec<KernelHyper>,
    pub b0: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub kappa: f64,
    pub gamma0: DMatrix<f64>,
    /// Prior precision scale per nuisance row.
    pub tau: DVector<f64>,
    pub c0: f64,
    pub d0: f64,
    pub ar: ArPrior,
    pub sampler: SamplerSettings,
    /// Adds the coefficient prior's contribution to the σ² conditional.
    /// Off by default, which gives InvGamma(c₀ + T/2, d₀ + ½‖ỹ − X̃q‖²).
    pub sigma2_includes_coef_prior: bool,
    pub init: InitSettings,
}

impl ModelSpec {
    pub fn n_stimuli(&self) -> usize {
        self.f0.ncols()
    }

    /// Checks the spec against itself and against `data`.
    pub fn validate(&self, data: &ParcelData) -> Result<()> {
        data.validate()?;
        self.sampler.validate()?;
        self.ar.validate()?;
        let m = self.n_stimuli();
        let (j, p) = (data.n_voxels(), data.n_nuisance());
        if m == 0 {
            return Err(Error::InvalidParameter("at least one stimulus is required".into()));
        }
        if self.f0.nrows() != data.n_total() {
            return Err(Error::Shape(format!(
                "prior mean has {} rows, data have {}",
                self.f0.nrows(),
                data.n_total()
            )));
        }
        if self.kernels.len() != m {
            return Err(Error::Shape(format!("{} kernels for {m} stimuli", self.kernels.len())));
        }
        for k in &self.kernels {
            k.validate()?;
        }
        if self.ar.order() != data.presample {
            return Err(Error::Shape(format!(
                "AR order {} must equal the presample length {}",
                self.ar.order(),
                data.presample
            )));
        }
        let mb = self.b0.nrows();
        if self.b0.ncols() != j || self.p.shape() != (mb, mb) {
            return Err(Error::Shape(format!(
                "B₀ is {:?} and P is {:?}; expected {mb}×{j} and {mb}×{mb}",
                self.b0.shape(),
                self.p.shape()
            )));
        }
        if self.gamma0.shape() != (p, j) || self.tau.len() != p {
            return Err(Error::Shape(format!(
                "Γ₀ is {:?} with {} τ entries; expected {p}×{j} and {p}",
                self.gamma0.shape(),
                self.tau.len()
            )));
        }
        if !(self.kappa >= 0.0) || self.tau.iter().any(|t| !(*t >= 0.0)) {
            return Err(Error::InvalidParameter("κ and τ must be non-negative".into()));
        }
        if mb > 0 && nalgebra::Cholesky::new(self.p.clone()).is_none() {
            return Err(Error::InvalidParameter("P must be positive definite".into()));
        }
        if !(self.c0 >= 0.0 && self.d0 >= 0.0) {
            return Err(Error::InvalidParameter("c₀ and d₀ must be non-negative".into()));
        }
        Ok(())
    }

    /// P_Q = diag(κP, diag(τ)).
    pub fn coef_precision(&self) -> DMatrix<f64> {
        let mb = self.b0.nrows();
        let p = self.tau.len();
        let mut pq = DMatrix::zeros(mb + p, mb + p);
        pq.view_mut((0, 0), (mb, mb)).copy_from(&(&self.p * self.kappa));
        for (i, t) in self.tau.iter().enumerate() {
            pq[(mb + i, mb + i)] = *t;
        }
        pq
    }

    /// Q₀ = (B₀; Γ₀).
    pub fn coef_mean(&self) -> DMatrix<f64> {
        let mb = self.b0.nrows();
        let p = self.gamma0.nrows();
        let mut q0 = DMatrix::zeros(mb + p, self.b0.ncols());
        q0.rows_mut(0, mb).copy_from(&self.b0);
        q0.rows_mut(mb, p).copy_from(&self.gamma0);
        q0
    }

    /// A copy with the activation prior widened to `mb` rows, the extra rows
    /// getting zero mean and the first-row precision.
    pub fn with_basis_rows(&self, mb: usize) -> ModelSpec {
        let m = self.b0.nrows();
        let j = self.b0.ncols();
        let mut out = self.clone();
        out.b0 = DMatrix::from_fn(mb, j, |r, c| if r < m { self.b0[(r, c)] } else { 0.0 });
        out.p = DMatrix::from_fn(mb, mb, |r, c| {
            if r < m && c < m {
                self.p[(r, c)]
            } else if r == c {
                self.p[(0, 0)]
            } else {
                0.0
            }
        });
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArPriorConfig {
    pub r: f64,
    pub c2: f64,
    pub zeta: f64,
}

impl Default for ArPriorConfig {
    fn default() -> Self {
        ArPriorConfig {
            r: 0.0,
            c2: 0.5,
            zeta: 5.0,
        }
    }
}

/// The scalar prior settings a config file carries. `build` turns them into a
/// full [`ModelSpec`] for a particular parcel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorConfig {
    pub kappa: f64,
    /// Diagonal of P; defaults to ones.
    pub p_diag: Option<Vec<f64>>,
    pub b0: f64,
    pub tau: f64,
    /// Constant nuisance columns get an empirical prior centered on the voxel
    /// mean with variance this multiple of σ_j². `None` leaves them at τ.
    pub constant_variance_factor: Option<f64>,
    pub c0: f64,
    pub d0: f64,
    pub ar: ArPriorConfig,
    pub sampler: SamplerSettings,
    pub sigma2_includes_coef_prior: bool,
    pub init: InitSettings,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            kappa: 1e-10,
            p_diag: None,
            b0: 0.0,
            tau: 0.0,
            constant_variance_factor: Some(4.0),
            c0: 0.0,
            d0: 0.0,
            ar: ArPriorConfig::default(),
            sampler: SamplerSettings::default(),
            sigma2_includes_coef_prior: false,
            init: InitSettings::default(),
        }
    }
}

/// Indices of nuisance columns that are constant and nonzero.
pub fn constant_columns(z: &DMatrix<f64>) -> Vec<usize> {
    (0..z.ncols())
        .filter(|&c| {
            let col = z.column(c);
            col[0] != 0.0 && col.iter().all(|v| *v == col[0])
        })
        .collect()
}

impl PriorConfig {
    pub fn build(&self, f0: DMatrix<f64>, kernels: Vec<KernelHyper>, data: &ParcelData) -> Result<ModelSpec> {
        let m = f0.ncols();
        let (j, p) = (data.n_voxels(), data.n_nuisance());
        let p_diag = match &self.p_diag {
            Some(d) if d.len() != m => {
                return Err(Error::Shape(format!("P diagonal has {} entries for {m} stimuli", d.len())));
            }
            Some(d) => DVector::from_column_slice(d),
            None => DVector::from_element(m, 1.0),
        };
        let mut gamma0 = DMatrix::zeros(p, j);
        let mut tau = DVector::from_element(p, self.tau);
        if let Some(factor) = self.constant_variance_factor {
            if !(factor > 0.0) {
                return Err(Error::InvalidParameter("constant_variance_factor must be positive".into()));
            }
            for c in constant_columns(&data.z) {
                let level = data.z[(0, c)];
                for v in 0..j {
                    gamma0[(c, v)] = data.y.column(v).mean() / level;
                }
                tau[c] = level * level / factor;
            }
        }
        let spec = ModelSpec {
            f0,
            kernels,
            b0: DMatrix::from_element(m, j, self.b0),
            p: DMatrix::from_diagonal(&p_diag),
            kappa: self.kappa,
            gamma0,
            tau,
            c0: self.c0,
            d0: self.d0,
            ar: ArPrior::centered(data.presample, self.ar.r, self.ar.c2, self.ar.zeta)?,
            sampler: self.sampler.clone(),
            sigma2_includes_coef_prior: self.sigma2_includes_coef_prior,
            init: self.init.clone(),
        };
        spec.validate(data)?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_arithmetic() {
        let s = SamplerSettings {
            n_iter: 4000,
            burn_in: 1000,
            thin: 3,
            seed: 0,
        };
        assert_eq!(s.retained_count(), 1000);
        assert_eq!((0..4000).filter(|&i| s.is_retained(i)).count(), 1000);
        let s = SamplerSettings {
            n_iter: 9000,
            burn_in: 3000,
            thin: 6,
            seed: 0,
        };
        assert_eq!(s.retained_count(), 1000);
        assert_eq!((0..9000).filter(|&i| s.is_retained(i)).count(), 1000);
    }

    #[test]
    fn settings_validation() {
        let mut s = SamplerSettings::default();
        s.thin = 0;
        assert!(s.validate().is_err());
        let s = SamplerSettings {
            n_iter: 10,
            burn_in: 10,
            thin: 1,
            seed: 0,
        };
        assert!(s.validate().is_err());
    }

    #[test]
    fn build_sets_constant_prior() {
        let y = DMatrix::from_fn(8, 2, |i, j| 10.0 * (j + 1) as f64 + i as f64);
        let z = DMatrix::from_fn(8, 2, |i, c| if c == 0 { 1.0 } else { i as f64 - 3.5 });
        let data = ParcelData::new(y, z, 1).unwrap();
        let f0 = DMatrix::from_fn(8, 1, |i, _| (i as f64).sin());
        let spec = PriorConfig::default()
            .build(f0, vec![KernelHyper::new(4.0, 0.1)], &data)
            .unwrap();
        assert_eq!(spec.tau.as_slice(), &[0.25, 0.0]);
        assert_eq!(spec.gamma0[(0, 0)], 13.5);
        assert_eq!(spec.gamma0[(0, 1)], 23.5);
        assert_eq!(spec.gamma0[(1, 0)], 0.0);
        let pq = spec.coef_precision();
        assert_eq!(pq[(0, 0)], 1e-10);
        assert_eq!(pq[(1, 1)], 0.25);
        assert_eq!(pq[(2, 2)], 0.0);
    }

    #[test]
    fn ar_order_must_match_presample() {
        let data = ParcelData::new(DMatrix::zeros(8, 1), DMatrix::from_element(8, 1, 1.0), 2).unwrap();
        let mut spec = PriorConfig::default()
            .build(DMatrix::zeros(8, 1), vec![KernelHyper::new(4.0, 0.1)], &data)
            .unwrap();
        spec.ar = ArPrior::centered(3, 0.0, 0.5, 5.0).unwrap();
        assert!(matches!(spec.validate(&data), Err(Error::Shape(_))));
    }
}
