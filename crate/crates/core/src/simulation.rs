//! Synthetic parcels with known activity and the study driver that fits them.
//!
//! Each dataset is a single-stimulus block paradigm, AR noise, polynomial
//! trends and a known set of active voxels with unit activation.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ar::simulate_ar;
use crate::baselines::{fit_model, FirSpec, ModelKind};
use crate::error::{Error, Result};
use crate::evaluation::t_ratio;
use crate::kernel::KernelHyper;
use crate::linalg::pearson;
use crate::paradigm::{build_mean_function, Event, HrfParams, MeanFunction, Paradigm};
use crate::rng::rng_from_seed;
use crate::sampler::{ParcelData, PriorConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub n_time: usize,
    pub tr: f64,
    pub presample: usize,
    pub n_voxels: usize,
    pub n_active: usize,
    pub rho: Vec<f64>,
    pub cnr: f64,
    pub block_on: f64,
    pub block_off: f64,
    pub n_blocks: usize,
    /// Coefficient sd for the constant, linear, quadratic and cubic trends.
    pub trend_sd: Vec<f64>,
    pub hrf: HrfParams,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            n_time: 150,
            tr: 1.0,
            presample: 3,
            n_voxels: 100,
            n_active: 20,
            rho: vec![0.4, 0.1, 0.05],
            cnr: 5.0,
            block_on: 15.0,
            block_off: 15.0,
            n_blocks: 5,
            trend_sd: vec![2.0, 1.0, 0.5, 0.25],
            hrf: HrfParams::default(),
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_active > self.n_voxels || self.n_voxels == 0 {
            return Err(Error::InvalidParameter(format!(
                "{} active voxels out of {}",
                self.n_active, self.n_voxels
            )));
        }
        if !(self.cnr > 0.0) {
            return Err(Error::InvalidParameter(format!("CNR must be positive, got {}", self.cnr)));
        }
        if self.rho.len() != self.presample {
            return Err(Error::InvalidParameter(format!(
                "AR order {} must equal the presample length {}",
                self.rho.len(),
                self.presample
            )));
        }
        if self.trend_sd.is_empty() || self.trend_sd.len() > 4 {
            return Err(Error::InvalidParameter("trend_sd needs 1 to 4 entries (constant to cubic)".into()));
        }
        Ok(())
    }

    pub fn paradigm(&self) -> Result<Paradigm> {
        let period = self.block_on + self.block_off;
        let events = (0..self.n_blocks)
            .map(|i| Event {
                onset: i as f64 * period,
                duration: self.block_on,
            })
            .collect();
        Paradigm::new(self.tr, self.n_time, self.presample, vec![events])
    }

    /// Innovation sd given unit activation.
    pub fn noise_sd(&self) -> f64 {
        1.0 / self.cnr
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationTruth {
    pub active_mask: Vec<bool>,
    /// M×J.
    pub true_b: Vec<Vec<f64>>,
    pub true_rho: Vec<f64>,
    /// One T★-length column per stimulus, sup-norm 1.
    pub true_bold: Vec<Vec<f64>>,
    /// P×J.
    pub trend_coeffs: Vec<Vec<f64>>,
    pub cnr: f64,
    pub noise_sd: f64,
}

impl SimulationTruth {
    pub fn true_bold_matrix(&self) -> DMatrix<f64> {
        let n = self.true_bold.first().map_or(0, |c| c.len());
        DMatrix::from_fn(n, self.true_bold.len(), |i, m| self.true_bold[m][i])
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        serde_json::from_str(&std::fs::read_to_string(path)?).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

/// Legendre P₀…P₃ over 𝒯★ mapped to [−1, 1]; the non-constant columns are
/// standardized to zero mean and unit variance.
pub fn trend_regressors(n_total: usize, n_terms: usize) -> DMatrix<f64> {
    let mut z = DMatrix::zeros(n_total, n_terms);
    for i in 0..n_total {
        let x = if n_total > 1 { -1.0 + 2.0 * i as f64 / (n_total - 1) as f64 } else { 0.0 };
        let p = [1.0, x, 0.5 * (3.0 * x * x - 1.0), 0.5 * (5.0 * x * x * x - 3.0 * x)];
        for c in 0..n_terms {
            z[(i, c)] = p[c];
        }
    }
    for c in 1..n_terms {
        let mut col = z.column_mut(c);
        let mean = col.mean();
        col.add_scalar_mut(-mean);
        let sd = col.variance().sqrt();
        col /= sd;
    }
    z
}

/// The noise-free predicted BOLD of `config`'s paradigm, scaled to sup-norm 1.
pub fn true_bold(config: &DatasetConfig) -> Result<DMatrix<f64>> {
    let mut f = build_mean_function(&config.paradigm()?, &config.hrf, false)?.values;
    for mut col in f.column_iter_mut() {
        let sup = col.amax();
        if !(sup > 0.0) {
            return Err(Error::DegenerateInput("the paradigm produces no BOLD response".into()));
        }
        col /= sup;
    }
    Ok(f)
}

pub fn generate_dataset<R: Rng + ?Sized>(config: &DatasetConfig, rng: &mut R) -> Result<(ParcelData, SimulationTruth)> {
    config.validate()?;
    let bold = true_bold(config)?;
    let n = bold.nrows();
    let (j, m) = (config.n_voxels, bold.ncols());
    let mut active = vec![false; j];
    for idx in sample_indices(rng, j, config.n_active) {
        active[idx] = true;
    }
    let b = DMatrix::from_fn(m, j, |_, v| if active[v] { 1.0 } else { 0.0 });
    let z = trend_regressors(n, config.trend_sd.len());
    let gamma = DMatrix::from_fn(config.trend_sd.len(), j, |p, _| {
        config.trend_sd[p] * rng.sample::<f64, _>(StandardNormal)
    });
    let sd = config.noise_sd();
    let mut y = &bold * &b + &z * &gamma;
    for v in 0..j {
        let u = simulate_ar(&config.rho, sd, n, rng)?;
        let mut col = y.column_mut(v);
        col += u;
    }
    let data = ParcelData::new(y, z, config.presample)?;
    let truth = SimulationTruth {
        active_mask: active,
        true_b: b.row_iter().map(|r| r.iter().copied().collect()).collect(),
        true_rho: config.rho.clone(),
        true_bold: bold.column_iter().map(|c| c.iter().copied().collect()).collect(),
        trend_coeffs: gamma.row_iter().map(|r| r.iter().copied().collect()).collect(),
        cnr: config.cnr,
        noise_sd: sd,
    };
    Ok((data, truth))
}

fn standardized(v: &DVector<f64>) -> Result<DVector<f64>> {
    let mean = v.mean();
    let sd = v.variance().sqrt();
    if !(sd > 0.0) {
        return Err(Error::DegenerateInput("cannot standardize a constant signal".into()));
    }
    Ok(v.map(|x| (x - mean) / sd))
}

#[derive(Clone, Debug)]
pub struct ErroneousMean {
    pub mean: MeanFunction,
    pub alpha: f64,
    pub achieved: f64,
    /// (α, correlation) at every bisection step.
    pub trace: Vec<(f64, f64)>,
}

/// A standardized prior mean whose correlation with `true_bold` is
/// `target_corr`, built as the blend α·truth + (1 − α)·g of the standardized
/// truth and a standardized mis-timed response `g`. α is found by bisection.
pub fn make_erroneous_mean(true_bold: &DVector<f64>, mistimed: &DVector<f64>, target_corr: f64) -> Result<ErroneousMean> {
    if !(target_corr > 0.0 && target_corr <= 1.0) {
        return Err(Error::InvalidParameter(format!("target correlation must lie in (0, 1], got {target_corr}")));
    }
    let t = standardized(true_bold)?;
    let g = standardized(mistimed)?;
    let corr_at = |alpha: f64| -> Result<(DVector<f64>, f64)> {
        let blend = standardized(&(&t * alpha + &g * (1.0 - alpha)))?;
        let c = pearson(blend.as_slice(), t.as_slice())
            .ok_or_else(|| Error::DegenerateInput("blend has zero variance".into()))?;
        Ok((blend, c))
    };
    let wrap = |v: DVector<f64>| MeanFunction {
        values: DMatrix::from_column_slice(v.len(), 1, v.as_slice()),
        standardized: true,
    };
    if target_corr == 1.0 {
        return Ok(ErroneousMean {
            mean: wrap(t),
            alpha: 1.0,
            achieved: 1.0,
            trace: vec![(1.0, 1.0)],
        });
    }
    let (_, c_lo) = corr_at(0.0)?;
    if c_lo >= target_corr {
        return Err(Error::Numerical(format!(
            "bisection cannot reach correlation {target_corr}: the mis-timed response already correlates {c_lo:.4} with the truth"
        )));
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    let mut trace = vec![(0.0, c_lo)];
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        let (_, c) = corr_at(mid)?;
        trace.push((mid, c));
        if (c - target_corr).abs() < 1e-10 {
            break;
        }
        if c < target_corr {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let alpha = trace.last().map_or(0.0, |p| p.0);
    let (blend, achieved) = corr_at(alpha)?;
    if (achieved - target_corr).abs() > 0.005 {
        return Err(Error::Numerical(format!(
            "bisection ended at correlation {achieved:.4}, target {target_corr}"
        )));
    }
    Ok(ErroneousMean {
        mean: wrap(blend),
        alpha,
        achieved,
        trace,
    })
}

/// Peak delay of the mis-timed response in the erroneous prior mean.
pub const MISTIMED_PEAK_DELAY: f64 = 12.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanMode {
    Correct,
    Erroneous,
}

/// The GP prior mean for a dataset: the standardized truth, or the blend with
/// correlation `target_corr`.
pub fn prior_mean(config: &DatasetConfig, mode: MeanMode, target_corr: f64) -> Result<MeanFunction> {
    let truth = true_bold(config)?;
    let t = truth.column(0).into_owned();
    match mode {
        MeanMode::Correct => make_erroneous_mean(&t, &t, 1.0).map(|e| e.mean),
        MeanMode::Erroneous => {
            let hrf = HrfParams {
                peak_delay: MISTIMED_PEAK_DELAY,
                ..config.hrf
            };
            let g = build_mean_function(&config.paradigm()?, &hrf, false)?.values.column(0).into_owned();
            Ok(make_erroneous_mean(&t, &g, target_corr)?.mean)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    pub n_datasets: usize,
    pub cnr: Vec<f64>,
    pub lengthscale: Vec<f64>,
    pub mean_mode: Vec<MeanMode>,
    pub target_corr: f64,
    /// Kernel variance ω².
    pub variance: f64,
    pub models: Vec<ModelKind>,
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub prior: PriorConfig,
    pub fir: FirSpec,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            n_datasets: 32,
            cnr: vec![5.0, 7.0],
            lengthscale: vec![2.0, 4.0],
            mean_mode: vec![MeanMode::Correct, MeanMode::Erroneous],
            target_corr: 0.615,
            variance: 0.1,
            models: vec![ModelKind::Gp, ModelKind::Fixed],
            seed: 0,
            dataset: DatasetConfig::default(),
            prior: PriorConfig::default(),
            fir: FirSpec::default(),
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_datasets == 0 {
            return Err(Error::InvalidParameter("n_datasets must be at least 1".into()));
        }
        if self.cnr.is_empty() || self.lengthscale.is_empty() || self.mean_mode.is_empty() || self.models.is_empty() {
            return Err(Error::InvalidParameter("cnr, lengthscale, mean_mode and models must be non-empty".into()));
        }
        self.dataset.validate()?;
        self.prior.sampler.validate()
    }

    /// Seed of dataset `index` at CNR position `cnr_index`. Datasets are shared
    /// across lengthscales, mean modes and models.
    pub fn dataset_seed(&self, cnr_index: usize, index: usize) -> u64 {
        self.seed
            .wrapping_add((cnr_index as u64).wrapping_mul(1_000_003))
            .wrapping_add(index as u64)
    }

    /// The datasets of the study, in (cnr, index) order.
    pub fn datasets(&self) -> Vec<DatasetSpec> {
        let mut out = Vec::new();
        for (ci, &cnr) in self.cnr.iter().enumerate() {
            for i in 0..self.n_datasets {
                out.push(DatasetSpec {
                    id: format!("cnr{cnr}_d{i:03}"),
                    config: DatasetConfig {
                        cnr,
                        ..self.dataset.clone()
                    },
                    seed: self.dataset_seed(ci, i),
                });
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub id: String,
    pub config: DatasetConfig,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn generate(&self) -> Result<(ParcelData, SimulationTruth)> {
        generate_dataset(&self.config, &mut rng_from_seed(self.seed))
    }
}

/// One fitted model on one dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyRecord {
    pub dataset_id: String,
    pub cnr: f64,
    pub lengthscale: f64,
    pub mean_mode: MeanMode,
    pub model: ModelKind,
    pub seed: u64,
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub t_values: Vec<f64>,
    pub truth: Vec<bool>,
}

/// One fit job of the study grid.
#[derive(Clone, Debug)]
pub struct FitJob {
    pub dataset: DatasetSpec,
    pub lengthscale: f64,
    pub mean_mode: MeanMode,
    pub model: ModelKind,
}

impl StudyConfig {
    /// All fits in a stable order: dataset, then mean mode, lengthscale, model.
    /// Models whose prior does not involve the GP kernel are fitted once per
    /// dataset and mean mode, at the first lengthscale.
    pub fn jobs(&self) -> Vec<FitJob> {
        let mut jobs = Vec::new();
        for ds in self.datasets() {
            for &mode in &self.mean_mode {
                for (li, &l) in self.lengthscale.iter().enumerate() {
                    for &model in &self.models {
                        if li > 0 && !model.uses_kernel() {
                            continue;
                        }
                        jobs.push(FitJob {
                            dataset: ds.clone(),
                            lengthscale: l,
                            mean_mode: mode,
                            model,
                        });
                    }
                }
            }
        }
        jobs
    }

    pub fn run_job(&self, job: &FitJob) -> Result<StudyRecord> {
        let (data, truth) = job.dataset.generate()?;
        let f0 = prior_mean(&job.dataset.config, job.mean_mode, self.target_corr)?.values;
        let mut prior = self.prior.clone();
        prior.sampler.seed = job.dataset.seed;
        let spec = prior.build(f0, vec![KernelHyper::new(job.lengthscale, self.variance)], &data)?;
        let paradigm = job.dataset.config.paradigm()?;
        let draws = fit_model(job.model, &data, &spec, &paradigm, &self.fir, &job.dataset.id)?;
        let t_values = (0..data.n_voxels())
            .map(|v| t_ratio(&draws.b_draws(0, v), 0.0))
            .collect::<Result<Vec<_>>>()?;
        Ok(StudyRecord {
            dataset_id: job.dataset.id.clone(),
            cnr: job.dataset.config.cnr,
            lengthscale: job.lengthscale,
            mean_mode: job.mean_mode,
            model: job.model,
            seed: job.dataset.seed,
            n_iter: spec.sampler.n_iter,
            burn_in: spec.sampler.burn_in,
            thin: spec.sampler.thin,
            t_values,
            truth: truth.active_mask,
        })
    }
}

/// Fits every job of the study in parallel on the current rayon pool. The
/// output order follows [`StudyConfig::jobs`] regardless of scheduling.
pub fn run_study(config: &StudyConfig) -> Result<Vec<StudyRecord>> {
    config.validate()?;
    config.jobs().par_iter().map(|job| config.run_job(job)).collect()
}

/// Long format: dataset_id, cnr, lengthscale, mean_mode, model, voxel, t_value, truth_active.
pub fn write_study_csv(records: &[StudyRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["dataset_id", "cnr", "lengthscale", "mean_mode", "model", "voxel", "t_value", "truth_active"])?;
    for r in records {
        let mode = serde_json::to_value(r.mean_mode)?.as_str().unwrap_or_default().to_string();
        for (v, (t, a)) in r.t_values.iter().zip(&r.truth).enumerate() {
            w.write_record([
                r.dataset_id.clone(),
                format!("{}", r.cnr),
                format!("{}", r.lengthscale),
                mode.clone(),
                r.model.as_str().to_string(),
                v.to_string(),
                format!("{t}"),
                (*a as u8).to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_shape_and_counts() {
        let cfg = DatasetConfig::default();
        let (data, truth) = generate_dataset(&cfg, &mut rng_from_seed(1)).unwrap();
        assert_eq!(data.y.shape(), (153, 100));
        assert_eq!(data.z.shape(), (153, 4));
        assert_eq!(truth.active_mask.iter().filter(|&&a| a).count(), 20);
        assert_eq!(truth.noise_sd, 0.2);
        let seven = DatasetConfig { cnr: 7.0, ..cfg };
        assert_eq!(seven.noise_sd(), 1.0 / 7.0);
    }

    #[test]
    fn same_seed_same_data_other_seed_other_mask() {
        let cfg = DatasetConfig::default();
        let (a, ta) = generate_dataset(&cfg, &mut rng_from_seed(5)).unwrap();
        let (b, tb) = generate_dataset(&cfg, &mut rng_from_seed(5)).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        let (_, tc) = generate_dataset(&cfg, &mut rng_from_seed(6)).unwrap();
        assert_ne!(ta.active_mask, tc.active_mask);
        assert_eq!(tc.active_mask.iter().filter(|&&x| x).count(), 20);
    }

    #[test]
    fn noise_free_regression_recovers_b() {
        let cfg = DatasetConfig {
            cnr: 1e300,
            trend_sd: vec![0.0, 0.0, 0.0, 0.0],
            ..DatasetConfig::default()
        };
        let (data, truth) = generate_dataset(&cfg, &mut rng_from_seed(2)).unwrap();
        let x = truth.true_bold_matrix();
        let b = x.clone().svd(true, true).solve(&data.y, 1e-12).unwrap();
        for v in 0..100 {
            assert!((b[(0, v)] - truth.true_b[0][v]).abs() < 1e-12);
        }
    }

    #[test]
    fn trends_are_standardized() {
        let z = trend_regressors(153, 4);
        assert!(z.column(0).iter().all(|&v| v == 1.0));
        for c in 1..4 {
            assert!(z.column(c).mean().abs() < 1e-12);
            assert!((z.column(c).variance() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn block_paradigm_layout() {
        let p = DatasetConfig::default().paradigm().unwrap();
        let u = p.indicator(0);
        assert_eq!(u.len(), 153);
        assert_eq!(u.iter().sum::<f64>(), 75.0);
        assert_eq!(u[3], 1.0);
        assert_eq!(u[3 + 15], 0.0);
        assert_eq!(u[3 + 30], 1.0);
    }

    #[test]
    fn erroneous_mean_hits_target() {
        let cfg = DatasetConfig::default();
        let mean = prior_mean(&cfg, MeanMode::Erroneous, 0.615).unwrap().values;
        let t = true_bold(&cfg).unwrap();
        let c = pearson(mean.column(0).as_slice(), t.column(0).as_slice()).unwrap();
        assert!((0.610..=0.620).contains(&c), "{c}");
        let col = mean.column(0);
        assert!(col.mean().abs() < 1e-12);
        assert!((col.variance() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bisection_trace_is_monotone() {
        let cfg = DatasetConfig::default();
        let t = true_bold(&cfg).unwrap().column(0).into_owned();
        let hrf = HrfParams {
            peak_delay: MISTIMED_PEAK_DELAY,
            ..cfg.hrf
        };
        let g = build_mean_function(&cfg.paradigm().unwrap(), &hrf, false).unwrap().values.column(0).into_owned();
        let e = make_erroneous_mean(&t, &g, 0.615).unwrap();
        let mut pts = e.trace.clone();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in pts.windows(2) {
            assert!(w[1].1 >= w[0].1);
        }
        assert!((e.achieved - 0.615).abs() < 1e-6);
    }

    #[test]
    fn target_one_returns_truth() {
        let cfg = DatasetConfig::default();
        let t = true_bold(&cfg).unwrap().column(0).into_owned();
        let e = make_erroneous_mean(&t, &t, 1.0).unwrap();
        assert_eq!(e.alpha, 1.0);
        let c = pearson(e.mean.values.as_slice(), t.as_slice()).unwrap();
        assert!((c - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unreachable_target_is_an_error() {
        let cfg = DatasetConfig::default();
        let t = true_bold(&cfg).unwrap().column(0).into_owned();
        assert!(make_erroneous_mean(&t, &t, 0.5).is_err());
        assert!(make_erroneous_mean(&t, &t, 0.0).is_err());
    }

    #[test]
    fn grid_bookkeeping() {
        let cfg = StudyConfig {
            n_datasets: 2,
            cnr: vec![5.0],
            lengthscale: vec![4.0],
            mean_mode: vec![MeanMode::Erroneous],
            ..StudyConfig::default()
        };
        assert_eq!(cfg.jobs().len(), 4);
        let two_l = StudyConfig {
            lengthscale: vec![2.0, 4.0],
            ..cfg.clone()
        };
        // The fixed model does not depend on the lengthscale.
        assert_eq!(two_l.jobs().len(), 6);
    }
}
