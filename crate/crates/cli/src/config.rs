use std::path::{Path, PathBuf};

use gpbold::baselines::{FirSpec, ModelKind};
use gpbold::kernel::{KernelConfig, KernelHyper};
use gpbold::paradigm::HrfParams;
use gpbold::sampler::PriorConfig;
use gpbold::simulation::StudyConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Where the GP prior mean of a parcel comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanSource {
    /// A T★×M CSV, looked up in the parcel directory first.
    Csv(PathBuf),
    /// Convolve the parcel's paradigm with a double-gamma HRF.
    Hrf {
        #[serde(default)]
        params: HrfParams,
        #[serde(default = "yes")]
        standardize: bool,
    },
}

fn yes() -> bool {
    true
}

impl Default for MeanSource {
    fn default() -> Self {
        MeanSource::Hrf {
            params: HrfParams::default(),
            standardize: true,
        }
    }
}

/// A set of fitted draws to evaluate under a label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitRef {
    pub label: String,
    pub draws: PathBuf,
}

/// One JSON file drives every subcommand; each reads the fields it needs.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,

    /// simulate: the study design.
    pub study: Option<StudyConfig>,

    /// fit / evaluate: a parcel directory, or a directory of parcel directories.
    pub data: Option<PathBuf>,
    /// fit: paradigm JSON, looked up in the parcel directory first.
    pub paradigm: Option<PathBuf>,
    pub prior_mean: MeanSource,
    /// One entry, shared by all stimuli, or one per stimulus.
    pub kernels: Vec<KernelConfig>,
    pub model: Option<ModelKind>,
    pub prior: PriorConfig,
    pub fir: FirSpec,

    /// evaluate: draws to compare.
    pub fits: Vec<FitRef>,
    pub effect_threshold: f64,
    pub thresholds: Option<Vec<f64>>,
}

impl RunConfig {
    /// Reads the config and makes its relative paths relative to the file.
    pub fn load(path: &Path) -> Result<(Self, PathBuf), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((cfg, base))
    }

    pub fn kernel_hypers(&self, n_stimuli: usize) -> Result<Vec<KernelHyper>, CliError> {
        let hypers = if self.kernels.is_empty() {
            vec![KernelHyper::new(4.0, 0.1)]
        } else {
            self.kernels
                .iter()
                .map(|k| k.to_hyper())
                .collect::<gpbold::Result<Vec<_>>>()
                .map_err(|e| CliError::Usage(e.to_string()))?
        };
        match hypers.len() {
            1 => Ok(vec![hypers[0]; n_stimuli]),
            n if n == n_stimuli => Ok(hypers),
            n => Err(CliError::Usage(format!("{n} kernels given for {n_stimuli} stimuli"))),
        }
    }
}

/// Resolves `p` against each base in turn, returning the first that exists.
pub fn resolve(p: &Path, bases: &[&Path]) -> Option<PathBuf> {
    if p.is_absolute() {
        return p.exists().then(|| p.to_path_buf());
    }
    bases.iter().map(|b| b.join(p)).find(|c| c.exists())
}

/// `path` relative to `base` unless already absolute; must exist.
pub fn existing(path: &Path, base: &Path, what: &str) -> Result<PathBuf, CliError> {
    resolve(path, &[base]).ok_or_else(|| CliError::Usage(format!("{what} {} does not exist", base.join(path).display())))
}
