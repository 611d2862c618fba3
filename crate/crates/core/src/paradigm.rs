//! Experimental paradigms, the canonical double-gamma HRF, and HRF-convolved
//! mean functions for the predicted BOLD prior.
//!
//! Rows of every time-indexed matrix in this crate follow the same grid: the
//! first `presample` rows hold the presample points (negative times), the
//! remaining `n_time` rows hold sample `s` at time `s * tr` seconds.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

const TIME_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub onset: f64,
    pub duration: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Paradigm {
    pub tr: f64,
    pub n_time: usize,
    pub presample: usize,
    /// One event list per stimulus type.
    pub stimuli: Vec<Vec<Event>>,
}

impl Paradigm {
    pub fn new(tr: f64, n_time: usize, presample: usize, stimuli: Vec<Vec<Event>>) -> Result<Self> {
        let p = Paradigm {
            tr,
            n_time,
            presample,
            stimuli,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let p: Paradigm = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tr > 0.0 && self.tr.is_finite()) {
            return Err(Error::InvalidParameter(format!("tr must be positive, got {}", self.tr)));
        }
        if self.n_time == 0 {
            return Err(Error::InvalidParameter("n_time must be at least 1".into()));
        }
        if self.stimuli.is_empty() {
            return Err(Error::InvalidParameter("paradigm has no stimulus types".into()));
        }
        let end = self.n_time as f64 * self.tr;
        for (m, events) in self.stimuli.iter().enumerate() {
            for ev in events {
                if !(ev.onset >= 0.0 && ev.duration >= 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "stimulus {m}: negative onset or duration ({}, {})",
                        ev.onset, ev.duration
                    )));
                }
                if ev.onset + ev.duration > end + TIME_EPS {
                    return Err(Error::InvalidParameter(format!(
                        "stimulus {m}: event ({}, {}) runs past the end of the run ({end} s)",
                        ev.onset, ev.duration
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn n_stimuli(&self) -> usize {
        self.stimuli.len()
    }

    /// T★ = T + K.
    pub fn n_total(&self) -> usize {
        self.n_time + self.presample
    }

    /// Time in seconds of grid row `row`.
    pub fn time_of_row(&self, row: usize) -> f64 {
        (row as f64 - self.presample as f64) * self.tr
    }

    /// Stimulus indicator for stimulus `m` on the TR grid, length T★.
    pub fn indicator(&self, m: usize) -> Vec<f64> {
        self.indicator_on_grid(m, self.tr, 1)
    }

    // Indicator on a grid of spacing `dt` with `factor` fine points per TR.
    fn indicator_on_grid(&self, m: usize, dt: f64, factor: usize) -> Vec<f64> {
        let n = self.n_total() * factor;
        let offset = (self.presample * factor) as f64;
        let mut u = vec![0.0; n];
        for ev in &self.stimuli[m] {
            if ev.duration == 0.0 {
                let idx = (ev.onset / dt).round() + offset;
                if idx >= 0.0 && (idx as usize) < n {
                    u[idx as usize] += 1.0;
                }
                continue;
            }
            for (i, ui) in u.iter_mut().enumerate() {
                let t = (i as f64 - offset) * dt;
                if t >= ev.onset - TIME_EPS && t < ev.onset + ev.duration - TIME_EPS {
                    *ui += 1.0;
                }
            }
        }
        u
    }
}

/// Double-gamma HRF parameters, all times in seconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HrfParams {
    pub peak_delay: f64,
    pub undershoot_delay: f64,
    pub peak_dispersion: f64,
    pub undershoot_dispersion: f64,
    pub undershoot_ratio: f64,
    pub kernel_length: f64,
    /// Fine grid points per TR used for the convolution; 1 means TR resolution.
    pub microtime: usize,
}

impl Default for HrfParams {
    fn default() -> Self {
        HrfParams {
            peak_delay: 6.0,
            undershoot_delay: 16.0,
            peak_dispersion: 1.0,
            undershoot_dispersion: 1.0,
            undershoot_ratio: 1.0 / 6.0,
            kernel_length: 32.0,
            microtime: 1,
        }
    }
}

impl HrfParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.peak_dispersion > 0.0 && self.undershoot_dispersion > 0.0) {
            return Err(Error::InvalidParameter("HRF dispersions must be positive".into()));
        }
        if !(self.peak_delay > 0.0 && self.undershoot_delay > 0.0) {
            return Err(Error::InvalidParameter("HRF delays must be positive".into()));
        }
        if !(self.kernel_length > 0.0) {
            return Err(Error::InvalidParameter("HRF kernel_length must be positive".into()));
        }
        if self.microtime == 0 {
            return Err(Error::InvalidParameter("microtime must be at least 1".into()));
        }
        Ok(())
    }

    /// HRF sampled at `k * dt` for `k = 0..=kernel_length/dt`.
    pub fn sampled(&self, dt: f64) -> Result<Vec<f64>> {
        self.validate()?;
        let n = (self.kernel_length / dt + TIME_EPS).floor() as usize + 1;
        (0..n).map(|k| double_gamma(k as f64 * dt, self)).collect()
    }
}

fn gamma_pdf(t: f64, shape: f64, scale: f64) -> f64 {
    if t < 0.0 {
        return 0.0;
    }
    if t == 0.0 {
        return if shape > 1.0 {
            0.0
        } else if shape == 1.0 {
            1.0 / scale
        } else {
            f64::INFINITY
        };
    }
    ((shape - 1.0) * t.ln() - t / scale - ln_gamma(shape) - shape * scale.ln()).exp()
}

/// Canonical double-gamma HRF: a gamma-density peak minus a scaled gamma-density
/// undershoot. Each component has shape `delay / dispersion` and scale
/// `dispersion`, so the peak density has its mode near `delay - dispersion`.
pub fn double_gamma(t: f64, params: &HrfParams) -> Result<f64> {
    if !(params.peak_dispersion > 0.0 && params.undershoot_dispersion > 0.0) {
        return Err(Error::InvalidParameter("HRF dispersions must be positive".into()));
    }
    if !t.is_finite() {
        return Err(Error::InvalidParameter(format!("HRF evaluated at non-finite time {t}")));
    }
    if t < 0.0 {
        return Ok(0.0);
    }
    let peak = gamma_pdf(
        t,
        params.peak_delay / params.peak_dispersion,
        params.peak_dispersion,
    );
    let under = gamma_pdf(
        t,
        params.undershoot_delay / params.undershoot_dispersion,
        params.undershoot_dispersion,
    );
    Ok(peak - params.undershoot_ratio * under)
}

/// Mean function columns f₀,m evaluated on all T★ grid rows.
#[derive(Clone, Debug, PartialEq)]
pub struct MeanFunction {
    pub values: DMatrix<f64>,
    pub standardized: bool,
}

impl MeanFunction {
    pub fn n_stimuli(&self) -> usize {
        self.values.ncols()
    }

    /// Standardizes every column to zero mean and unit (population) variance.
    pub fn standardize(mut self) -> Result<Self> {
        for (m, mut col) in self.values.column_iter_mut().enumerate() {
            let n = col.len() as f64;
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            if !(var > 0.0) {
                return Err(Error::DegenerateInput(format!(
                    "mean function column {m} is constant and cannot be standardized"
                )));
            }
            let sd = var.sqrt();
            col.iter_mut().for_each(|v| *v = (*v - mean) / sd);
        }
        self.standardized = true;
        Ok(self)
    }
}

/// Convolves each stimulus indicator with the sampled HRF.
///
/// Presample rows see zero stimulus history (no events before time 0), so the
/// convolution there only picks up events already inside the presample window.
pub fn build_mean_function(
    paradigm: &Paradigm,
    params: &HrfParams,
    standardize: bool,
) -> Result<MeanFunction> {
    paradigm.validate()?;
    params.validate()?;
    let factor = params.microtime;
    let dt = paradigm.tr / factor as f64;
    let hrf = params.sampled(dt)?;
    let n = paradigm.n_total();
    let mut values = DMatrix::zeros(n, paradigm.n_stimuli());
    for m in 0..paradigm.n_stimuli() {
        let u = paradigm.indicator_on_grid(m, dt, factor);
        let fine = convolve_causal(&u, &hrf);
        let scale = 1.0 / factor as f64;
        for row in 0..n {
            values[(row, m)] = fine[row * factor] * scale;
        }
    }
    let mf = MeanFunction {
        values,
        standardized: false,
    };
    if standardize {
        mf.standardize()
    } else {
        Ok(mf)
    }
}

/// `out[i] = Σ_k input[i - k] * kernel[k]`, truncated to `input.len()`.
pub fn convolve_causal(input: &[f64], kernel: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; input.len()];
    for (i, o) in out.iter_mut().enumerate() {
        let kmax = kernel.len().min(i + 1);
        *o = (0..kmax).map(|k| input[i - k] * kernel[k]).sum();
    }
    out
}
