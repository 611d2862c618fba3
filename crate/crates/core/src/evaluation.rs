//! Posterior summaries: Bayesian t-ratios, posterior probability maps, ROC
//! curves against ground truth, and global-mean intensity scaling.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampler::PosteriorDraws;

/// (mean − c) / sd of the draws, with the n − 1 sample variance.
pub fn t_ratio(draws: &[f64], c: f64) -> Result<f64> {
    if draws.len() < 2 {
        return Err(Error::InvalidParameter(format!("t-ratio needs at least 2 draws, got {}", draws.len())));
    }
    let n = draws.len() as f64;
    let mean = draws.iter().sum::<f64>() / n;
    let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if !(var > 0.0) {
        return Err(Error::DegenerateInput("t-ratio is undefined for draws with zero variance".into()));
    }
    Ok((mean - c) / var.sqrt())
}

/// Fraction of draws strictly above `c`.
pub fn ppm(draws: &[f64], c: f64) -> Result<f64> {
    if draws.is_empty() {
        return Err(Error::InvalidParameter("posterior probability needs at least one draw".into()));
    }
    Ok(draws.iter().filter(|&&v| v > c).count() as f64 / draws.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActivityMap {
    pub parcel_id: String,
    pub effect_threshold: f64,
    /// M×J, rows are stimuli.
    pub t_values: Vec<Vec<f64>>,
    pub ppm: Vec<Vec<f64>>,
}

/// t and PPM for every (stimulus, voxel), read from the first-basis rows of B.
pub fn activity_map(draws: &PosteriorDraws, c: f64) -> Result<ActivityMap> {
    let m = draws.meta.n_stimuli;
    let j = draws.meta.n_voxels;
    let mut t_values = vec![vec![0.0; j]; m];
    let mut p = vec![vec![0.0; j]; m];
    for s in 0..m {
        for v in 0..j {
            let d = draws.b_draws(s, v);
            t_values[s][v] = t_ratio(&d, c)?;
            p[s][v] = ppm(&d, c)?;
        }
    }
    Ok(ActivityMap {
        parcel_id: draws.meta.parcel_id.clone(),
        effect_threshold: c,
        t_values,
        ppm: p,
    })
}

impl ActivityMap {
    /// Long format: voxel, stimulus, t, ppm.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["voxel", "stimulus", "t", "ppm"])?;
        for (s, (ts, ps)) in self.t_values.iter().zip(&self.ppm).enumerate() {
            for (v, (t, p)) in ts.iter().zip(ps).enumerate() {
                w.write_record([v.to_string(), s.to_string(), format!("{t}"), format!("{p}")])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub thresholds: Vec<f64>,
    pub tpr: Vec<f64>,
    pub fpr: Vec<f64>,
    pub auc: f64,
}

/// `n` equidistant values from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// 60 equidistant thresholds in [1, 4].
pub fn default_thresholds() -> Vec<f64> {
    linspace(1.0, 4.0, 60)
}

/// Trapezoid area under the (FPR, TPR) points closed with (0, 0) and (1, 1).
pub fn auc_from_points(fpr: &[f64], tpr: &[f64]) -> f64 {
    let mut pts: Vec<(f64, f64)> = fpr.iter().copied().zip(tpr.iter().copied()).collect();
    pts.push((0.0, 0.0));
    pts.push((1.0, 1.0));
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0).sum()
}

pub fn roc_curve(t_values: &[f64], truth: &[bool], thresholds: &[f64]) -> Result<RocCurve> {
    if t_values.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} t-values for {} truth labels",
            t_values.len(),
            truth.len()
        )));
    }
    let n_pos = truth.iter().filter(|&&a| a).count();
    let n_neg = truth.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::DegenerateInput(format!(
            "ROC needs active and inactive voxels, got {n_pos} active and {n_neg} inactive"
        )));
    }
    let mut tpr = Vec::with_capacity(thresholds.len());
    let mut fpr = Vec::with_capacity(thresholds.len());
    for &a in thresholds {
        let (mut tp, mut fp) = (0usize, 0usize);
        for (t, &act) in t_values.iter().zip(truth) {
            if *t > a {
                if act {
                    tp += 1;
                } else {
                    fp += 1;
                }
            }
        }
        tpr.push(tp as f64 / n_pos as f64);
        fpr.push(fp as f64 / n_neg as f64);
    }
    let auc = auc_from_points(&fpr, &tpr);
    Ok(RocCurve {
        thresholds: thresholds.to_vec(),
        tpr,
        fpr,
        auc,
    })
}

/// Pointwise average of TPR and FPR per threshold across replicates.
pub fn average_roc(curves: &[RocCurve]) -> Result<RocCurve> {
    let first = curves
        .first()
        .ok_or_else(|| Error::InvalidParameter("no ROC curves to average".into()))?;
    if curves.iter().any(|c| c.thresholds != first.thresholds) {
        return Err(Error::Shape("ROC curves use different thresholds".into()));
    }
    let n = curves.len() as f64;
    let k = first.thresholds.len();
    let tpr: Vec<f64> = (0..k).map(|i| curves.iter().map(|c| c.tpr[i]).sum::<f64>() / n).collect();
    let fpr: Vec<f64> = (0..k).map(|i| curves.iter().map(|c| c.fpr[i]).sum::<f64>() / n).collect();
    let auc = auc_from_points(&fpr, &tpr);
    Ok(RocCurve {
        thresholds: first.thresholds.clone(),
        tpr,
        fpr,
        auc,
    })
}

impl RocCurve {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["threshold", "fpr", "tpr"])?;
        for i in 0..self.thresholds.len() {
            w.write_record([
                format!("{}", self.thresholds[i]),
                format!("{}", self.fpr[i]),
                format!("{}", self.tpr[i]),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// y_j / sd(y_j) · 100 / GM, where GM is the grand mean of the sd-normalized
/// data, so the result has grand mean 100.
pub fn scale_global_mean(y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if y.is_empty() {
        return Err(Error::Shape("cannot scale an empty matrix".into()));
    }
    let n = y.nrows() as f64;
    let mut out = y.clone();
    let mut bad = Vec::new();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        let mean = col.sum() / n;
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        if !(sd > 0.0) {
            bad.push(j);
            continue;
        }
        col /= sd;
    }
    if !bad.is_empty() {
        return Err(Error::DegenerateInput(format!("voxels with zero standard deviation: {bad:?}")));
    }
    let gm = out.mean();
    if !(gm != 0.0 && gm.is_finite()) {
        return Err(Error::DegenerateInput(format!("grand mean of the normalized data is {gm}")));
    }
    Ok(out * (100.0 / gm))
}
