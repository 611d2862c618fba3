use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::csvio::{read_matrix, write_matrix};
use crate::error::{Error, Result};

/// Run metadata. Everything here is a deterministic function of the inputs,
/// so `meta.json` is reproducible byte for byte; wall-clock timings live in
/// [`Timing`] instead.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrawsMeta {
    pub parcel_id: String,
    pub model: String,
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub retained: usize,
    pub n_total: usize,
    pub presample: usize,
    pub n_stimuli: usize,
    /// Rows of B; twice the stimulus count for the derivative baseline.
    pub n_basis: usize,
    pub n_voxels: usize,
    pub n_nuisance: usize,
    /// False when the predicted-BOLD step was skipped.
    pub latent_sampled: bool,
    pub ridge_penalty: f64,
    pub init_iterations: usize,
    pub init_converged: bool,
    pub gp_jitter: Vec<f64>,
    pub kappa: f64,
    pub c0: f64,
    pub d0: f64,
    pub sigma2_includes_coef_prior: bool,
    pub mean_slice_shrinks: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub init_seconds: f64,
    pub sampling_seconds: f64,
}

/// Retained draws, one row per draw. Matrix parameters are flattened
/// column-major, so entry (r, c) of an R-row parameter is column r + R·c.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorDraws {
    pub meta: DrawsMeta,
    pub timing: Timing,
    pub f: DMatrix<f64>,
    pub design: DMatrix<f64>,
    pub h: Option<DMatrix<f64>>,
    pub b: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    pub sigma2: DMatrix<f64>,
    pub rho: DMatrix<f64>,
}

fn flat_names(prefix: &str, rows: usize, cols: usize, row_tag: &str, col_tag: &str) -> Vec<String> {
    let mut out = Vec::with_capacity(rows * cols);
    for c in 0..cols {
        for r in 0..rows {
            out.push(format!("{prefix}_{row_tag}{r}_{col_tag}{c}"));
        }
    }
    out
}

impl PosteriorDraws {
    pub fn n_draws(&self) -> usize {
        self.b.nrows()
    }

    /// Draws of b_{m,j}.
    pub fn b_draws(&self, m: usize, j: usize) -> Vec<f64> {
        self.b.column(m + self.meta.n_basis * j).iter().copied().collect()
    }

    /// Draw `d` of B as an M_b×J matrix.
    pub fn b_matrix(&self, d: usize) -> DMatrix<f64> {
        DMatrix::from_iterator(self.meta.n_basis, self.meta.n_voxels, self.b.row(d).iter().copied())
    }

    /// Draw `d` of the raw predicted BOLD as a T★×M matrix.
    pub fn f_matrix(&self, d: usize) -> DMatrix<f64> {
        DMatrix::from_iterator(self.meta.n_total, self.meta.n_stimuli, self.f.row(d).iter().copied())
    }

    /// Draw `d` of the activation design as a T★×M_b matrix.
    pub fn design_matrix(&self, d: usize) -> DMatrix<f64> {
        DMatrix::from_iterator(self.meta.n_total, self.meta.n_basis, self.design.row(d).iter().copied())
    }

    fn groups(&self) -> Vec<(&'static str, Vec<String>, &DMatrix<f64>)> {
        let m = &self.meta;
        let mut g = vec![
            ("f", flat_names("f", m.n_total, m.n_stimuli, "t", "m"), &self.f),
            ("design", flat_names("x", m.n_total, m.n_basis, "t", "k"), &self.design),
            ("b", flat_names("b", m.n_basis, m.n_voxels, "k", "v"), &self.b),
            ("gamma", flat_names("gamma", m.n_nuisance, m.n_voxels, "p", "v"), &self.gamma),
            ("sigma2", flat_names("sigma2", m.n_voxels, 1, "v", "c"), &self.sigma2),
            ("rho", flat_names("rho", m.presample, 1, "k", "c"), &self.rho),
        ];
        if let Some(h) = &self.h {
            let per = h.ncols() / m.n_stimuli.max(1);
            g.push(("h", flat_names("h", per, m.n_stimuli, "k", "m"), h));
        }
        g
    }

    /// One CSV per parameter group plus `meta.json` and `timing.json`.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        for (name, header, m) in self.groups() {
            write_matrix(dir.join(format!("{name}.csv")), &header, m)?;
        }
        std::fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&self.meta)?)?;
        std::fs::write(dir.join("timing.json"), serde_json::to_string_pretty(&self.timing)?)?;
        Ok(())
    }

    pub fn read_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let meta_path = dir.join("meta.json");
        let meta: DrawsMeta =
            serde_json::from_str(&std::fs::read_to_string(&meta_path)?).map_err(|e| Error::Parse {
                path: meta_path.display().to_string(),
                message: e.to_string(),
            })?;
        let timing = std::fs::read_to_string(dir.join("timing.json"))
            .ok()
            .and_then(|s| serde_json::from_str(&s).ok())
            .unwrap_or_default();
        let read = |name: &str| -> Result<DMatrix<f64>> { Ok(read_matrix(dir.join(format!("{name}.csv")))?.1) };
        let h_path = dir.join("h.csv");
        let draws = PosteriorDraws {
            f: read("f")?,
            design: read("design")?,
            h: if h_path.exists() { Some(read("h")?) } else { None },
            b: read("b")?,
            gamma: read("gamma")?,
            sigma2: read("sigma2")?,
            rho: read("rho")?,
            meta,
            timing,
        };
        let expect = [
            ("b", draws.b.ncols(), draws.meta.n_basis * draws.meta.n_voxels),
            ("sigma2", draws.sigma2.ncols(), draws.meta.n_voxels),
            ("rho", draws.rho.ncols(), draws.meta.presample),
        ];
        for (name, got, want) in expect {
            if got != want {
                return Err(Error::Parse {
                    path: dir.join(format!("{name}.csv")).display().to_string(),
                    message: format!("{got} columns, metadata implies {want}"),
                });
            }
        }
        Ok(draws)
    }
}
