use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::csvio::{numbered, read_matrix, write_matrix};
use crate::error::{Error, Result};

/// Observed BOLD `y` (T★×J) and nuisance regressors `z` (T★×P) for one parcel.
/// The first `presample` rows only serve as AR lags.
#[derive(Clone, Debug, PartialEq)]
pub struct ParcelData {
    pub y: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub presample: usize,
}

#[derive(Serialize, Deserialize)]
struct ParcelSidecar {
    presample: usize,
    n_time: usize,
    n_voxels: usize,
    n_nuisance: usize,
}

impl ParcelData {
    pub fn new(y: DMatrix<f64>, z: DMatrix<f64>, presample: usize) -> Result<Self> {
        let d = ParcelData { y, z, presample };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.y.nrows() != self.z.nrows() {
            return Err(Error::Shape(format!(
                "Y has {} rows but Z has {}",
                self.y.nrows(),
                self.z.nrows()
            )));
        }
        if self.y.nrows() <= self.presample {
            return Err(Error::Shape(format!(
                "{} rows leave no samples after {} presample rows",
                self.y.nrows(),
                self.presample
            )));
        }
        if self.y.ncols() == 0 {
            return Err(Error::Shape("parcel has no voxels".into()));
        }
        if self.y.iter().chain(self.z.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("parcel data contain non-finite values".into()));
        }
        Ok(())
    }

    /// T★ = T + K.
    pub fn n_total(&self) -> usize {
        self.y.nrows()
    }

    /// T, the number of rows that enter the likelihood.
    pub fn n_time(&self) -> usize {
        self.y.nrows() - self.presample
    }

    pub fn n_voxels(&self) -> usize {
        self.y.ncols()
    }

    pub fn n_nuisance(&self) -> usize {
        self.z.ncols()
    }

    /// Writes `y.csv`, `z.csv` and `parcel.json` into `dir`.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        write_matrix(dir.join("y.csv"), &numbered("v", self.n_voxels()), &self.y)?;
        write_matrix(dir.join("z.csv"), &numbered("z", self.n_nuisance()), &self.z)?;
        let side = ParcelSidecar {
            presample: self.presample,
            n_time: self.n_time(),
            n_voxels: self.n_voxels(),
            n_nuisance: self.n_nuisance(),
        };
        std::fs::write(dir.join("parcel.json"), serde_json::to_string_pretty(&side)?)?;
        Ok(())
    }

    pub fn read_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let side_path = dir.join("parcel.json");
        let side: ParcelSidecar = serde_json::from_str(&std::fs::read_to_string(&side_path)?).map_err(|e| {
            Error::Parse {
                path: side_path.display().to_string(),
                message: e.to_string(),
            }
        })?;
        let (_, y) = read_matrix(dir.join("y.csv"))?;
        let (_, z) = read_matrix(dir.join("z.csv"))?;
        if y.ncols() != side.n_voxels || z.ncols() != side.n_nuisance || y.nrows() != side.n_time + side.presample {
            return Err(Error::Parse {
                path: side_path.display().to_string(),
                message: format!(
                    "sidecar declares {}+{} rows, {} voxels, {} nuisance columns; CSVs are {:?} and {:?}",
                    side.n_time,
                    side.presample,
                    side.n_voxels,
                    side.n_nuisance,
                    y.shape(),
                    z.shape()
                ),
            });
        }
        ParcelData::new(y, z, side.presample)
    }
}
