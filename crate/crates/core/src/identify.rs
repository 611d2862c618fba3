//! Identifying transformation of the latent predicted BOLD.
//!
//! `F·B` is only identified up to `F S⁻¹ S B`. Each column is scaled to unit
//! sup-norm with its sign fixed against the prior mean, and the column order
//! is fixed by maximizing the summed correlation with the prior mean columns.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::pearson;

/// Largest stimulus count for the exhaustive permutation search.
pub const MAX_EXHAUSTIVE_STIMULI: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct LatentBold {
    pub raw: DMatrix<f64>,
    pub transformed: DMatrix<f64>,
    /// `permutation[m]` is the raw column placed at output position `m`.
    pub permutation: Vec<usize>,
}

fn sup_norm(f: &[f64]) -> f64 {
    f.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

fn sign_against(f: &[f64], prior_mean: &[f64]) -> f64 {
    let ip: f64 = f.iter().zip(prior_mean).map(|(a, b)| a * b).sum();
    if ip == 0.0 {
        log::warn!("predicted BOLD column is orthogonal to its prior mean; taking sign +1");
        1.0
    } else {
        ip.signum()
    }
}

/// `f / (‖f‖∞ · sign(fᵀ m))`.
///
/// The entry of largest magnitude maps to exactly ±1.
pub fn normalize_column(f: &[f64], prior_mean: &[f64]) -> Result<DVector<f64>> {
    if f.len() != prior_mean.len() {
        return Err(Error::Shape(format!(
            "column length {} does not match prior mean length {}",
            f.len(),
            prior_mean.len()
        )));
    }
    let sup = sup_norm(f);
    if !(sup > 0.0) || !sup.is_finite() {
        return Err(Error::DegenerateInput(
            "cannot normalize a zero or non-finite predicted BOLD column".into(),
        ));
    }
    let denom = sup * sign_against(f, prior_mean);
    Ok(DVector::from_iterator(f.len(), f.iter().map(|v| v / denom)))
}

/// All orderings of `0..n` in lexicographic order.
fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(n);
    let mut used = vec![false; n];
    fn rec(n: usize, current: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if current.len() == n {
            out.push(current.clone());
            return;
        }
        for i in 0..n {
            if !used[i] {
                used[i] = true;
                current.push(i);
                rec(n, current, used, out);
                current.pop();
                used[i] = false;
            }
        }
    }
    rec(n, &mut current, &mut used, &mut out);
    out
}

/// Ordering maximizing `Σ_m score[(perm[m], m)]`; first maximum in
/// lexicographic order wins ties.
fn best_assignment(score: &DMatrix<f64>) -> Result<Vec<usize>> {
    let m = score.ncols();
    if m > MAX_EXHAUSTIVE_STIMULI {
        return Err(Error::InvalidParameter(format!(
            "column matching supports at most {MAX_EXHAUSTIVE_STIMULI} stimuli, got {m}"
        )));
    }
    let mut best = None;
    let mut best_score = f64::NEG_INFINITY;
    for perm in permutations(m) {
        let s: f64 = perm.iter().enumerate().map(|(dst, &src)| score[(src, dst)]).sum();
        if s > best_score {
            best_score = s;
            best = Some(perm);
        }
    }
    best.ok_or_else(|| Error::Numerical("column matching produced no finite score".into()))
}

fn correlation_matrix(f_post: &DMatrix<f64>, f0: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let m = f0.ncols();
    let mut corr = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            corr[(i, j)] = pearson(f_post.column(i).as_slice(), f0.column(j).as_slice())
                .ok_or_else(|| {
                    Error::DegenerateInput(format!(
                        "correlation undefined: column {i} of the draw or column {j} of the prior mean is constant"
                    ))
                })?;
        }
    }
    Ok(corr)
}

fn check_shapes(f: &DMatrix<f64>, f0: &DMatrix<f64>) -> Result<()> {
    if f.shape() != f0.shape() {
        return Err(Error::Shape(format!(
            "latent BOLD is {:?} but the prior mean is {:?}",
            f.shape(),
            f0.shape()
        )));
    }
    if f.ncols() == 0 {
        return Err(Error::InvalidParameter("at least one stimulus column is required".into()));
    }
    Ok(())
}

/// Column ordering of `f_post` maximizing `Σ_m corr(f_post[:, perm[m]], f0[:, m])`.
pub fn match_permutation(f_post: &DMatrix<f64>, f0: &DMatrix<f64>) -> Result<Vec<usize>> {
    check_shapes(f_post, f0)?;
    if f0.ncols() == 1 {
        return Ok(vec![0]);
    }
    best_assignment(&correlation_matrix(f_post, f0)?)
}

/// H(F): normalize and reorder the columns of `f` against the prior mean `f0`.
///
/// The sign of each column is taken against the prior-mean column it is
/// assigned to, so the result is invariant to any column permutation, sign
/// flip and nonzero rescaling of `f`.
pub fn transform(f: &DMatrix<f64>, f0: &DMatrix<f64>) -> Result<LatentBold> {
    check_shapes(f, f0)?;
    let m = f.ncols();
    let n = f.nrows();
    if m == 1 {
        let col = normalize_column(f.column(0).as_slice(), f0.column(0).as_slice())?;
        return Ok(LatentBold {
            raw: f.clone(),
            transformed: DMatrix::from_column_slice(n, 1, col.as_slice()),
            permutation: vec![0],
        });
    }
    // score[(i, j)]: correlation of column i, sign-normalized against f0[:, j].
    let corr = correlation_matrix(f, f0)?;
    let mut score = corr.clone();
    for i in 0..m {
        for j in 0..m {
            score[(i, j)] *= sign_against(f.column(i).as_slice(), f0.column(j).as_slice());
        }
    }
    let permutation = best_assignment(&score)?;
    let mut transformed = DMatrix::zeros(n, m);
    for (dst, &src) in permutation.iter().enumerate() {
        let col = normalize_column(f.column(src).as_slice(), f0.column(dst).as_slice())?;
        transformed.set_column(dst, &col);
    }
    Ok(LatentBold {
        raw: f.clone(),
        transformed,
        permutation,
    })
}
