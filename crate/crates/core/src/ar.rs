//! AR(K) noise: companion-matrix stationarity, lag-polynomial pre-whitening,
//! Yule–Walker autocovariances and simulation.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Prior ρ ~ N(ρ₀, A₀)·I(stationary); `a0` is a covariance.
#[derive(Clone, Debug, PartialEq)]
pub struct ArPrior {
    pub rho0: DVector<f64>,
    pub a0: DMatrix<f64>,
}

impl ArPrior {
    /// Centered over a stationary AR(1): ρ₀ = (r, 0, …, 0) and
    /// A₀ = diag(c², c²/2^ζ, …, c²/K^ζ), so longer lags shrink harder.
    pub fn centered(order: usize, r: f64, c2: f64, zeta: f64) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidParameter("AR order must be at least 1".into()));
        }
        if !(c2 > 0.0) {
            return Err(Error::InvalidParameter("AR prior scale c² must be positive".into()));
        }
        let mut rho0 = DVector::zeros(order);
        rho0[0] = r;
        let diag = DVector::from_fn(order, |k, _| c2 / ((k + 1) as f64).powf(zeta));
        Ok(ArPrior {
            rho0,
            a0: DMatrix::from_diagonal(&diag),
        })
    }

    pub fn order(&self) -> usize {
        self.rho0.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.order();
        if self.a0.shape() != (k, k) {
            return Err(Error::Shape(format!(
                "AR prior covariance is {:?}, expected {k}×{k}",
                self.a0.shape()
            )));
        }
        if k > 0 && nalgebra::Cholesky::new(self.a0.clone()).is_none() {
            return Err(Error::InvalidParameter("AR prior covariance must be positive definite".into()));
        }
        Ok(())
    }
}

/// First row ρ, ones on the subdiagonal.
pub fn companion_matrix(rho: &[f64]) -> Result<DMatrix<f64>> {
    let k = rho.len();
    if k == 0 {
        return Err(Error::InvalidParameter("companion matrix of an AR(0) process is empty".into()));
    }
    let mut c = DMatrix::zeros(k, k);
    for (j, &r) in rho.iter().enumerate() {
        c[(0, j)] = r;
    }
    for i in 1..k {
        c[(i, i - 1)] = 1.0;
    }
    Ok(c)
}

/// Largest eigenvalue modulus of the companion matrix.
pub fn spectral_radius(rho: &[f64]) -> Result<f64> {
    if rho.iter().any(|r| !r.is_finite()) {
        return Err(Error::InvalidParameter("AR coefficients must be finite".into()));
    }
    if rho.len() == 1 {
        return Ok(rho[0].abs());
    }
    let c = companion_matrix(rho)?;
    // The unbounded Schur iteration can cycle on some companion matrices.
    if let Some(schur) = nalgebra::Schur::try_new(c.clone(), f64::EPSILON, 5_000) {
        return Ok(schur.complex_eigenvalues().iter().fold(0.0_f64, |acc, z| acc.max(z.norm())));
    }
    Ok(gelfand_radius(&c))
}

/// ‖Cⁿ‖^{1/n} with repeated squaring up to n = 2⁴⁰, rescaling to avoid overflow.
fn gelfand_radius(c: &DMatrix<f64>) -> f64 {
    let mut m = c.clone();
    let mut log_scale = 0.0;
    let mut n = 1.0;
    for _ in 0..40 {
        let norm = m.norm();
        if norm == 0.0 {
            return 0.0;
        }
        m /= norm;
        log_scale += norm.ln();
        m = &m * &m;
        log_scale *= 2.0;
        n *= 2.0;
    }
    ((log_scale + m.norm().ln()) / n).exp()
}

/// I(ρ): true iff every companion eigenvalue lies strictly inside the unit circle.
///
/// Checked with the step-down recursion: the process is stationary iff every
/// partial autocorrelation lies in (−1, 1). Unit roots hit |φ| = 1 exactly,
/// where an eigenvalue modulus could round either way.
pub fn is_stationary(rho: &[f64]) -> bool {
    if rho.iter().any(|r| !r.is_finite()) {
        return false;
    }
    let mut a = rho.to_vec();
    while let Some(&phi) = a.last() {
        if phi.abs() >= 1.0 {
            return false;
        }
        let k = a.len() - 1;
        let denom = 1.0 - phi * phi;
        a = (0..k).map(|j| (a[j] + phi * a[k - 1 - j]) / denom).collect();
    }
    true
}

/// Φ_C(L) applied down each column: row t of the result is
/// `x[K+t] − Σ_k ρ_k x[K+t−k]`. The top K rows are consumed as lags.
pub fn prewhiten_columns(x: &DMatrix<f64>, rho: &[f64]) -> Result<DMatrix<f64>> {
    let k = rho.len();
    if x.nrows() <= k {
        return Err(Error::Shape(format!(
            "pre-whitening needs more than {k} rows (the presample), got {}",
            x.nrows()
        )));
    }
    let t = x.nrows() - k;
    let mut out = x.rows(k, t).into_owned();
    for (lag, &r) in rho.iter().enumerate() {
        if r != 0.0 {
            // x[K+t-lag-1] for t = 0..T
            out -= x.rows(k - lag - 1, t) * r;
        }
    }
    Ok(out)
}

/// Φ_R(L): the same lag filter applied independently inside each consecutive
/// block of `block_len` rows, dropping the first K rows of every block.
pub fn prewhiten_rows(w: &DMatrix<f64>, rho: &[f64], block_len: usize) -> Result<DMatrix<f64>> {
    let k = rho.len();
    if block_len <= k || w.nrows() % block_len != 0 {
        return Err(Error::Shape(format!(
            "{} rows cannot be split into blocks of {block_len} rows with {k} presample rows each",
            w.nrows()
        )));
    }
    let blocks = w.nrows() / block_len;
    let t = block_len - k;
    let mut out = DMatrix::zeros(blocks * t, w.ncols());
    for b in 0..blocks {
        let block = w.rows(b * block_len, block_len).into_owned();
        out.rows_mut(b * t, t).copy_from(&prewhiten_columns(&block, rho)?);
    }
    Ok(out)
}

/// Autocovariances γ₀…γ_{n−1} of a stationary AR process with unit innovation
/// variance, from the Yule–Walker equations.
pub fn autocovariances(rho: &[f64], n: usize) -> Result<Vec<f64>> {
    if !is_stationary(rho) {
        return Err(Error::InvalidParameter(format!("AR coefficients {rho:?} are not stationary")));
    }
    let k = rho.len();
    // γ_h − Σ_j ρ_j γ_|h−j| = δ_h0 for h = 0..=K
    let mut a = DMatrix::<f64>::identity(k + 1, k + 1);
    let mut b = DVector::zeros(k + 1);
    b[0] = 1.0;
    for h in 0..=k {
        for (j, &r) in rho.iter().enumerate() {
            let lag = (h as isize - (j as isize + 1)).unsigned_abs();
            a[(h, lag)] -= r;
        }
    }
    let head = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Numerical("singular Yule–Walker system".into()))?;
    let mut gamma: Vec<f64> = head.iter().copied().collect();
    while gamma.len() < n {
        let h = gamma.len();
        let next = rho.iter().enumerate().map(|(j, r)| r * gamma[h - j - 1]).sum();
        gamma.push(next);
    }
    gamma.truncate(n.max(1));
    if n == 0 {
        gamma.clear();
    }
    Ok(gamma)
}

/// M_ρ: the n×n Toeplitz autocovariance matrix of the stationary,
/// unit-innovation AR process. Only used as a reference for the
/// conditional likelihood the sampler actually evaluates.
pub fn ar_covariance_oracle(rho: &[f64], n: usize) -> Result<DMatrix<f64>> {
    let gamma = autocovariances(rho, n)?;
    Ok(DMatrix::from_fn(n, n, |i, j| gamma[i.abs_diff(j)]))
}

/// Stationary AR path of length `n` with innovation sd `sigma`.
///
/// The recursion starts from zeros and a burn-in long enough for the start-up
/// transient to decay below 1e-12 of its initial size is discarded.
pub fn simulate_ar<R: Rng + ?Sized>(rho: &[f64], sigma: f64, n: usize, rng: &mut R) -> Result<DVector<f64>> {
    if !(sigma >= 0.0) {
        return Err(Error::InvalidParameter(format!("innovation sd must be non-negative, got {sigma}")));
    }
    let radius = if rho.is_empty() { 0.0 } else { spectral_radius(rho)? };
    if radius >= 1.0 {
        return Err(Error::InvalidParameter(format!("AR coefficients {rho:?} are not stationary")));
    }
    if sigma == 0.0 {
        return Ok(DVector::zeros(n));
    }
    let burn = if radius > 0.0 {
        ((1e-12f64).ln() / radius.ln()).ceil().max(100.0) as usize
    } else {
        0
    };
    let k = rho.len();
    let total = burn + n;
    let mut u = vec![0.0; total + k];
    for t in k..total + k {
        let eps: f64 = rng.sample(StandardNormal);
        let ar: f64 = rho.iter().enumerate().map(|(j, r)| r * u[t - j - 1]).sum();
        u[t] = ar + sigma * eps;
    }
    Ok(DVector::from_column_slice(&u[k + burn..]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{rng_from_seed, standard_normal_vector};
    use nalgebra::Complex;

    /// Roots of Σ coeffs[i] z^i by Durand–Kerner.
    fn poly_roots(coeffs: &[f64]) -> Vec<Complex<f64>> {
        let deg = coeffs.len() - 1;
        let lead = coeffs[deg];
        let monic: Vec<f64> = coeffs.iter().map(|c| c / lead).collect();
        let eval = |z: Complex<f64>| monic.iter().rev().fold(Complex::new(0.0, 0.0), |acc, &c| acc * z + c);
        let seed = Complex::new(0.4, 0.9);
        let mut roots: Vec<Complex<f64>> = (0..deg).map(|i| seed.powu(i as u32)).collect();
        for _ in 0..2000 {
            let prev = roots.clone();
            for i in 0..deg {
                let mut denom = Complex::new(1.0, 0.0);
                for j in 0..deg {
                    if i != j {
                        denom *= roots[i] - roots[j];
                    }
                }
                roots[i] = roots[i] - eval(roots[i]) / denom;
            }
            let delta = roots.iter().zip(&prev).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            if delta < 1e-15 {
                break;
            }
        }
        roots
    }

    #[test]
    fn companion_layout() {
        assert_eq!(companion_matrix(&[0.5]).unwrap(), DMatrix::from_element(1, 1, 0.5));
        let c = companion_matrix(&[0.3, -0.2]).unwrap();
        assert_eq!(c, DMatrix::from_row_slice(2, 2, &[0.3, -0.2, 1.0, 0.0]));
        assert!(companion_matrix(&[]).is_err());
    }

    #[test]
    fn ar3_spectral_radius_matches_polynomial_roots() {
        let rho = [0.4, 0.1, 0.05];
        // Eigenvalues of the companion matrix are the roots of z³ − ρ₁z² − ρ₂z − ρ₃.
        let roots = poly_roots(&[-0.05, -0.1, -0.4, 1.0]);
        let oracle = roots.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let radius = spectral_radius(&rho).unwrap();
        assert!((radius - oracle).abs() < 1e-10);
        assert!((radius - 0.6640).abs() < 1e-3, "{radius}");
        assert!(is_stationary(&rho));
    }

    #[test]
    fn gelfand_fallback_matches_eigenvalues() {
        for rho in [[0.4, 0.1, 0.05], [1.2, -0.5, 0.1], [-0.3, 0.8, 0.2]] {
            let c = companion_matrix(&rho).unwrap();
            let exact = spectral_radius(&rho).unwrap();
            assert!((gelfand_radius(&c) - exact).abs() < 1e-6, "{rho:?}");
        }
    }

    #[test]
    fn stationarity_edge_cases() {
        assert!(!is_stationary(&[-1.0]));
        assert!(!is_stationary(&[f64::NAN, 0.1]));
        assert!(is_stationary(&[0.0, 0.0, 0.0]));
        assert!(!is_stationary(&[1.0]));
        assert!(!is_stationary(&[0.5, 0.5]));
    }

    #[test]
    fn stationarity_agrees_with_characteristic_roots() {
        let mut rng = rng_from_seed(2024);
        let mut checked = 0;
        while checked < 1000 {
            let k = 1 + (rng.random::<u32>() % 4) as usize;
            let rho: Vec<f64> = (0..k).map(|_| rng.random_range(-1.2..1.2)).collect();
            // 1 − ρ₁z − … − ρ_K z^K has all roots outside the unit circle.
            let mut coeffs = vec![1.0];
            coeffs.extend(rho.iter().map(|r| -r));
            let min_root = poly_roots(&coeffs).iter().map(|z| z.norm()).fold(f64::INFINITY, f64::min);
            if (min_root - 1.0).abs() < 1e-6 {
                continue;
            }
            assert_eq!(is_stationary(&rho), min_root > 1.0, "{rho:?}");
            checked += 1;
        }
    }

    #[test]
    fn zero_filter_drops_presample() {
        let x = DMatrix::from_fn(7, 2, |i, j| (i * 3 + j) as f64);
        let out = prewhiten_columns(&x, &[0.0, 0.0]).unwrap();
        assert_eq!(out, x.rows(2, 5).into_owned());
    }

    #[test]
    fn ar1_hand_computation() {
        let x = DMatrix::from_column_slice(4, 1, &[0.0, 1.0, 2.0, 3.0]);
        let out = prewhiten_columns(&x, &[0.5]).unwrap();
        assert_eq!(out.as_slice(), &[1.0, 1.5, 2.0]);
    }

    #[test]
    fn too_few_rows() {
        let x = DMatrix::zeros(3, 1);
        assert!(matches!(prewhiten_columns(&x, &[0.1, 0.1, 0.1]), Err(Error::Shape(_))));
    }

    #[test]
    fn prewhitening_commutes_with_right_multiplication() {
        let mut rng = rng_from_seed(5);
        let a = DMatrix::from_column_slice(20, 3, standard_normal_vector(60, &mut rng).as_slice());
        let b = DMatrix::from_column_slice(3, 4, standard_normal_vector(12, &mut rng).as_slice());
        let rho = [0.4, 0.1, 0.05];
        let lhs = prewhiten_columns(&(&a * &b), &rho).unwrap();
        let rhs = prewhiten_columns(&a, &rho).unwrap() * &b;
        assert!((lhs - rhs).amax() < 1e-12);
    }

    #[test]
    fn row_filter_blocks() {
        let mut rng = rng_from_seed(6);
        let rho = [0.3, -0.1];
        let w = DMatrix::from_column_slice(24, 2, standard_normal_vector(48, &mut rng).as_slice());
        let out = prewhiten_rows(&w, &rho, 12).unwrap();
        assert_eq!(out.nrows(), 20);
        for b in 0..2 {
            let block = w.rows(b * 12, 12).into_owned();
            let expected = prewhiten_columns(&block, &rho).unwrap();
            assert_eq!(out.rows(b * 10, 10).into_owned(), expected);
        }
        let single = prewhiten_rows(&w.rows(0, 12).into_owned(), &rho, 12).unwrap();
        assert_eq!(single, prewhiten_columns(&w.rows(0, 12).into_owned(), &rho).unwrap());
        let zero = prewhiten_rows(&w, &[0.0, 0.0], 12).unwrap();
        assert_eq!(zero.rows(0, 10).into_owned(), w.rows(2, 10).into_owned());
        assert!(prewhiten_rows(&w, &rho, 7).is_err());
    }

    #[test]
    fn oracle_closed_forms() {
        assert_eq!(ar_covariance_oracle(&[0.0, 0.0], 5).unwrap(), DMatrix::identity(5, 5));
        let phi: f64 = 0.6;
        let m = ar_covariance_oracle(&[phi], 6).unwrap();
        for i in 0..6usize {
            for j in 0..6usize {
                let expected = phi.powi(i.abs_diff(j) as i32) / (1.0 - phi * phi);
                assert!((m[(i, j)] - expected).abs() < 1e-12);
            }
        }
        assert!(ar_covariance_oracle(&[1.1], 3).is_err());
    }

    #[test]
    fn oracle_matches_long_simulation() {
        let rho = [0.4, 0.1, 0.05];
        let m = ar_covariance_oracle(&rho, 10).unwrap();
        assert!(crate::linalg::min_eigenvalue(&m) > 0.0);
        let path = simulate_ar(&rho, 1.0, 1_000_000, &mut rng_from_seed(77)).unwrap();
        let n = path.len();
        let mean = path.mean();
        for lag in 0..10 {
            let c = (0..n - lag).map(|t| (path[t] - mean) * (path[t + lag] - mean)).sum::<f64>() / n as f64;
            // Relative to γ₀; lags far out are too small for a per-entry relative bound.
            assert!((c - m[(0, lag)]).abs() < 0.01 * m[(0, 0)], "lag {lag}: {c} vs {}", m[(0, lag)]);
        }
        let r1 = (0..n - 1).map(|t| (path[t] - mean) * (path[t + 1] - mean)).sum::<f64>()
            / path.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
        let yw = 6.0 / 13.0;
        assert!((m[(0, 1)] / m[(0, 0)] - yw).abs() < 1e-12);
        assert!((r1 - yw).abs() < 0.01 * yw, "{r1}");
    }

    #[test]
    fn simulation_edge_cases() {
        let z = simulate_ar(&[0.4, 0.1, 0.05], 0.0, 50, &mut rng_from_seed(1)).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
        let a = simulate_ar(&[0.4, 0.1, 0.05], 0.3, 50, &mut rng_from_seed(1)).unwrap();
        let b = simulate_ar(&[0.4, 0.1, 0.05], 0.3, 50, &mut rng_from_seed(1)).unwrap();
        assert_eq!(a, b);
        assert!(simulate_ar(&[1.0], 1.0, 5, &mut rng_from_seed(1)).is_err());
    }

    #[test]
    fn prior_construction() {
        let p = ArPrior::centered(3, 0.0, 0.5, 5.0).unwrap();
        assert_eq!(p.rho0.as_slice(), &[0.0, 0.0, 0.0]);
        assert_eq!(p.a0[(0, 0)], 0.5);
        assert_eq!(p.a0[(1, 1)], 0.5 / 32.0);
        assert_eq!(p.a0[(2, 2)], 0.5 / 243.0);
        p.validate().unwrap();
    }
}
