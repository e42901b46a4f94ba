//! Negative-binomial outcome computations with log link.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson};

use crate::error::{GbmError, Result};
use crate::special::{ln_gamma, ln_gamma_ratio, psi_delta, psi_prime_delta};

/// Linear predictors are clamped to this magnitude before exponentiation.
pub const ETA_CLAMP: f64 = 700.0;

/// log(1 + x) with full precision near zero.
pub fn log1p_stable(x: f64) -> f64 {
    x.ln_1p()
}

/// log NB(y | mean mu, inverse dispersion r).
pub fn nb_log_pmf(y: f64, mu: f64, r: f64) -> Result<f64> {
    if !(mu > 0.0) || !(r > 0.0) {
        return Err(GbmError::Domain(format!("NB requires mu > 0 and r > 0, got mu={mu}, r={r}")));
    }
    Ok(nb_log_pmf_unchecked(y, mu, r))
}

#[inline]
pub(crate) fn nb_log_pmf_unchecked(y: f64, mu: f64, r: f64) -> f64 {
    let count_term = if y == 0.0 { 0.0 } else { -y * (r / mu).ln_1p() };
    ln_gamma_ratio(y, r) - ln_gamma(y + 1.0) + count_term - r * (mu / r).ln_1p()
}

/// Draws from NB(mu, r) as a gamma-Poisson mixture.
pub fn sample_nb<R: Rng + ?Sized>(rng: &mut R, mu: f64, r: f64) -> u64 {
    let rate = Gamma::new(r, mu / r).map(|g| g.sample(rng)).unwrap_or(mu);
    sample_poisson(rng, rate)
}

pub fn sample_poisson<R: Rng + ?Sized>(rng: &mut R, lambda: f64) -> u64 {
    if !(lambda > 0.0) {
        return 0;
    }
    match Poisson::new(lambda) {
        Ok(p) => {
            let draw: f64 = p.sample(rng);
            draw as u64
        }
        Err(_) => lambda.round() as u64,
    }
}

/// Means, inverse dispersions, Fisher weights and score residuals.
#[derive(Debug, Clone)]
pub struct NbWorkspace {
    pub mu: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub e: DMatrix<f64>,
    /// Number of linear-predictor entries clamped before exponentiation.
    pub clamped: usize,
}

/// Inverse dispersions r_ij = exp(−s_i − t_j − ω).
pub fn inverse_dispersions(s: &DVector<f64>, t: &DVector<f64>, omega: f64) -> DMatrix<f64> {
    DMatrix::from_fn(s.len(), t.len(), |i, j| (-s[i] - t[j] - omega).exp())
}

pub fn compute_workspace(
    y: &DMatrix<f64>,
    eta: &DMatrix<f64>,
    s: &DVector<f64>,
    t: &DVector<f64>,
    omega: f64,
) -> Result<NbWorkspace> {
    if y.shape() != eta.shape() || s.len() != y.nrows() || t.len() != y.ncols() {
        return Err(GbmError::Shape("workspace inputs disagree in shape".into()));
    }
    if eta.iter().any(|v| !v.is_finite()) {
        return Err(GbmError::Numeric("linear predictor is not finite".into()));
    }
    let mut clamped = 0;
    let mu = eta.map(|e| {
        if e.abs() > ETA_CLAMP {
            clamped += 1;
        }
        e.clamp(-ETA_CLAMP, ETA_CLAMP).exp()
    });
    let r = inverse_dispersions(s, t, omega);
    let w = mu.zip_map(&r, |m, rr| rr * m / (rr + m));
    let e = DMatrix::from_fn(y.nrows(), y.ncols(), |i, j| {
        let (m, rr) = (mu[(i, j)], r[(i, j)]);
        (y[(i, j)] - m) * rr / (rr + m)
    });
    Ok(NbWorkspace { mu, r, w, e, clamped })
}

/// Total NB log-likelihood.
pub fn log_likelihood(y: &DMatrix<f64>, ws: &NbWorkspace) -> f64 {
    y.iter().zip(ws.mu.iter()).zip(ws.r.iter()).map(|((&yv, &m), &r)| nb_log_pmf_unchecked(yv, m, r)).sum()
}

/// First and second derivatives of each log-likelihood term with respect
/// to its log-dispersion offset.
#[derive(Debug, Clone)]
pub struct DispersionDerivs {
    pub delta: DMatrix<f64>,
    pub delta_prime: DMatrix<f64>,
}

#[inline]
pub(crate) fn dispersion_terms(y: f64, mu: f64, r: f64) -> (f64, f64) {
    let ratio = mu / r;
    let delta = -r * (psi_delta(y, r) - ratio.ln_1p() - (y - mu) / (r + mu));
    let delta_prime = -delta + r * r * psi_prime_delta(y, r) + (y + mu * ratio) / (1.0 + ratio).powi(2);
    (delta, delta_prime)
}

pub fn dispersion_derivatives(y: &DMatrix<f64>, mu: &DMatrix<f64>, r: &DMatrix<f64>) -> DispersionDerivs {
    let (rows, cols) = y.shape();
    let mut delta = DMatrix::zeros(rows, cols);
    let mut delta_prime = DMatrix::zeros(rows, cols);
    for idx in 0..rows * cols {
        let (d, dp) = dispersion_terms(y[idx], mu[idx], r[idx]);
        delta[idx] = d;
        delta_prime[idx] = dp;
    }
    DispersionDerivs { delta, delta_prime }
}
