use nalgebra::{DMatrix, DVector};

use crate::error::{GbmError, Result};
use crate::linalg::spd_solve;

/// Prior precision added to a Fisher block.
#[derive(Debug, Clone, Copy)]
pub enum Penalty<'a> {
    Scalar(f64),
    Diagonal(&'a DVector<f64>),
}

impl Penalty<'_> {
    fn at(&self, idx: usize) -> f64 {
        match self {
            Penalty::Scalar(l) => *l,
            Penalty::Diagonal(d) => d[idx],
        }
    }
}

/// One regularized Fisher-scoring step with its root-mean-square capped at
/// `rho`.
///
/// Solves `(fisher + Λ) ξ = grad − Λ β` and returns `β + ξ·min(1, ρ√n/‖ξ‖)`,
/// where `grad` is the log-likelihood gradient and `Λ` the prior precision.
pub fn bounded_fisher_step(
    beta: &DVector<f64>,
    grad: &DVector<f64>,
    fisher: &DMatrix<f64>,
    penalty: Penalty<'_>,
    rho: f64,
) -> Result<DVector<f64>> {
    let n = beta.len();
    if grad.len() != n || fisher.shape() != (n, n) {
        return Err(GbmError::Shape(format!(
            "step of dimension {n} got gradient {} and Fisher {:?}",
            grad.len(),
            fisher.shape()
        )));
    }
    if grad.iter().chain(fisher.iter()).any(|v| !v.is_finite()) {
        return Err(GbmError::Numeric("non-finite gradient or Fisher information".into()));
    }
    let mut lhs = fisher.clone();
    let mut rhs = grad.clone();
    for idx in 0..n {
        let lam = penalty.at(idx);
        lhs[(idx, idx)] += lam;
        rhs[idx] -= lam * beta[idx];
    }
    let xi = spd_solve(&lhs, &rhs)?;
    Ok(beta + capped(xi, rho))
}

pub(crate) fn capped(xi: DVector<f64>, rho: f64) -> DVector<f64> {
    let norm = xi.norm();
    let limit = rho * (xi.len() as f64).sqrt();
    if norm > limit {
        xi * (limit / norm)
    } else {
        xi
    }
}
