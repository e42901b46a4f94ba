//! Likelihood-preserving projections onto the constrained parameter set.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::linalg::truncated_svd;
use crate::model::{CovariateSet, GbmParams};

/// Moves the Z-component of A into C, keeping η fixed.
pub fn project_a(params: &mut GbmParams, cov: &CovariateSet) {
    let q = &cov.z_pinv * &params.a;
    params.a -= &cov.z * &q;
    params.c += q.transpose();
}

/// Moves the X-component of B into C, keeping η fixed.
pub fn project_b(params: &mut GbmParams, cov: &CovariateSet) {
    let q = &cov.x_pinv * &params.b;
    params.b -= &cov.x * &q;
    params.c += q;
}

/// Replaces U·diag(D) by `g`, then restores XᵀU = 0, ZᵀA = 0 and an
/// orthonormal factorization without changing η. Returns a warning when
/// the singular values are degenerate.
pub fn project_g(params: &mut GbmParams, g: &DMatrix<f64>, cov: &CovariateSet) -> Result<Option<String>> {
    let q = &cov.x_pinv * g;
    let g0 = g - &cov.x * &q;
    params.a += &params.v * q.transpose();
    project_a(params, cov);
    let (u, d, rot) = truncated_svd(&g0, params.d.len())?;
    params.v = &params.v * rot;
    params.u = u;
    params.d = d;
    Ok(degeneracy_warning(&params.d))
}

/// Replaces V·diag(D) by `h`; mirror image of [`project_g`].
pub fn project_h(params: &mut GbmParams, h: &DMatrix<f64>, cov: &CovariateSet) -> Result<Option<String>> {
    let q = &cov.z_pinv * h;
    let h0 = h - &cov.z * &q;
    params.b += &params.u * q.transpose();
    project_b(params, cov);
    let (v, d, rot) = truncated_svd(&h0, params.d.len())?;
    params.u = &params.u * rot;
    params.v = v;
    params.d = d;
    Ok(degeneracy_warning(&params.d))
}

fn degeneracy_warning(d: &DVector<f64>) -> Option<String> {
    let scale = d.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
    for m in 0..d.len() {
        if d[m] <= 1e-10 * scale {
            return Some(format!("latent factor {} has a vanishing singular value", m + 1));
        }
        if m + 1 < d.len() && (d[m] - d[m + 1]).abs() <= 1e-10 * scale {
            return Some(format!("latent factors {} and {} have repeated singular values", m + 1, m + 2));
        }
    }
    None
}

/// Recenters S so that mean(exp S) = 1, compensating through ω.
pub fn project_s(params: &mut GbmParams) {
    let shift = log_mean_exp(&params.s);
    params.s.add_scalar_mut(-shift);
    params.omega += shift;
}

/// Recenters T so that mean(exp T) = 1, compensating through ω.
pub fn project_t(params: &mut GbmParams) {
    let shift = log_mean_exp(&params.t);
    params.t.add_scalar_mut(-shift);
    params.omega += shift;
}

fn log_mean_exp(v: &DVector<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let top = v.max();
    top + (v.iter().map(|x| (x - top).exp()).sum::<f64>() / v.len() as f64).ln()
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Pushes log-dispersions away from the floors with a softplus and
/// re-projects.
pub fn bias_correct_dispersions(params: &mut GbmParams, s_floor: f64, t_floor: f64) {
    params.s.apply(|s| *s = s_floor + softplus(*s - s_floor));
    params.t.apply(|t| *t = t_floor + softplus(*t - t_floor));
    project_s(params);
    project_t(params);
}

/// Sorts factors by decreasing D and makes the first nonzero entry of each
/// U column positive. Returns a warning for all-zero columns.
pub fn finalize_factors(params: &mut GbmParams) -> Option<String> {
    let m = params.d.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| params.d[b].total_cmp(&params.d[a]));
    let (u, v, d) = (params.u.clone(), params.v.clone(), params.d.clone());
    let mut warning = None;
    for (dst, &src) in order.iter().enumerate() {
        let sign = match u.column(src).iter().find(|&&x| x != 0.0) {
            Some(&x) if x < 0.0 => -1.0,
            Some(_) => 1.0,
            None => {
                warning = Some(format!("latent factor {} is identically zero", dst + 1));
                1.0
            }
        };
        params.u.set_column(dst, &(u.column(src) * sign));
        params.v.set_column(dst, &(v.column(src) * sign));
        params.d[dst] = d[src];
    }
    warning
}
