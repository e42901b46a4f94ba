//! Per-component optimization-projection updates.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::projection::{project_a, project_b, project_g, project_h, project_s, project_t};
use super::step::{bounded_fisher_step, Penalty};
use crate::error::{GbmError, Result};
use crate::linalg::weighted_gram;
use crate::model::{compute_eta, CovariateSet, FitConfig, GbmParams, PriorConfig};
use crate::nb::{compute_workspace, dispersion_terms, log_likelihood, NbWorkspace};

/// Per-entry maximum step sizes for the dispersion updates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveStepState {
    pub rho_s: DVector<f64>,
    pub rho_t: DVector<f64>,
}

impl AdaptiveStepState {
    pub fn new(rows: usize, cols: usize, rho: f64) -> Self {
        Self { rho_s: DVector::from_element(rows, rho), rho_t: DVector::from_element(cols, rho) }
    }
}

/// Mutable state threaded through the estimation loop.
#[derive(Debug, Clone)]
pub struct FitState<'a> {
    pub y: &'a DMatrix<f64>,
    pub cov: &'a CovariateSet,
    pub prior: PriorConfig,
    pub config: FitConfig,
    pub params: GbmParams,
    pub adapt: AdaptiveStepState,
    pub clamp_events: usize,
    pub warnings: Vec<String>,
}

impl<'a> FitState<'a> {
    pub fn new(
        y: &'a DMatrix<f64>,
        cov: &'a CovariateSet,
        params: GbmParams,
        prior: PriorConfig,
        config: FitConfig,
    ) -> Self {
        let adapt = AdaptiveStepState::new(cov.nrows(), cov.ncols(), config.rho);
        Self { y, cov, prior, config, params, adapt, clamp_events: 0, warnings: Vec::new() }
    }

    /// Recomputes η, μ, r, W and E from the current parameters.
    pub fn workspace(&mut self) -> Result<NbWorkspace> {
        let eta = compute_eta(&self.params, self.cov)?;
        let ws = compute_workspace(self.y, &eta, &self.params.s, &self.params.t, self.params.omega)?;
        self.clamp_events += ws.clamped;
        Ok(ws)
    }

    /// Log-likelihood plus log-prior.
    pub fn objective(&mut self) -> Result<f64> {
        let ws = self.workspace()?;
        Ok(log_likelihood(self.y, &ws) + self.prior.log_prior(&self.params))
    }

    fn warn(&mut self, message: String) {
        log::warn!("{message}");
        self.warnings.push(message);
    }
}

/// Log-likelihood gradients with respect to each bilinear block.
#[derive(Debug, Clone)]
pub struct Gradients {
    /// J×K, row j is the gradient for A's row j.
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DVector<f64>,
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
}

pub fn likelihood_gradients(params: &GbmParams, cov: &CovariateSet, ws: &NbWorkspace) -> Gradients {
    let e = &ws.e;
    let ev = e * &params.v;
    let etu = e.tr_mul(&params.u);
    let d = DVector::from_fn(params.d.len(), |m, _| params.u.column(m).dot(&ev.column(m)));
    Gradients {
        a: e.tr_mul(&cov.x),
        b: e * &cov.z,
        c: cov.x.tr_mul(e) * &cov.z,
        d,
        u: crate::model::scale_columns(&ev, &params.d),
        v: crate::model::scale_columns(&etu, &params.d),
    }
}

/// Independent bounded steps for each unit (a row or column of the data),
/// with `design` holding the per-observation regressors.
///
/// When `by_row` is false the unit is a data column j and the observations
/// run over i; otherwise the unit is a data row.
pub(crate) fn unit_steps(
    design: &DMatrix<f64>,
    ws: &NbWorkspace,
    coef: &DMatrix<f64>,
    penalty: Penalty<'_>,
    rho: f64,
    by_row: bool,
) -> Result<DMatrix<f64>> {
    let units = coef.nrows();
    let p = coef.ncols();
    let rows: Vec<DVector<f64>> = (0..units)
        .into_par_iter()
        .map(|unit| {
            let (w, e): (Vec<f64>, Vec<f64>) = if by_row {
                (ws.w.row(unit).iter().copied().collect(), ws.e.row(unit).iter().copied().collect())
            } else {
                (ws.w.column(unit).iter().copied().collect(), ws.e.column(unit).iter().copied().collect())
            };
            let fisher = weighted_gram(design, w.iter());
            let grad = design.tr_mul(&DVector::from_vec(e));
            let beta = coef.row(unit).transpose();
            bounded_fisher_step(&beta, &grad, &fisher, penalty, rho).map_err(|err| err.context(format!("unit {unit}")))
        })
        .collect::<Result<_>>()?;
    let mut out = DMatrix::zeros(units, p);
    for (unit, row) in rows.iter().enumerate() {
        out.set_row(unit, &row.transpose());
    }
    Ok(out)
}

pub fn update_a(state: &mut FitState) -> Result<()> {
    let ws = state.workspace()?;
    let p = &mut state.params;
    p.a = unit_steps(&state.cov.x, &ws, &p.a, Penalty::Scalar(state.prior.lambda_a), state.config.rho, false)?;
    project_a(p, state.cov);
    Ok(())
}

pub fn update_b(state: &mut FitState) -> Result<()> {
    let ws = state.workspace()?;
    let p = &mut state.params;
    p.b = unit_steps(&state.cov.z, &ws, &p.b, Penalty::Scalar(state.prior.lambda_b), state.config.rho, true)?;
    project_b(p, state.cov);
    Ok(())
}

/// Fisher information for vec(C): Σ_j (z_j z_jᵀ) ⊗ (Xᵀ diag(W_{:j}) X).
pub fn fisher_c(cov: &CovariateSet, w: &DMatrix<f64>) -> DMatrix<f64> {
    let (k, l) = (cov.k(), cov.l());
    let mut f = DMatrix::zeros(k * l, k * l);
    for j in 0..cov.ncols() {
        let block = weighted_gram(&cov.x, w.column(j).iter());
        for la in 0..l {
            for lb in 0..l {
                let zz = cov.z[(j, la)] * cov.z[(j, lb)];
                if zz == 0.0 {
                    continue;
                }
                let mut view = f.view_mut((la * k, lb * k), (k, k));
                view += &block * zz;
            }
        }
    }
    f
}

pub fn update_c(state: &mut FitState) -> Result<()> {
    let ws = state.workspace()?;
    let cov = state.cov;
    let fisher = fisher_c(cov, &ws.w);
    let grad_mat = cov.x.tr_mul(&ws.e) * &cov.z;
    let grad = DVector::from_column_slice(grad_mat.as_slice());
    let beta = DVector::from_column_slice(state.params.c.as_slice());
    let next = bounded_fisher_step(&beta, &grad, &fisher, Penalty::Scalar(state.prior.lambda_c), state.config.rho)?;
    state.params.c = DMatrix::from_column_slice(cov.k(), cov.l(), next.as_slice());
    Ok(())
}

/// Fisher information for diag(D).
pub fn fisher_d(params: &GbmParams, w: &DMatrix<f64>) -> DMatrix<f64> {
    let m = params.d.len();
    let mut f = DMatrix::zeros(m, m);
    let mut g = vec![0.0; m];
    for j in 0..w.ncols() {
        for i in 0..w.nrows() {
            let wij = w[(i, j)];
            for (q, gq) in g.iter_mut().enumerate() {
                *gq = params.u[(i, q)] * params.v[(j, q)];
            }
            for a in 0..m {
                for b in 0..m {
                    f[(a, b)] += wij * g[a] * g[b];
                }
            }
        }
    }
    f
}

pub fn update_d(state: &mut FitState) -> Result<()> {
    if state.params.d.is_empty() {
        return Ok(());
    }
    let ws = state.workspace()?;
    let p = &mut state.params;
    let fisher = fisher_d(p, &ws.w);
    let ev = &ws.e * &p.v;
    let grad = DVector::from_fn(p.d.len(), |m, _| p.u.column(m).dot(&ev.column(m)));
    p.d = bounded_fisher_step(&p.d, &grad, &fisher, Penalty::Scalar(state.prior.lambda_d), state.config.rho)?;
    Ok(())
}

/// Diagonal prior precision on U·diag(D) (or V·diag(D)) induced by the
/// priors on U (or V), with D² floored at 1e-12.
fn induced_precision(d: &DVector<f64>, lambda: f64) -> (DVector<f64>, bool) {
    let mut floored = false;
    let prec = d.map(|dm| {
        let sq = dm * dm;
        if sq < 1e-12 {
            floored = true;
        }
        lambda / sq.max(1e-12)
    });
    (prec, floored)
}

pub fn update_g(state: &mut FitState) -> Result<()> {
    if state.params.d.is_empty() {
        return Ok(());
    }
    let ws = state.workspace()?;
    let (prec, floored) = induced_precision(&state.params.d, state.prior.lambda_u);
    if floored {
        state.warn("tiny latent scale floored when forming the induced prior on U".into());
    }
    let g = state.params.scaled_u();
    let next = unit_steps(&state.params.v, &ws, &g, Penalty::Diagonal(&prec), state.config.rho, true)?;
    if let Some(w) = project_g(&mut state.params, &next, state.cov)? {
        state.warn(w);
    }
    Ok(())
}

pub fn update_h(state: &mut FitState) -> Result<()> {
    if state.params.d.is_empty() {
        return Ok(());
    }
    let ws = state.workspace()?;
    let (prec, floored) = induced_precision(&state.params.d, state.prior.lambda_v);
    if floored {
        state.warn("tiny latent scale floored when forming the induced prior on V".into());
    }
    let h = state.params.scaled_v();
    let next = unit_steps(&state.params.u, &ws, &h, Penalty::Diagonal(&prec), state.config.rho, false)?;
    if let Some(w) = project_h(&mut state.params, &next, state.cov)? {
        state.warn(w);
    }
    Ok(())
}

/// Newton step for one log-dispersion offset with an adaptive cap.
/// Returns (step, new cap, Newton branch taken).
pub(crate) fn dispersion_step(grad: f64, curvature: f64, cap: f64, rho: f64) -> (f64, f64, bool) {
    let newton = curvature < 0.0;
    let xi = if newton { -grad / curvature } else { grad };
    if xi.abs() > cap {
        (cap * xi.signum(), cap / 2.0, newton)
    } else {
        (xi, rho, newton)
    }
}

/// Sums of δ and δ′ along rows (`by_row`) or columns.
fn dispersion_sums(y: &DMatrix<f64>, ws: &NbWorkspace, by_row: bool) -> Vec<(f64, f64)> {
    let (rows, cols) = y.shape();
    let units = if by_row { rows } else { cols };
    (0..units)
        .into_par_iter()
        .map(|unit| {
            let len = if by_row { cols } else { rows };
            (0..len).fold((0.0, 0.0), |(g, h), o| {
                let (i, j) = if by_row { (unit, o) } else { (o, unit) };
                let (d, dp) = dispersion_terms(y[(i, j)], ws.mu[(i, j)], ws.r[(i, j)]);
                (g + d, h + dp)
            })
        })
        .collect()
}

fn update_offsets(state: &mut FitState, rows: bool) -> Result<usize> {
    let ws = state.workspace()?;
    let sums = dispersion_sums(state.y, &ws, rows);
    let (lambda, mean) =
        if rows { (state.prior.lambda_s, state.prior.mean_s) } else { (state.prior.lambda_t, state.prior.mean_t) };
    let rho = state.config.rho;
    let (offsets, caps) = if rows {
        (&mut state.params.s, &mut state.adapt.rho_s)
    } else {
        (&mut state.params.t, &mut state.adapt.rho_t)
    };
    let mut newton_steps = 0;
    for (idx, &(sum_d, sum_dp)) in sums.iter().enumerate() {
        let g = -lambda * (offsets[idx] - mean) + sum_d;
        let h = -lambda + sum_dp;
        if !g.is_finite() || !h.is_finite() {
            let which = if rows { "S" } else { "T" };
            return Err(GbmError::Numeric(format!("non-finite derivative for {which} entry {idx}")));
        }
        let (xi, cap, newton) = dispersion_step(g, h, caps[idx], rho);
        offsets[idx] += xi;
        caps[idx] = cap;
        newton_steps += newton as usize;
    }
    if rows {
        project_s(&mut state.params);
    } else {
        project_t(&mut state.params);
    }
    Ok(newton_steps)
}

/// Updates S; returns how many entries took the Newton branch.
pub fn update_s(state: &mut FitState) -> Result<usize> {
    update_offsets(state, true)
}

/// Updates T; returns how many entries took the Newton branch.
pub fn update_t(state: &mut FitState) -> Result<usize> {
    update_offsets(state, false)
}
