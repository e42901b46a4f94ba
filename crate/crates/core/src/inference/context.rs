//! Quantities shared by every inference step, computed once at the estimate.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{GbmError, Result};
use crate::estimation::fisher_c;
use crate::linalg::{spd_inverse, weighted_gram};
use crate::model::{compute_eta, CovariateSet, GbmParams, PriorConfig};
use crate::nb::{compute_workspace, dispersion_derivatives, NbWorkspace};

/// Workspace, derivative matrices and conditional inverse Fisher blocks for
/// one orientation of the data. The column-side quantities come from the
/// transposed context.
#[derive(Debug, Clone)]
pub struct InferenceContext {
    pub y: DMatrix<f64>,
    pub cov: CovariateSet,
    pub params: GbmParams,
    pub prior: PriorConfig,
    pub ws: NbWorkspace,
    /// ∂w/∂η per entry.
    pub dwm: DMatrix<f64>,
    /// ∂e/∂η per entry.
    pub dem: DMatrix<f64>,
    /// EᵀX, row j is the likelihood gradient for row j of A.
    pub grad_a: DMatrix<f64>,
    /// vec(XᵀEZ).
    pub grad_c: DVector<f64>,
    /// Gradient of the log posterior in each sᵢ.
    pub grad_s: DVector<f64>,
    /// ∂δ/∂η per entry.
    pub q: DMatrix<f64>,
    /// q − p is the derivative of δ′ in η.
    pub p: DMatrix<f64>,
    /// (XᵀW_{*j}X + λ_a I)⁻¹ for each column j.
    pub inv_fa: Vec<DMatrix<f64>>,
    /// Inverse regularized Fisher information for vec(C).
    pub inv_fc: DMatrix<f64>,
    /// ((VD)ᵀW_{i*}(VD) + λ_u I)⁻¹ for each row i; empty when M = 0.
    pub inv_fu: Vec<DMatrix<f64>>,
    /// 1/(λ_s − Σⱼ δ′ᵢⱼ), made positive.
    pub inv_fs: DVector<f64>,
    /// Row j is invFa_j · grad_a_j.
    pub step_a: DMatrix<f64>,
    /// invFc · grad_c.
    pub step_c: DVector<f64>,
    pub warnings: Vec<String>,
}

impl InferenceContext {
    pub fn new(y: &DMatrix<f64>, cov: &CovariateSet, params: &GbmParams, prior: &PriorConfig) -> Result<Self> {
        params.check_shapes(cov)?;
        if y.shape() != (cov.nrows(), cov.ncols()) {
            return Err(GbmError::Shape(format!(
                "counts are {}x{} but covariates describe {}x{}",
                y.nrows(),
                y.ncols(),
                cov.nrows(),
                cov.ncols()
            )));
        }
        let eta = compute_eta(params, cov)?;
        let ws = compute_workspace(y, &eta, &params.s, &params.t, params.omega)?;
        let (rows, cols) = y.shape();
        let mut warnings = Vec::new();

        let dwm = DMatrix::from_fn(rows, cols, |i, j| {
            let (mu, r) = (ws.mu[(i, j)], ws.r[(i, j)]);
            mu * r * r / ((r + mu) * (r + mu))
        });
        let dem = DMatrix::from_fn(rows, cols, |i, j| {
            let (mu, r) = (ws.mu[(i, j)], ws.r[(i, j)]);
            -mu * r * (r + y[(i, j)]) / ((r + mu) * (r + mu))
        });
        let q = DMatrix::from_fn(rows, cols, |i, j| -ws.w[(i, j)] * ws.e[(i, j)] / ws.r[(i, j)]);
        let p = DMatrix::from_fn(rows, cols, |i, j| 2.0 * ws.w[(i, j)] * q[(i, j)] / ws.mu[(i, j)]);

        let grad_a = ws.e.tr_mul(&cov.x);
        let grad_c_mat = cov.x.tr_mul(&ws.e) * &cov.z;
        let grad_c = DVector::from_column_slice(grad_c_mat.as_slice());

        let derivs = dispersion_derivatives(y, &ws.mu, &ws.r);
        let grad_s =
            DVector::from_fn(rows, |i, _| -prior.lambda_s * (params.s[i] - prior.mean_s) + derivs.delta.row(i).sum());
        let mut inv_fs = DVector::zeros(rows);
        for i in 0..rows {
            let denom = prior.lambda_s - derivs.delta_prime.row(i).sum();
            if !denom.is_finite() || denom == 0.0 {
                return Err(GbmError::Numeric(format!("dispersion information for row {} is {denom}", i + 1)));
            }
            if denom < 0.0 {
                warnings.push(format!(
                    "observed dispersion information for row {} is negative ({denom:.3e}); using its absolute value",
                    i + 1
                ));
            }
            inv_fs[i] = 1.0 / denom.abs();
        }

        let k = cov.k();
        let inv_fa: Vec<DMatrix<f64>> = (0..cols)
            .into_par_iter()
            .map(|j| {
                let f = weighted_gram(&cov.x, ws.w.column(j).iter()) + DMatrix::identity(k, k) * prior.lambda_a;
                spd_inverse(&f).map_err(|e| e.context(format!("Fisher block for A row {}", j + 1)))
            })
            .collect::<Result<_>>()?;
        let kl = k * cov.l();
        let inv_fc = spd_inverse(&(fisher_c(cov, &ws.w) + DMatrix::identity(kl, kl) * prior.lambda_c))
            .map_err(|e| e.context("Fisher block for C"))?;

        let m = params.d.len();
        let vd = params.scaled_v();
        let inv_fu: Vec<DMatrix<f64>> = if m == 0 {
            Vec::new()
        } else {
            (0..rows)
                .into_par_iter()
                .map(|i| {
                    let f = weighted_gram(&vd, ws.w.row(i).iter()) + DMatrix::identity(m, m) * prior.lambda_u;
                    spd_inverse(&f).map_err(|e| e.context(format!("Fisher block for U row {}", i + 1)))
                })
                .collect::<Result<_>>()?
        };

        let mut step_a = DMatrix::zeros(cols, k);
        for (j, inv) in inv_fa.iter().enumerate() {
            let h = inv * grad_a.row(j).transpose();
            step_a.set_row(j, &h.transpose());
        }
        let step_c = &inv_fc * &grad_c;

        Ok(Self {
            y: y.clone(),
            cov: cov.clone(),
            params: params.clone(),
            prior: *prior,
            ws,
            dwm,
            dem,
            grad_a,
            grad_c,
            grad_s,
            q,
            p,
            inv_fa,
            inv_fc,
            inv_fu,
            inv_fs,
            step_a,
            step_c,
            warnings,
        })
    }

    /// The same problem with rows and columns exchanged.
    pub fn transposed(&self) -> Result<Self> {
        Self::new(&self.y.transpose(), &self.cov.transpose(), &self.params.transpose(), &self.prior.transpose())
    }

    pub fn latent_rank(&self) -> usize {
        self.params.d.len()
    }

    /// Conditional variances of A: diagonals of invFa_j laid out as J×K.
    pub fn conditional_var_a(&self) -> DMatrix<f64> {
        let k = self.cov.k();
        DMatrix::from_fn(self.inv_fa.len(), k, |j, kk| self.inv_fa[j][(kk, kk)])
    }

    /// Conditional variances of U: diagonals of invFu_i laid out as I×M.
    pub fn conditional_var_u(&self) -> DMatrix<f64> {
        let m = self.latent_rank();
        DMatrix::from_fn(self.inv_fu.len(), m, |i, mm| self.inv_fu[i][(mm, mm)])
    }

    /// One-step map θ̂ + F⁻¹g for the row-side blocks, evaluated at the
    /// current parameters: (A, vec(C), S). Finite differences of this map
    /// define the propagation Jacobians.
    pub fn one_step_targets(&self) -> (DMatrix<f64>, DVector<f64>, DVector<f64>) {
        let a = &self.params.a + &self.step_a;
        let c = DVector::from_column_slice(self.params.c.as_slice()) + &self.step_c;
        let s = &self.params.s + self.inv_fs.component_mul(&self.grad_s);
        (a, c, s)
    }
}

/// Per-component inverse Fisher blocks treating all other blocks as known.
#[derive(Debug, Clone)]
pub struct ConditionalInverses {
    pub fa: Vec<DMatrix<f64>>,
    pub fb: Vec<DMatrix<f64>>,
    pub fc: DMatrix<f64>,
    pub fu: Vec<DMatrix<f64>>,
    pub fv: Vec<DMatrix<f64>>,
    pub fs: DVector<f64>,
    pub ft: DVector<f64>,
}

pub fn conditional_inverses(rows: &InferenceContext, cols: &InferenceContext) -> ConditionalInverses {
    ConditionalInverses {
        fa: rows.inv_fa.clone(),
        fb: cols.inv_fa.clone(),
        fc: rows.inv_fc.clone(),
        fu: rows.inv_fu.clone(),
        fv: cols.inv_fu.clone(),
        fs: rows.inv_fs.clone(),
        ft: cols.inv_fs.clone(),
    }
}

/// Reorders vec(Cᵀ) (L×K column-major) into vec(C) (K×L column-major).
pub(crate) fn untranspose_vec(v: &DVector<f64>, k: usize, l: usize) -> DVector<f64> {
    let ct = DMatrix::from_column_slice(l, k, v.as_slice());
    DVector::from_column_slice(ct.transpose().as_slice())
}
