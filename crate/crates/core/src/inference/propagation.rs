//! Delta propagation of uncertainty along the dependency edges between
//! blocks.
//!
//! Each edge is the Jacobian of a one-step map θ̂ + F(ν)⁻¹g(ν) with respect
//! to a source block ν, contracted with a diagonal source covariance. Only
//! row-side edges are written out; column-side edges reuse them on the
//! transposed context.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::context::{untranspose_vec, InferenceContext};
use crate::error::{GbmError, Result};

/// Parameter blocks that carry standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Block {
    A,
    B,
    C,
    U,
    V,
    S,
    T,
}

impl Block {
    /// Length of the block's vectorization: vec(Aᵀ), vec(Bᵀ), vec(C),
    /// vec(Uᵀ), vec(Vᵀ), S, T.
    pub fn len(self, ctx: &InferenceContext) -> usize {
        let (i, j) = ctx.y.shape();
        let (k, l, m) = (ctx.cov.k(), ctx.cov.l(), ctx.latent_rank());
        match self {
            Block::A => j * k,
            Block::B => i * l,
            Block::C => k * l,
            Block::U => i * m,
            Block::V => j * m,
            Block::S => i,
            Block::T => j,
        }
    }

    fn transposed(self) -> Self {
        match self {
            Block::A => Block::B,
            Block::B => Block::A,
            Block::C => Block::C,
            Block::U => Block::V,
            Block::V => Block::U,
            Block::S => Block::T,
            Block::T => Block::S,
        }
    }
}

/// A propagation edge, from source block to target block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Edge {
    pub source: Block,
    pub target: Block,
}

impl Edge {
    pub const ALL: [Edge; 14] = [
        Edge { source: Block::U, target: Block::A },
        Edge { source: Block::V, target: Block::A },
        Edge { source: Block::U, target: Block::B },
        Edge { source: Block::V, target: Block::B },
        Edge { source: Block::A, target: Block::C },
        Edge { source: Block::B, target: Block::C },
        Edge { source: Block::A, target: Block::S },
        Edge { source: Block::B, target: Block::S },
        Edge { source: Block::U, target: Block::S },
        Edge { source: Block::V, target: Block::S },
        Edge { source: Block::A, target: Block::T },
        Edge { source: Block::B, target: Block::T },
        Edge { source: Block::U, target: Block::T },
        Edge { source: Block::V, target: Block::T },
    ];

    fn is_row_side(self) -> bool {
        matches!(self.target, Block::A | Block::S) || (self.target == Block::C && self.source == Block::A)
    }

    fn transposed(self) -> Self {
        Edge { source: self.source.transposed(), target: self.target.transposed() }
    }
}

impl std::fmt::Display for Edge {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:?}->{:?}", self.source, self.target)
    }
}

/// c_ij = ∂e_ij/∂η − ∂w_ij/∂η · x_iᵀ invFa_j gradA_j: the scalar through
/// which η_ij moves the one-step map for row j of A.
fn a_coefficients(ctx: &InferenceContext) -> DMatrix<f64> {
    let x = &ctx.cov.x;
    let fitted = x * ctx.step_a.transpose();
    ctx.dem.clone() - ctx.dwm.component_mul(&fitted)
}

/// Same role as `a_coefficients` for the one-step map of vec(C).
fn c_coefficients(ctx: &InferenceContext) -> DMatrix<f64> {
    let (k, l) = (ctx.cov.k(), ctx.cov.l());
    let step = DMatrix::from_column_slice(k, l, ctx.step_c.as_slice());
    let fitted = &ctx.cov.x * step * ctx.cov.z.transpose();
    ctx.dem.clone() - ctx.dwm.component_mul(&fitted)
}

/// κ_ij = ∂(invFs_i gradS_i)/∂η_ij.
fn s_coefficients(ctx: &InferenceContext) -> DMatrix<f64> {
    let (rows, cols) = ctx.y.shape();
    DMatrix::from_fn(rows, cols, |i, j| {
        let fs = ctx.inv_fs[i];
        -fs * fs * (ctx.q[(i, j)] - ctx.p[(i, j)]) * ctx.grad_s[i] + fs * ctx.q[(i, j)]
    })
}

/// ∂ĥ_target/∂ν_source for one source coordinate, as a column over the
/// target's vectorization. `rows` and `cols` are the context and its
/// transpose.
pub fn jacobian_column(
    rows: &InferenceContext,
    cols: &InferenceContext,
    edge: Edge,
    source: usize,
) -> Result<DVector<f64>> {
    let n = edge.source.len(rows);
    if source >= n {
        return Err(GbmError::Index(format!("source coordinate {source} out of range for {edge} ({n})")));
    }
    if edge.is_row_side() {
        return Ok(row_side_column(rows, edge, source));
    }
    let col = row_side_column(cols, edge.transposed(), source);
    if edge.target == Block::C {
        return Ok(untranspose_vec(&col, rows.cov.k(), rows.cov.l()));
    }
    Ok(col)
}

fn row_side_column(ctx: &InferenceContext, edge: Edge, source: usize) -> DVector<f64> {
    let (rows, cols) = ctx.y.shape();
    let (k, m) = (ctx.cov.k(), ctx.latent_rank());
    let x = &ctx.cov.x;
    match (edge.source, edge.target) {
        (Block::U, Block::A) => {
            let (i, mm) = (source / m, source % m);
            let coef = a_coefficients(ctx);
            let vd = ctx.params.scaled_v();
            let xi = x.row(i).transpose();
            let mut out = DVector::zeros(cols * k);
            for j in 0..cols {
                let col = &ctx.inv_fa[j] * &xi * (coef[(i, j)] * vd[(j, mm)]);
                out.rows_mut(j * k, k).copy_from(&col);
            }
            out
        }
        (Block::V, Block::A) => {
            let (j, mm) = (source / m, source % m);
            let coef = a_coefficients(ctx);
            let ud = ctx.params.scaled_u();
            let weights = coef.column(j).component_mul(&ud.column(mm));
            let mut out = DVector::zeros(cols * k);
            out.rows_mut(j * k, k).copy_from(&(&ctx.inv_fa[j] * x.tr_mul(&weights)));
            out
        }
        (Block::A, Block::C) => {
            let (j, kk) = (source / k, source % k);
            let coef = c_coefficients(ctx);
            let weights = coef.column(j).component_mul(&x.column(kk));
            let r = x.tr_mul(&weights);
            let z = ctx.cov.z.row(j).transpose();
            let g = z.kronecker(&r);
            &ctx.inv_fc * g
        }
        (Block::A, Block::S) => {
            let (j, kk) = (source / k, source % k);
            let kappa = s_coefficients(ctx);
            DVector::from_fn(rows, |i, _| kappa[(i, j)] * x[(i, kk)])
        }
        (Block::B, Block::S) => {
            let l = ctx.cov.l();
            let (i, ll) = (source / l, source % l);
            let kappa = s_coefficients(ctx);
            let mut out = DVector::zeros(rows);
            out[i] = kappa.row(i).transpose().dot(&ctx.cov.z.column(ll));
            out
        }
        (Block::U, Block::S) => {
            let (i, mm) = (source / m, source % m);
            let kappa = s_coefficients(ctx);
            let vd = ctx.params.scaled_v();
            let mut out = DVector::zeros(rows);
            out[i] = kappa.row(i).transpose().dot(&vd.column(mm));
            out
        }
        (Block::V, Block::S) => {
            let (j, mm) = (source / m, source % m);
            let kappa = s_coefficients(ctx);
            let ud = ctx.params.scaled_u();
            DVector::from_fn(rows, |i, _| kappa[(i, j)] * ud[(i, mm)])
        }
        _ => unreachable!("edge {edge} is not row-side"),
    }
}

/// Variance added to A (J×K) by uncertainty in U with per-entry variances
/// `var_u` (I×M).
pub fn var_a_from_u(ctx: &InferenceContext, var_u: &DMatrix<f64>) -> DMatrix<f64> {
    let (rows, cols) = ctx.y.shape();
    let (k, m) = (ctx.cov.k(), ctx.latent_rank());
    if m == 0 {
        return DMatrix::zeros(cols, k);
    }
    let coef = a_coefficients(ctx);
    let vd = ctx.params.scaled_v();
    let x = &ctx.cov.x;
    let per_col: Vec<DVector<f64>> = (0..cols)
        .into_par_iter()
        .map(|j| {
            let weights =
                DVector::from_fn(rows, |i, _| (0..m).map(|a| vd[(j, a)].powi(2) * var_u[(i, a)]).sum::<f64>());
            let mut out = DVector::zeros(k);
            for i in 0..rows {
                if weights[i] == 0.0 {
                    continue;
                }
                let col = &ctx.inv_fa[j] * x.row(i).transpose() * coef[(i, j)];
                out += col.map(|v| v * v) * weights[i];
            }
            out
        })
        .collect();
    stack_rows(&per_col, k)
}

/// Variance added to A (J×K) by uncertainty in V with per-entry variances
/// `var_v` (J×M).
pub fn var_a_from_v(ctx: &InferenceContext, var_v: &DMatrix<f64>) -> DMatrix<f64> {
    let cols = ctx.y.ncols();
    let (k, m) = (ctx.cov.k(), ctx.latent_rank());
    if m == 0 {
        return DMatrix::zeros(cols, k);
    }
    let coef = a_coefficients(ctx);
    let ud = ctx.params.scaled_u();
    let x = &ctx.cov.x;
    let per_col: Vec<DVector<f64>> = (0..cols)
        .into_par_iter()
        .map(|j| {
            let mut out = DVector::zeros(k);
            for a in 0..m {
                let weights = coef.column(j).component_mul(&ud.column(a));
                let da = &ctx.inv_fa[j] * x.tr_mul(&weights);
                out += da.map(|v| v * v) * var_v[(j, a)];
            }
            out
        })
        .collect();
    stack_rows(&per_col, k)
}

/// Variance added to vec(C) by uncertainty in A, contracted with the
/// conditional blocks invFa_j.
pub fn var_c_from_a(ctx: &InferenceContext) -> DVector<f64> {
    let cols = ctx.y.ncols();
    let (k, l) = (ctx.cov.k(), ctx.cov.l());
    let coef = c_coefficients(ctx);
    let x = &ctx.cov.x;
    (0..cols)
        .into_par_iter()
        .map(|j| {
            let weighted = DMatrix::from_fn(x.nrows(), k, |i, kk| x[(i, kk)] * coef[(i, j)]);
            let r = x.tr_mul(&weighted);
            let z = ctx.cov.z.row(j).transpose();
            let dc = &ctx.inv_fc * z.kronecker(&r);
            let contracted = &dc * &ctx.inv_fa[j];
            DVector::from_fn(k * l, |row, _| contracted.row(row).dot(&dc.row(row)))
        })
        .reduce(|| DVector::zeros(k * l), |acc, v| acc + v)
}

/// Variance added to S by uncertainty in A, B, U and V, in that order.
#[derive(Debug, Clone)]
pub struct DispersionPropagation {
    pub from_a: DVector<f64>,
    pub from_b: DVector<f64>,
    pub from_u: DVector<f64>,
    pub from_v: DVector<f64>,
}

pub fn var_s_from(
    ctx: &InferenceContext,
    var_a: &DMatrix<f64>,
    var_b: &DMatrix<f64>,
    var_u: &DMatrix<f64>,
    var_v: &DMatrix<f64>,
) -> DispersionPropagation {
    let rows = ctx.y.nrows();
    let kappa = s_coefficients(ctx);
    let kappa_sq = kappa.map(|v| v * v);
    let x_sq = ctx.cov.x.map(|v| v * v);

    let from_a = (&kappa_sq * var_a).component_mul(&x_sq).column_sum();
    let kz = &kappa * &ctx.cov.z;
    let from_b = kz.map(|v| v * v).component_mul(var_b).column_sum();
    let (from_u, from_v) = if ctx.latent_rank() == 0 {
        (DVector::zeros(rows), DVector::zeros(rows))
    } else {
        let ud = ctx.params.scaled_u();
        let kv = &kappa * ctx.params.scaled_v();
        let from_u = kv.map(|v| v * v).component_mul(var_u).column_sum();
        let from_v = (&kappa_sq * var_v).component_mul(&ud.map(|v| v * v)).column_sum();
        (from_u, from_v)
    };
    DispersionPropagation { from_a, from_b, from_u, from_v }
}

fn stack_rows(rows: &[DVector<f64>], width: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), width, |r, c| rows[r][c])
}
