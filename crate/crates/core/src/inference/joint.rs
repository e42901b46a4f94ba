//! Joint uncertainty in (U, V) under the orthogonality constraints.

use nalgebra::DMatrix;

use super::context::InferenceContext;
use crate::error::{GbmError, Result};
use crate::linalg::{general_inverse, weighted_gram};

/// Jacobians of the constraints XᵀU = 0, UᵀU = I (and ZᵀV = 0, VᵀV = I)
/// with respect to vec(Uᵀ) and vec(Vᵀ).
#[derive(Debug, Clone)]
pub struct ConstraintJacobians {
    /// (MK + M²) × IM.
    pub ju: DMatrix<f64>,
    /// (ML + M²) × JM.
    pub jv: DMatrix<f64>,
}

/// Constraint Jacobian for a factor with orthogonality to `design`.
///
/// Rows k·M + a hold ∂(XᵀU)_{ka}; the remaining rows hold ∂(UᵀU)_{ab},
/// either for every (a, b) or, when `reduced`, only for a ≤ b so that the
/// rows are linearly independent.
pub fn factor_constraint_jacobian(design: &DMatrix<f64>, factor: &DMatrix<f64>, reduced: bool) -> DMatrix<f64> {
    let (n, p) = design.shape();
    let m = factor.ncols();
    let pairs: Vec<(usize, usize)> =
        (0..m).flat_map(|a| (0..m).map(move |b| (a, b))).filter(|&(a, b)| !reduced || a <= b).collect();
    let mut jac = DMatrix::zeros(p * m + pairs.len(), n * m);
    for i in 0..n {
        for k in 0..p {
            for a in 0..m {
                jac[(k * m + a, i * m + a)] = design[(i, k)];
            }
        }
        for (row, &(a, b)) in pairs.iter().enumerate() {
            let row = p * m + row;
            jac[(row, i * m + b)] += factor[(i, a)];
            jac[(row, i * m + a)] += factor[(i, b)];
        }
    }
    jac
}

pub fn constraint_jacobians(ctx: &InferenceContext) -> ConstraintJacobians {
    ConstraintJacobians {
        ju: factor_constraint_jacobian(&ctx.cov.x, &ctx.params.u, false),
        jv: factor_constraint_jacobian(&ctx.cov.z, &ctx.params.v, false),
    }
}

/// Cross information between vec(Uᵀ) and vec(Vᵀ): block (i, j) is
/// w_ij (D V_{j:})(D U_{i:})ᵀ.
pub fn cross_information_uv(ctx: &InferenceContext) -> DMatrix<f64> {
    let (rows, cols) = ctx.y.shape();
    let m = ctx.latent_rank();
    let ud = ctx.params.scaled_u();
    let vd = ctx.params.scaled_v();
    let mut fuv = DMatrix::zeros(rows * m, cols * m);
    for i in 0..rows {
        for j in 0..cols {
            let w = ctx.ws.w[(i, j)];
            for a in 0..m {
                for b in 0..m {
                    fuv[(i * m + a, j * m + b)] = w * vd[(j, a)] * ud[(i, b)];
                }
            }
        }
    }
    fuv
}

/// Block-diagonal regularized Fisher information for vec(Vᵀ).
pub(crate) fn fisher_v_blocks(ctx: &InferenceContext) -> Vec<DMatrix<f64>> {
    let m = ctx.latent_rank();
    let ud = ctx.params.scaled_u();
    (0..ctx.y.ncols())
        .map(|j| weighted_gram(&ud, ctx.ws.w.column(j).iter()) + DMatrix::identity(m, m) * ctx.prior.lambda_v)
        .collect()
}

/// Constrained variances of U (I×M) and V (J×M).
#[derive(Debug, Clone)]
pub struct JointUv {
    pub var_u: DMatrix<f64>,
    pub var_v: DMatrix<f64>,
}

/// Diagonal of the (U, V) block of the inverse constraint-augmented Fisher
/// information, computed by block elimination of U followed by one bordered
/// solve for V.
pub fn joint_uv_uncertainty(ctx: &InferenceContext) -> Result<JointUv> {
    let (rows, cols) = ctx.y.shape();
    let m = ctx.latent_rank();
    if m == 0 {
        return Ok(JointUv { var_u: DMatrix::zeros(rows, 0), var_v: DMatrix::zeros(cols, 0) });
    }
    let ju = factor_constraint_jacobian(&ctx.cov.x, &ctx.params.u, true);
    let jv = factor_constraint_jacobian(&ctx.cov.z, &ctx.params.v, true);
    let nu = ju.nrows();
    let nv = jv.nrows();
    let fuv = cross_information_uv(ctx);

    let mut fj = DMatrix::zeros(rows * m, nu);
    let mut ffuv = DMatrix::zeros(rows * m, cols * m);
    for i in 0..rows {
        let inv = &ctx.inv_fu[i];
        fj.view_mut((i * m, 0), (m, nu)).copy_from(&(inv * ju.columns(i * m, m).transpose()));
        ffuv.view_mut((i * m, 0), (m, cols * m)).copy_from(&(inv * fuv.rows(i * m, m)));
    }
    let fuv_fj = fuv.tr_mul(&fj);
    let inv_jfj = general_inverse(&(&ju * &fj))
        .map_err(|_| GbmError::Rank("constraints XᵀU = 0, UᵀU = I are linearly dependent at the estimate".into()))?;
    let fuv_ffuv = fuv.tr_mul(&ffuv);

    let mut schur = -fuv_ffuv + &fuv_fj * &inv_jfj * fuv_fj.transpose();
    for (j, block) in fisher_v_blocks(ctx).iter().enumerate() {
        let mut view = schur.view_mut((j * m, j * m), (m, m));
        view += block;
    }
    let n = cols * m + nv;
    let mut bordered = DMatrix::zeros(n, n);
    bordered.view_mut((0, 0), (cols * m, cols * m)).copy_from(&schur);
    bordered.view_mut((cols * m, 0), (nv, cols * m)).copy_from(&jv);
    bordered.view_mut((0, cols * m), (cols * m, nv)).copy_from(&jv.transpose());
    let inv_bordered = general_inverse(&bordered)
        .map_err(|_| GbmError::Rank("constraints ZᵀV = 0, VᵀV = I are linearly dependent at the estimate".into()))?;
    let c_block = inv_bordered.view((0, 0), (cols * m, cols * m)).into_owned();

    let fuv_d = ffuv.transpose() - &fuv_fj * &inv_jfj * fj.transpose();
    let inv_jfj_fjt = &inv_jfj * fj.transpose();
    let c_fuv_d = &c_block * &fuv_d;

    let mut var_u = DMatrix::zeros(rows, m);
    for i in 0..rows {
        for a in 0..m {
            let col = i * m + a;
            let d = ctx.inv_fu[i][(a, a)];
            let f = fj.row(col).transpose().dot(&inv_jfj_fjt.column(col));
            let g = fuv_d.column(col).dot(&c_fuv_d.column(col));
            var_u[(i, a)] = d - f + g;
        }
    }
    let var_v = DMatrix::from_fn(cols, m, |j, a| c_block[(j * m + a, j * m + a)]);
    Ok(JointUv { var_u, var_v })
}
