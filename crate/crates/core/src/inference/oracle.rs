//! Dense small-instance oracles for the inference algebra.

use nalgebra::{DMatrix, DVector};

use super::context::InferenceContext;
use super::joint::{cross_information_uv, factor_constraint_jacobian, fisher_v_blocks};
use crate::error::{GbmError, Result};
use crate::linalg::{general_inverse, weighted_gram};
use crate::nb::nb_log_pmf_unchecked;

/// Largest parameter count the dense oracles accept.
pub const ORACLE_MAX_PARAMS: usize = 2000;

/// Leading `f.nrows()` square block of inv([[F, Jᵀ], [J, 0]]).
pub fn bordered_leading_block(f: &DMatrix<f64>, j: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = f.nrows();
    let k = j.nrows();
    if f.ncols() != d || j.ncols() != d {
        return Err(GbmError::Shape(format!(
            "bordered system needs square F and J with {d} columns, got {}x{} and {}x{}",
            f.nrows(),
            f.ncols(),
            j.nrows(),
            j.ncols()
        )));
    }
    let mut full = DMatrix::zeros(d + k, d + k);
    full.view_mut((0, 0), (d, d)).copy_from(f);
    full.view_mut((d, 0), (k, d)).copy_from(j);
    full.view_mut((0, d), (d, k)).copy_from(&j.transpose());
    let inv = general_inverse(&full).map_err(|_| GbmError::Rank("bordered system is singular".into()))?;
    Ok(inv.view((0, 0), (d, d)).into_owned())
}

/// (U, V) variances from direct inversion of the bordered matrix
/// [[Fu, Fuv, Juᵀ, 0], [Fuvᵀ, Fv, 0, Jvᵀ], [Ju, 0, 0, 0], [0, Jv, 0, 0]].
pub fn bordered_uv_oracle(ctx: &InferenceContext) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (rows, cols) = ctx.y.shape();
    let m = ctx.latent_rank();
    let (nu_par, nv_par) = (rows * m, cols * m);
    if nu_par + nv_par > ORACLE_MAX_PARAMS {
        return Err(GbmError::Size(format!("{} latent parameters exceed the oracle limit", nu_par + nv_par)));
    }
    let vd = ctx.params.scaled_v();
    let mut f = DMatrix::zeros(nu_par + nv_par, nu_par + nv_par);
    for i in 0..rows {
        let block = weighted_gram(&vd, ctx.ws.w.row(i).iter()) + DMatrix::identity(m, m) * ctx.prior.lambda_u;
        f.view_mut((i * m, i * m), (m, m)).copy_from(&block);
    }
    for (j, block) in fisher_v_blocks(ctx).iter().enumerate() {
        f.view_mut((nu_par + j * m, nu_par + j * m), (m, m)).copy_from(block);
    }
    let fuv = cross_information_uv(ctx);
    f.view_mut((0, nu_par), (nu_par, nv_par)).copy_from(&fuv);
    f.view_mut((nu_par, 0), (nv_par, nu_par)).copy_from(&fuv.transpose());

    let ju = factor_constraint_jacobian(&ctx.cov.x, &ctx.params.u, true);
    let jv = factor_constraint_jacobian(&ctx.cov.z, &ctx.params.v, true);
    let mut jac = DMatrix::zeros(ju.nrows() + jv.nrows(), nu_par + nv_par);
    jac.view_mut((0, 0), ju.shape()).copy_from(&ju);
    jac.view_mut((ju.nrows(), nu_par), jv.shape()).copy_from(&jv);
    let lead = bordered_leading_block(&f, &jac)?;
    let var_u = DMatrix::from_fn(rows, m, |i, a| lead[(i * m + a, i * m + a)]);
    let var_v = DMatrix::from_fn(cols, m, |j, a| lead[(nu_par + j * m + a, nu_par + j * m + a)]);
    Ok((var_u, var_v))
}

/// Variances from inverting the full constraint-augmented Fisher
/// information over (A, B, C, D, U, V).
#[derive(Debug, Clone)]
pub struct FullOracle {
    pub var_a: DMatrix<f64>,
    pub var_b: DMatrix<f64>,
    pub var_c: DMatrix<f64>,
    pub var_d: DVector<f64>,
    pub var_u: DMatrix<f64>,
    pub var_v: DMatrix<f64>,
    /// Largest |entry| of the expected cross information between the
    /// dispersion parameters (S, T, ω) and (A, B, C, D, U, V).
    pub dispersion_cross_max: f64,
    /// Largest |F − Fᵀ| of the assembled information matrix.
    pub asymmetry: f64,
}

struct Layout {
    k: usize,
    l: usize,
    m: usize,
    a: usize,
    b: usize,
    c: usize,
    d: usize,
    u: usize,
    v: usize,
    n: usize,
}

impl Layout {
    fn new(rows: usize, cols: usize, k: usize, l: usize, m: usize) -> Self {
        let a = 0;
        let b = a + cols * k;
        let c = b + rows * l;
        let d = c + k * l;
        let u = d + m;
        let v = u + rows * m;
        let n = v + cols * m;
        Self { k, l, m, a, b, c, d, u, v, n }
    }
}

/// Sparse gradient of η_ij over the layout.
fn eta_gradient(
    ctx: &InferenceContext,
    lay: &Layout,
    i: usize,
    j: usize,
    ud: &DMatrix<f64>,
    vd: &DMatrix<f64>,
) -> Vec<(usize, f64)> {
    let (x, z, p) = (&ctx.cov.x, &ctx.cov.z, &ctx.params);
    let mut g = Vec::with_capacity(lay.k + lay.l + lay.k * lay.l + 3 * lay.m);
    for kk in 0..lay.k {
        g.push((lay.a + j * lay.k + kk, x[(i, kk)]));
    }
    for ll in 0..lay.l {
        g.push((lay.b + i * lay.l + ll, z[(j, ll)]));
    }
    for ll in 0..lay.l {
        for kk in 0..lay.k {
            g.push((lay.c + ll * lay.k + kk, x[(i, kk)] * z[(j, ll)]));
        }
    }
    for a in 0..lay.m {
        g.push((lay.d + a, p.u[(i, a)] * p.v[(j, a)]));
        g.push((lay.u + i * lay.m + a, vd[(j, a)]));
        g.push((lay.v + j * lay.m + a, ud[(i, a)]));
    }
    g
}

pub fn full_augmented_fisher_oracle(ctx: &InferenceContext) -> Result<FullOracle> {
    let (rows, cols) = ctx.y.shape();
    let (k, l, m) = (ctx.cov.k(), ctx.cov.l(), ctx.latent_rank());
    let lay = Layout::new(rows, cols, k, l, m);
    if lay.n > ORACLE_MAX_PARAMS {
        return Err(GbmError::Size(format!("{} parameters exceed the oracle limit of {ORACLE_MAX_PARAMS}", lay.n)));
    }
    let ud = ctx.params.scaled_u();
    let vd = ctx.params.scaled_v();
    let prior = &ctx.prior;
    let mut f = DMatrix::zeros(lay.n, lay.n);
    let mut cross_s = DMatrix::<f64>::zeros(rows, lay.n);
    let mut cross_t = DMatrix::<f64>::zeros(cols, lay.n);
    let mut cross_omega = DVector::<f64>::zeros(lay.n);
    for i in 0..rows {
        for j in 0..cols {
            let g = eta_gradient(ctx, &lay, i, j, &ud, &vd);
            let w = ctx.ws.w[(i, j)];
            for &(a, ga) in &g {
                for &(b, gb) in &g {
                    f[(a, b)] += w * ga * gb;
                }
            }
            // E[−∂²ℓ/∂s∂η] = (w/r)·E[e], which vanishes because E[Y] = μ.
            let (mu, r) = (ctx.ws.mu[(i, j)], ctx.ws.r[(i, j)]);
            let mixed = w / r * (truncated_mean(mu, r) - mu) * r / (r + mu);
            for &(a, ga) in &g {
                cross_s[(i, a)] += mixed * ga;
                cross_t[(j, a)] += mixed * ga;
                cross_omega[a] += mixed * ga;
            }
        }
    }
    let precisions = [
        (lay.a, cols * k, prior.lambda_a),
        (lay.b, rows * l, prior.lambda_b),
        (lay.c, k * l, prior.lambda_c),
        (lay.d, m, prior.lambda_d),
        (lay.u, rows * m, prior.lambda_u),
        (lay.v, cols * m, prior.lambda_v),
    ];
    for (start, len, lambda) in precisions {
        for idx in start..start + len {
            f[(idx, idx)] += lambda;
        }
    }
    let asymmetry = (&f - f.transpose()).abs().max();

    let ju = factor_constraint_jacobian(&ctx.cov.x, &ctx.params.u, true);
    let jv = factor_constraint_jacobian(&ctx.cov.z, &ctx.params.v, true);
    let n_constraints = l * k + k * l + ju.nrows() + jv.nrows();
    let mut jac = DMatrix::zeros(n_constraints, lay.n);
    // ZᵀA = 0: row (ℓ, k) sums z_jℓ a_jk over j.
    for ll in 0..l {
        for kk in 0..k {
            for j in 0..cols {
                jac[(ll * k + kk, lay.a + j * k + kk)] = ctx.cov.z[(j, ll)];
            }
        }
    }
    // XᵀB = 0: row (k, ℓ) sums x_ik b_iℓ over i.
    let off = l * k;
    for kk in 0..k {
        for ll in 0..l {
            for i in 0..rows {
                jac[(off + kk * l + ll, lay.b + i * l + ll)] = ctx.cov.x[(i, kk)];
            }
        }
    }
    let off = off + k * l;
    jac.view_mut((off, lay.u), ju.shape()).copy_from(&ju);
    let off = off + ju.nrows();
    jac.view_mut((off, lay.v), jv.shape()).copy_from(&jv);

    let lead = bordered_leading_block(&f, &jac)?;
    let diag =
        |start: usize, r: usize, c: usize| DMatrix::from_fn(r, c, |a, b| lead[(start + a * c + b, start + a * c + b)]);
    let var_c = DMatrix::from_fn(k, l, |kk, ll| lead[(lay.c + ll * k + kk, lay.c + ll * k + kk)]);
    let dispersion_cross_max = cross_s.abs().max().max(cross_t.abs().max()).max(cross_omega.abs().max());
    Ok(FullOracle {
        var_a: diag(lay.a, cols, k),
        var_b: diag(lay.b, rows, l),
        var_c,
        var_d: DVector::from_fn(m, |a, _| lead[(lay.d + a, lay.d + a)]),
        var_u: diag(lay.u, rows, m),
        var_v: diag(lay.v, cols, m),
        dispersion_cross_max,
        asymmetry,
    })
}

/// E[Y] under NB(μ, r) by direct summation of the probability mass,
/// stopping once the remaining tail is negligible.
fn truncated_mean(mu: f64, r: f64) -> f64 {
    let sd = (mu + mu * mu / r).sqrt();
    let upper = (mu + 60.0 * sd + 100.0).min(1e7) as u64;
    let mut total = 0.0;
    let mut mass = 0.0;
    for y in 0..=upper {
        let p = nb_log_pmf_unchecked(y as f64, mu, r).exp();
        total += p * y as f64;
        mass += p;
        if y as f64 > mu && p * (y as f64) < 1e-18 * total.max(1.0) && mass > 1.0 - 1e-15 {
            break;
        }
    }
    total / mass
}
