//! Approximate standard errors: conditional Fisher inverses, joint
//! constrained (U, V) uncertainty and delta propagation between blocks.

mod context;
mod joint;
mod oracle;
mod propagation;

use nalgebra::{DMatrix, DVector};

pub use context::{conditional_inverses, ConditionalInverses, InferenceContext};
pub use joint::{
    constraint_jacobians, cross_information_uv, factor_constraint_jacobian, joint_uv_uncertainty, ConstraintJacobians,
    JointUv,
};
pub use oracle::{
    bordered_leading_block, bordered_uv_oracle, full_augmented_fisher_oracle, FullOracle, ORACLE_MAX_PARAMS,
};
pub use propagation::{
    jacobian_column, var_a_from_u, var_a_from_v, var_c_from_a, var_s_from, Block, DispersionPropagation, Edge,
};

use crate::error::{GbmError, Result};
use crate::model::{CovariateSet, GbmParams, PriorConfig};
use crate::special::{normal_quantile, two_sided_p};

/// Every variance term that feeds the standard errors, kept for
/// diagnostics. Matrices have the shape of their block.
#[derive(Debug, Clone)]
pub struct VarianceLedger {
    pub cond_a: DMatrix<f64>,
    pub cond_b: DMatrix<f64>,
    pub cond_c: DMatrix<f64>,
    pub cond_s: DVector<f64>,
    pub cond_t: DVector<f64>,
    pub var_u: DMatrix<f64>,
    pub var_v: DMatrix<f64>,
    pub a_from_u: DMatrix<f64>,
    pub a_from_v: DMatrix<f64>,
    pub b_from_u: DMatrix<f64>,
    pub b_from_v: DMatrix<f64>,
    pub c_from_a: DMatrix<f64>,
    pub c_from_b: DMatrix<f64>,
    pub s_from: DispersionPropagation,
    pub t_from: DispersionPropagation,
}

/// Standard errors for every block except D and ω.
#[derive(Debug, Clone)]
pub struct InferenceResult {
    pub se_a: DMatrix<f64>,
    pub se_b: DMatrix<f64>,
    pub se_c: DMatrix<f64>,
    pub se_u: DMatrix<f64>,
    pub se_v: DMatrix<f64>,
    pub se_s: DVector<f64>,
    pub se_t: DVector<f64>,
    pub ledger: VarianceLedger,
    pub warnings: Vec<String>,
}

/// Standard errors of each block, detached from the variance ledger.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardErrorSet {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub s: DVector<f64>,
    pub t: DVector<f64>,
}

impl InferenceResult {
    pub fn errors(&self) -> StandardErrorSet {
        StandardErrorSet {
            a: self.se_a.clone(),
            b: self.se_b.clone(),
            c: self.se_c.clone(),
            u: self.se_u.clone(),
            v: self.se_v.clone(),
            s: self.se_s.clone(),
            t: self.se_t.clone(),
        }
    }
}

pub fn standard_errors(
    y: &DMatrix<f64>,
    cov: &CovariateSet,
    params: &GbmParams,
    prior: &PriorConfig,
) -> Result<InferenceResult> {
    prior.validate()?;
    let rows = InferenceContext::new(y, cov, params, prior)?;
    let cols = rows.transposed()?;
    let mut warnings: Vec<String> = rows.warnings.to_vec();
    warnings.extend(cols.warnings.iter().map(|w| w.replace("row", "column")));

    let joint = joint_uv_uncertainty(&rows)?;
    let var_u = positive(joint.var_u, "U", &mut warnings)?;
    let var_v = positive(joint.var_v, "V", &mut warnings)?;

    let cond_a = rows.conditional_var_a();
    let cond_b = cols.conditional_var_a();
    let a_from_u = var_a_from_u(&rows, &var_u);
    let a_from_v = var_a_from_v(&rows, &var_v);
    let b_from_v = var_a_from_u(&cols, &var_v);
    let b_from_u = var_a_from_v(&cols, &var_u);
    let var_a = &cond_a + &a_from_u + &a_from_v;
    let var_b = &cond_b + &b_from_u + &b_from_v;

    let (k, l) = (cov.k(), cov.l());
    let cond_c = DMatrix::from_fn(k, l, |kk, ll| rows.inv_fc[(ll * k + kk, ll * k + kk)]);
    let c_from_a = DMatrix::from_column_slice(k, l, var_c_from_a(&rows).as_slice());
    let c_from_b = var_c_from_a(&cols);
    let c_from_b = DMatrix::from_column_slice(l, k, c_from_b.as_slice()).transpose();
    let var_c = &cond_c + &c_from_a + &c_from_b;

    let s_from = var_s_from(&rows, &var_a, &var_b, &var_u, &var_v);
    let t_side = var_s_from(&cols, &var_b, &var_a, &var_v, &var_u);
    let t_from = DispersionPropagation {
        from_a: t_side.from_b,
        from_b: t_side.from_a,
        from_u: t_side.from_v,
        from_v: t_side.from_u,
    };
    let cond_s = rows.inv_fs.clone();
    let cond_t = cols.inv_fs.clone();
    let var_s = &cond_s + &s_from.from_a + &s_from.from_b + &s_from.from_u + &s_from.from_v;
    let var_t = &cond_t + &t_from.from_a + &t_from.from_b + &t_from.from_u + &t_from.from_v;

    let sqrt = |m: &DMatrix<f64>| m.map(f64::sqrt);
    let result = InferenceResult {
        se_a: sqrt(&var_a),
        se_b: sqrt(&var_b),
        se_c: sqrt(&var_c),
        se_u: sqrt(&var_u),
        se_v: sqrt(&var_v),
        se_s: var_s.map(f64::sqrt),
        se_t: var_t.map(f64::sqrt),
        ledger: VarianceLedger {
            cond_a,
            cond_b,
            cond_c,
            cond_s,
            cond_t,
            var_u,
            var_v,
            a_from_u,
            a_from_v,
            b_from_u,
            b_from_v,
            c_from_a,
            c_from_b,
            s_from,
            t_from,
        },
        warnings,
    };
    let all = result
        .se_a
        .iter()
        .chain(result.se_b.iter())
        .chain(result.se_c.iter())
        .chain(result.se_u.iter())
        .chain(result.se_v.iter())
        .chain(result.se_s.iter())
        .chain(result.se_t.iter());
    if let Some(bad) = all.copied().find(|v| !v.is_finite() || *v <= 0.0) {
        return Err(GbmError::Numeric(format!("standard error {bad} is not finite and positive")));
    }
    for w in &result.warnings {
        log::warn!("{w}");
    }
    Ok(result)
}

/// Constrained variances can round to zero or slightly below for
/// coordinates pinned by the constraints; floor them with a warning.
fn positive(mut var: DMatrix<f64>, name: &str, warnings: &mut Vec<String>) -> Result<DMatrix<f64>> {
    let rows = var.nrows();
    for (idx, v) in var.iter_mut().enumerate() {
        let (i, a) = (idx % rows, idx / rows);
        if !v.is_finite() {
            return Err(GbmError::Numeric(format!("variance of {name}[{}, {}] is not finite", i + 1, a + 1)));
        }
        if *v <= 0.0 {
            warnings.push(format!("variance of {name}[{}, {}] is {v:.3e}; floored", i + 1, a + 1));
            *v = f64::MIN_POSITIVE;
        }
    }
    Ok(var)
}

/// Two-sided Wald p-values and confidence intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct WaldResult {
    pub p_values: Vec<f64>,
    pub ci_lower: Vec<f64>,
    pub ci_upper: Vec<f64>,
}

pub fn wald_tests(estimates: &[f64], ses: &[f64], level: f64) -> Result<WaldResult> {
    if estimates.len() != ses.len() {
        return Err(GbmError::Shape(format!("{} estimates but {} standard errors", estimates.len(), ses.len())));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(GbmError::Domain(format!("confidence level {level} must lie in (0, 1)")));
    }
    if let Some(pos) = ses.iter().position(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(GbmError::Domain(format!("standard error {} at position {pos} must be positive", ses[pos])));
    }
    let z = normal_quantile(0.5 + level / 2.0);
    let p_values = estimates.iter().zip(ses).map(|(e, s)| two_sided_p(e / s)).collect();
    let ci_lower = estimates.iter().zip(ses).map(|(e, s)| e - z * s).collect();
    let ci_upper = estimates.iter().zip(ses).map(|(e, s)| e + z * s).collect();
    Ok(WaldResult { p_values, ci_lower, ci_upper })
}
