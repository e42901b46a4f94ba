//! Core model types: count data, covariates, parameter state, the linear
//! predictor and its residuals, and constraint verification.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{GbmError, Result};
use crate::linalg::{left_pseudoinverse, max_abs};

/// Default pseudocount for link-scale residuals.
pub const DEFAULT_EPSILON: f64 = 0.125;

/// An I×J matrix of nonnegative integer counts.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    counts: DMatrix<u64>,
    values: DMatrix<f64>,
}

impl DataMatrix {
    pub fn new(counts: DMatrix<u64>) -> Result<Self> {
        if counts.nrows() == 0 || counts.ncols() == 0 {
            return Err(GbmError::Shape("count matrix must have at least one row and column".into()));
        }
        let values = counts.map(|c| c as f64);
        Ok(Self { counts, values })
    }

    /// Builds from real values that must be nonnegative integers.
    pub fn from_f64(values: &DMatrix<f64>) -> Result<Self> {
        for (idx, &v) in values.iter().enumerate() {
            if !(v >= 0.0 && v.fract() == 0.0 && v.is_finite()) {
                let (i, j) = (idx % values.nrows(), idx / values.nrows());
                return Err(GbmError::Domain(format!("count at ({i}, {j}) is {v}, expected a nonnegative integer")));
            }
        }
        Self::new(values.map(|v| v as u64))
    }

    pub fn counts(&self) -> &DMatrix<u64> {
        &self.counts
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn nrows(&self) -> usize {
        self.counts.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.counts.ncols()
    }

    pub fn transpose(&self) -> Self {
        Self { counts: self.counts.transpose(), values: self.values.transpose() }
    }
}

/// Row covariates X (I×K) and column covariates Z (J×L) with their
/// left pseudoinverses.
#[derive(Debug, Clone)]
pub struct CovariateSet {
    pub x: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub x_pinv: DMatrix<f64>,
    pub z_pinv: DMatrix<f64>,
}

impl CovariateSet {
    /// Wraps covariates that already have an intercept first column and
    /// centered remaining columns.
    pub fn new(x: DMatrix<f64>, z: DMatrix<f64>) -> Result<Self> {
        validate_design(&x, "X")?;
        validate_design(&z, "Z")?;
        let x_pinv = left_pseudoinverse(&x).map_err(|_| GbmError::Rank("X does not have full column rank".into()))?;
        let z_pinv = left_pseudoinverse(&z).map_err(|_| GbmError::Rank("Z does not have full column rank".into()))?;
        Ok(Self { x, z, x_pinv, z_pinv })
    }

    /// Centers (and optionally scales) raw covariates, then validates them.
    pub fn prepare(x_raw: &DMatrix<f64>, z_raw: &DMatrix<f64>, standardize: bool) -> Result<Self> {
        let x = crate::estimation::prepare_covariates(x_raw, standardize)?;
        let z = crate::estimation::prepare_covariates(z_raw, standardize)?;
        Self::new(x, z)
    }

    /// Intercept-only design on both sides.
    pub fn intercepts(rows: usize, cols: usize) -> Self {
        Self::new(DMatrix::from_element(rows, 1, 1.0), DMatrix::from_element(cols, 1, 1.0))
            .expect("intercept-only design is always valid")
    }

    pub fn nrows(&self) -> usize {
        self.x.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.z.nrows()
    }

    pub fn k(&self) -> usize {
        self.x.ncols()
    }

    pub fn l(&self) -> usize {
        self.z.ncols()
    }

    /// Swaps the roles of rows and columns.
    pub fn transpose(&self) -> Self {
        Self { x: self.z.clone(), z: self.x.clone(), x_pinv: self.z_pinv.clone(), z_pinv: self.x_pinv.clone() }
    }
}

fn validate_design(m: &DMatrix<f64>, name: &str) -> Result<()> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(GbmError::Shape(format!("{name} must be nonempty")));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(GbmError::Domain(format!("{name} has non-finite entries")));
    }
    if m.column(0).iter().any(|&v| v != 1.0) {
        return Err(GbmError::Input(format!("first column of {name} must be all ones")));
    }
    let n = m.nrows() as f64;
    for k in 1..m.ncols() {
        let col = m.column(k);
        let scale = col.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
        if col.sum().abs() > 1e-8 * n * scale {
            return Err(GbmError::Input(format!("column {} of {name} is not centered", k + 1)));
        }
    }
    Ok(())
}

/// The full parameter state of a negative-binomial GBM.
#[derive(Debug, Clone, PartialEq)]
pub struct GbmParams {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DVector<f64>,
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub s: DVector<f64>,
    pub t: DVector<f64>,
    pub omega: f64,
}

/// Problem dimensions (I, J, K, L, M).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub i: usize,
    pub j: usize,
    pub k: usize,
    pub l: usize,
    pub m: usize,
}

impl GbmParams {
    pub fn zeros(dims: Dims) -> Self {
        let Dims { i, j, k, l, m } = dims;
        Self {
            a: DMatrix::zeros(j, k),
            b: DMatrix::zeros(i, l),
            c: DMatrix::zeros(k, l),
            d: DVector::zeros(m),
            u: DMatrix::zeros(i, m),
            v: DMatrix::zeros(j, m),
            s: DVector::zeros(i),
            t: DVector::zeros(j),
            omega: 0.0,
        }
    }

    pub fn dims(&self) -> Dims {
        Dims { i: self.b.nrows(), j: self.a.nrows(), k: self.a.ncols(), l: self.b.ncols(), m: self.d.len() }
    }

    /// Checks that every block is consistent with the covariates.
    pub fn check_shapes(&self, cov: &CovariateSet) -> Result<()> {
        let (i, j, k, l, m) = (cov.nrows(), cov.ncols(), cov.k(), cov.l(), self.d.len());
        let expect = [
            ("A", self.a.shape(), (j, k)),
            ("B", self.b.shape(), (i, l)),
            ("C", self.c.shape(), (k, l)),
            ("U", self.u.shape(), (i, m)),
            ("V", self.v.shape(), (j, m)),
            ("S", (self.s.len(), 1), (i, 1)),
            ("T", (self.t.len(), 1), (j, 1)),
        ];
        for (name, got, want) in expect {
            if got != want {
                return Err(GbmError::Shape(format!("{name} is {}x{}, expected {}x{}", got.0, got.1, want.0, want.1)));
            }
        }
        Ok(())
    }

    /// The transposed model: rows and columns swap roles.
    pub fn transpose(&self) -> Self {
        Self {
            a: self.b.clone(),
            b: self.a.clone(),
            c: self.c.transpose(),
            d: self.d.clone(),
            u: self.v.clone(),
            v: self.u.clone(),
            s: self.t.clone(),
            t: self.s.clone(),
            omega: self.omega,
        }
    }

    /// U·diag(D).
    pub fn scaled_u(&self) -> DMatrix<f64> {
        scale_columns(&self.u, &self.d)
    }

    /// V·diag(D).
    pub fn scaled_v(&self) -> DMatrix<f64> {
        scale_columns(&self.v, &self.d)
    }
}

pub(crate) fn scale_columns(m: &DMatrix<f64>, d: &DVector<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for (mut col, &s) in out.column_iter_mut().zip(d.iter()) {
        col *= s;
    }
    out
}

/// Normal prior precisions and dispersion prior means. Missing fields
/// deserialize to their defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorConfig {
    pub lambda_a: f64,
    pub lambda_b: f64,
    pub lambda_c: f64,
    pub lambda_d: f64,
    pub lambda_u: f64,
    pub lambda_v: f64,
    pub lambda_s: f64,
    pub lambda_t: f64,
    pub mean_s: f64,
    pub mean_t: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            lambda_a: 1.0,
            lambda_b: 1.0,
            lambda_c: 1.0,
            lambda_d: 1.0,
            lambda_u: 1.0,
            lambda_v: 1.0,
            lambda_s: 1.0,
            lambda_t: 1.0,
            mean_s: 0.0,
            mean_t: 0.0,
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda_a,
            self.lambda_b,
            self.lambda_c,
            self.lambda_d,
            self.lambda_u,
            self.lambda_v,
            self.lambda_s,
            self.lambda_t,
        ];
        if all.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(GbmError::Domain("prior precisions must be positive and finite".into()));
        }
        if !self.mean_s.is_finite() || !self.mean_t.is_finite() {
            return Err(GbmError::Domain("prior means must be finite".into()));
        }
        Ok(())
    }

    /// Prior with rows and columns exchanged.
    pub fn transpose(&self) -> Self {
        Self {
            lambda_a: self.lambda_b,
            lambda_b: self.lambda_a,
            lambda_u: self.lambda_v,
            lambda_v: self.lambda_u,
            lambda_s: self.lambda_t,
            lambda_t: self.lambda_s,
            mean_s: self.mean_t,
            mean_t: self.mean_s,
            ..*self
        }
    }

    /// Log prior density up to a constant.
    pub fn log_prior(&self, p: &GbmParams) -> f64 {
        let sq = |m: &DMatrix<f64>| m.iter().map(|v| v * v).sum::<f64>();
        let centered = |v: &DVector<f64>, mean: f64| v.iter().map(|x| (x - mean).powi(2)).sum::<f64>();
        -0.5 * (self.lambda_a * sq(&p.a)
            + self.lambda_b * sq(&p.b)
            + self.lambda_c * sq(&p.c)
            + self.lambda_d * p.d.norm_squared()
            + self.lambda_u * sq(&p.u)
            + self.lambda_v * sq(&p.v)
            + self.lambda_s * centered(&p.s, self.mean_s)
            + self.lambda_t * centered(&p.t, self.mean_t))
    }
}

/// Settings for the estimation loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub rho: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub epsilon: f64,
    pub s_floor: f64,
    pub t_floor: f64,
    pub standardize: bool,
    pub init_st_iters: usize,
    pub seed: u64,
    pub bias_correction: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            rho: 5.0,
            tol: 1e-6,
            max_iter: 50,
            epsilon: DEFAULT_EPSILON,
            s_floor: -4.0,
            t_floor: -4.0,
            standardize: true,
            init_st_iters: 4,
            seed: 0,
            bias_correction: true,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0) || !(self.tol > 0.0) || self.max_iter == 0 || !(self.epsilon > 0.0) {
            return Err(GbmError::Domain("rho, tol and epsilon must be positive and max_iter at least 1".into()));
        }
        Ok(())
    }
}

/// XAᵀ + BZᵀ + XCZᵀ + UDVᵀ.
pub fn compute_eta(params: &GbmParams, cov: &CovariateSet) -> Result<DMatrix<f64>> {
    params.check_shapes(cov)?;
    let x = &cov.x;
    let z = &cov.z;
    let mut eta = x * params.a.transpose();
    eta += &params.b * z.transpose();
    eta += x * (&params.c * z.transpose());
    if !params.d.is_empty() {
        eta += params.scaled_u() * params.v.transpose();
    }
    Ok(eta)
}

/// log(Y + epsilon) − η.
pub fn residuals(y: &DMatrix<f64>, eta: &DMatrix<f64>, epsilon: f64) -> Result<DMatrix<f64>> {
    if y.shape() != eta.shape() {
        return Err(GbmError::Shape(format!("Y is {:?} but eta is {:?}", y.shape(), eta.shape())));
    }
    if !(epsilon > 0.0) {
        return Err(GbmError::Domain("epsilon must be positive".into()));
    }
    Ok(y.zip_map(eta, |yv, e| (yv + epsilon).ln() - e))
}

/// Residuals with the retained effects added back: ηᴿ + ε, where ηᴿ keeps
/// only the listed (0-based) columns of X, Z and U.
pub fn partial_residuals(
    params: &GbmParams,
    cov: &CovariateSet,
    resid: &DMatrix<f64>,
    keep_x: &[usize],
    keep_z: &[usize],
    keep_u: &[usize],
) -> Result<DMatrix<f64>> {
    params.check_shapes(cov)?;
    if resid.shape() != (cov.nrows(), cov.ncols()) {
        return Err(GbmError::Shape("residual matrix does not match I x J".into()));
    }
    let mask = |keep: &[usize], n: usize, what: &str| -> Result<DVector<f64>> {
        let mut m = DVector::zeros(n);
        for &idx in keep {
            if idx >= n {
                return Err(GbmError::Index(format!("{what} index {idx} out of range 0..{n}")));
            }
            m[idx] = 1.0;
        }
        Ok(m)
    };
    let mx = mask(keep_x, cov.k(), "X")?;
    let mz = mask(keep_z, cov.l(), "Z")?;
    let mu = mask(keep_u, params.d.len(), "U")?;
    let reduced = GbmParams {
        a: scale_columns(&params.a, &mx),
        b: scale_columns(&params.b, &mz),
        c: DMatrix::from_fn(cov.k(), cov.l(), |k, l| params.c[(k, l)] * mx[k] * mz[l]),
        d: params.d.component_mul(&mu),
        ..params.clone()
    };
    Ok(compute_eta(&reduced, cov)? + resid)
}

/// rμ/(r+μ) elementwise.
pub fn residual_precisions(mu: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if mu.shape() != r.shape() {
        return Err(GbmError::Shape("mu and r differ in shape".into()));
    }
    if mu.iter().chain(r.iter()).any(|&v| !(v > 0.0)) {
        return Err(GbmError::Domain("mu and r must be positive".into()));
    }
    Ok(mu.zip_map(r, |m, rr| rr * m / (rr + m)))
}

/// Sums of squares of the four additive parts of η.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SumOfSquares {
    pub ss_xa: f64,
    pub ss_bz: f64,
    pub ss_xcz: f64,
    pub ss_udv: f64,
    pub ss_total: f64,
}

pub fn sum_of_squares_decomposition(params: &GbmParams, cov: &CovariateSet) -> Result<SumOfSquares> {
    sum_of_squares_decomposition_tol(params, cov, 1e-8)
}

pub fn sum_of_squares_decomposition_tol(params: &GbmParams, cov: &CovariateSet, tol: f64) -> Result<SumOfSquares> {
    params.check_shapes(cov)?;
    let report = check_constraints(params, cov, tol);
    let worst = report.za.max(report.xb).max(report.xu).max(report.zv);
    if worst > tol {
        return Err(GbmError::Constraint(format!("orthogonality violated by {worst:e}; decomposition does not apply")));
    }
    let ss = |m: DMatrix<f64>| m.iter().map(|v| v * v).sum::<f64>();
    Ok(SumOfSquares {
        ss_xa: ss(&cov.x * params.a.transpose()),
        ss_bz: ss(&params.b * cov.z.transpose()),
        ss_xcz: ss(&cov.x * &params.c * cov.z.transpose()),
        ss_udv: ss(params.scaled_u() * params.v.transpose()),
        ss_total: ss(compute_eta(params, cov)?),
    })
}

/// Maximum violation of each identifiability condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReport {
    pub tol: f64,
    pub za: f64,
    pub xb: f64,
    pub xu: f64,
    pub zv: f64,
    pub utu: f64,
    pub vtv: f64,
    pub s_mean: f64,
    pub t_mean: f64,
    pub d_ordered: bool,
    pub d_positive: bool,
    pub u_signs: bool,
}

impl ConstraintReport {
    /// Numeric conditions only; ordering and sign are checked by
    /// [`passes_strict`](Self::passes_strict).
    pub fn passes(&self) -> bool {
        [self.za, self.xb, self.xu, self.zv, self.utu, self.vtv, self.s_mean, self.t_mean]
            .iter()
            .all(|&v| v <= self.tol)
    }

    pub fn passes_strict(&self) -> bool {
        self.passes() && self.d_ordered && self.d_positive && self.u_signs
    }
}

fn product_violation(lhs: &DMatrix<f64>, factor: &DMatrix<f64>) -> f64 {
    if factor.ncols() == 0 {
        return 0.0;
    }
    max_abs(&lhs.tr_mul(factor)) / max_abs(factor).max(1.0)
}

fn orthonormal_violation(m: &DMatrix<f64>) -> f64 {
    if m.ncols() == 0 {
        return 0.0;
    }
    max_abs(&(m.tr_mul(m) - DMatrix::identity(m.ncols(), m.ncols())))
}

pub fn check_constraints(params: &GbmParams, cov: &CovariateSet, tol: f64) -> ConstraintReport {
    let mean_exp = |v: &DVector<f64>| {
        if v.is_empty() {
            0.0
        } else {
            (v.iter().map(|x| x.exp()).sum::<f64>() / v.len() as f64 - 1.0).abs()
        }
    };
    let d = &params.d;
    ConstraintReport {
        tol,
        za: product_violation(&cov.z, &params.a),
        xb: product_violation(&cov.x, &params.b),
        xu: product_violation(&cov.x, &params.u),
        zv: product_violation(&cov.z, &params.v),
        utu: orthonormal_violation(&params.u),
        vtv: orthonormal_violation(&params.v),
        s_mean: mean_exp(&params.s),
        t_mean: mean_exp(&params.t),
        d_ordered: d.iter().zip(d.iter().skip(1)).all(|(a, b)| a > b),
        d_positive: d.iter().all(|&x| x > 0.0),
        u_signs: params.u.column_iter().all(|col| col.iter().find(|&&x| x != 0.0).is_none_or(|&x| x > 0.0)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn partial_prior_json_keeps_defaults() {
        let prior: PriorConfig = serde_json::from_str(r#"{"lambda_u": 4.0}"#).unwrap();
        assert_eq!(prior, PriorConfig { lambda_u: 4.0, ..PriorConfig::default() });
    }

    fn small_cov() -> CovariateSet {
        let x_raw = DMatrix::from_row_slice(4, 2, &[1.0, 0.3, 1.0, -1.2, 1.0, 2.0, 1.0, 0.4]);
        let z_raw = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 1.0, 0.0, 1.0, -2.5]);
        CovariateSet::prepare(&x_raw, &z_raw, true).unwrap()
    }

    fn random_params(cov: &CovariateSet, m: usize, seed: u64) -> GbmParams {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut g = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0));
        let (i, j, k, l) = (cov.nrows(), cov.ncols(), cov.k(), cov.l());
        GbmParams {
            a: g(j, k),
            b: g(i, l),
            c: g(k, l),
            d: DVector::from_fn(m, |q, _| 2.0 - q as f64),
            u: g(i, m),
            v: g(j, m),
            s: DVector::zeros(i),
            t: DVector::zeros(j),
            omega: 0.0,
        }
    }

    #[test]
    fn eta_zero_for_zero_params() {
        let cov = small_cov();
        let p = GbmParams::zeros(Dims { i: 4, j: 3, k: 2, l: 2, m: 1 });
        assert_eq!(compute_eta(&p, &cov).unwrap(), DMatrix::zeros(4, 3));
    }

    #[test]
    fn eta_intercept_only() {
        let cov = CovariateSet::intercepts(3, 5);
        let mut p = GbmParams::zeros(Dims { i: 3, j: 5, k: 1, l: 1, m: 0 });
        p.c[(0, 0)] = 3.0;
        assert!(compute_eta(&p, &cov).unwrap().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn eta_matches_scalar_sum() {
        let cov = small_cov();
        let p = random_params(&cov, 1, 3);
        let eta = compute_eta(&p, &cov).unwrap();
        for i in 0..4 {
            for j in 0..3 {
                let mut s = 0.0;
                for k in 0..2 {
                    s += cov.x[(i, k)] * p.a[(j, k)];
                }
                for l in 0..2 {
                    s += p.b[(i, l)] * cov.z[(j, l)];
                }
                for k in 0..2 {
                    for l in 0..2 {
                        s += cov.x[(i, k)] * p.c[(k, l)] * cov.z[(j, l)];
                    }
                }
                s += p.u[(i, 0)] * p.d[0] * p.v[(j, 0)];
                assert!((eta[(i, j)] - s).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn eta_shape_error_names_block() {
        let cov = small_cov();
        let mut p = random_params(&cov, 1, 1);
        p.b = DMatrix::zeros(5, 2);
        let err = compute_eta(&p, &cov).unwrap_err().to_string();
        assert!(err.contains('B'), "{err}");
    }

    #[test]
    fn eta_is_linear_in_a() {
        let cov = small_cov();
        let dims = Dims { i: 4, j: 3, k: 2, l: 2, m: 0 };
        let mut p1 = GbmParams::zeros(dims);
        let mut p2 = GbmParams::zeros(dims);
        p1.a = random_params(&cov, 0, 5).a;
        p2.a = random_params(&cov, 0, 6).a;
        let mut sum = GbmParams::zeros(dims);
        sum.a = &p1.a + &p2.a;
        let lhs = compute_eta(&sum, &cov).unwrap();
        let rhs = compute_eta(&p1, &cov).unwrap() + compute_eta(&p2, &cov).unwrap();
        assert_relative_eq!(lhs, rhs, epsilon = 1e-13);
    }

    #[test]
    fn residual_cases() {
        let eta = DMatrix::from_row_slice(1, 2, &[0.0, 1.3]);
        let y = eta.map(|e: f64| e.exp() - DEFAULT_EPSILON);
        let r = residuals(&y, &eta, DEFAULT_EPSILON).unwrap();
        assert!(r.iter().all(|v| v.abs() < 1e-14));
        let r0 = residuals(&DMatrix::zeros(1, 1), &DMatrix::zeros(1, 1), DEFAULT_EPSILON).unwrap();
        assert_relative_eq!(r0[(0, 0)], -2.0794415416798357, epsilon = 1e-12);
        assert_eq!(FitConfig::default().epsilon, 0.125);
    }

    #[test]
    fn partial_residual_retention() {
        let cov = small_cov();
        let p = random_params(&cov, 2, 9);
        let y = DMatrix::from_fn(4, 3, |i, j| (i * 3 + j) as f64);
        let eta = compute_eta(&p, &cov).unwrap();
        let res = residuals(&y, &eta, 0.125).unwrap();
        let all = partial_residuals(&p, &cov, &res, &[0, 1], &[0, 1], &[0, 1]).unwrap();
        assert_relative_eq!(all, y.map(|v| (v + 0.125).ln()), epsilon = 1e-12);
        let none = partial_residuals(&p, &cov, &res, &[], &[], &[]).unwrap();
        assert_eq!(none, res);
        let icpt = partial_residuals(&p, &cov, &res, &[0], &[0], &[]).unwrap();
        for i in 0..4 {
            for j in 0..3 {
                let want = p.c[(0, 0)] + p.a[(j, 0)] + p.b[(i, 0)] + res[(i, j)];
                assert!((icpt[(i, j)] - want).abs() < 1e-12);
            }
        }
        assert!(matches!(partial_residuals(&p, &cov, &res, &[2], &[], &[]), Err(GbmError::Index(_))));
    }

    #[test]
    fn precision_cases() {
        let one = DMatrix::from_element(1, 1, 1.0);
        assert_eq!(residual_precisions(&one, &one).unwrap()[(0, 0)], 0.5);
        let w = residual_precisions(&DMatrix::from_element(1, 1, 7.0), &DMatrix::from_element(1, 1, 1e12)).unwrap();
        assert!((w[(0, 0)] - 7.0).abs() < 1e-10);
        assert!(residual_precisions(&DMatrix::from_element(1, 1, 0.0), &one).is_err());
    }

    #[test]
    fn zero_state_passes_checks() {
        let cov = small_cov();
        let p = GbmParams::zeros(Dims { i: 4, j: 3, k: 2, l: 2, m: 0 });
        let rep = check_constraints(&p, &cov, 1e-8);
        assert!(rep.passes_strict());
        assert_eq!(rep.za + rep.xb + rep.xu + rep.zv, 0.0);
        let ss = sum_of_squares_decomposition(&p, &cov).unwrap();
        assert_eq!(ss.ss_total, 0.0);
    }

    #[test]
    fn ordering_flag_detects_swap() {
        let cov = small_cov();
        let mut p = GbmParams::zeros(Dims { i: 4, j: 3, k: 2, l: 2, m: 2 });
        p.d = DVector::from_vec(vec![1.0, 2.0]);
        let rep = check_constraints(&p, &cov, 1e-8);
        assert!(!rep.d_ordered);
        assert!(!rep.passes_strict());
    }

    #[test]
    fn only_c_nonzero() {
        let cov = small_cov();
        let mut p = GbmParams::zeros(Dims { i: 4, j: 3, k: 2, l: 2, m: 0 });
        p.c = DMatrix::from_row_slice(2, 2, &[1.0, -0.5, 0.25, 2.0]);
        let ss = sum_of_squares_decomposition(&p, &cov).unwrap();
        assert_relative_eq!(ss.ss_total, ss.ss_xcz, max_relative = 1e-14);
    }

    #[test]
    fn decomposition_rejects_unconstrained() {
        let cov = small_cov();
        let p = random_params(&cov, 1, 4);
        assert!(matches!(sum_of_squares_decomposition(&p, &cov), Err(GbmError::Constraint(_))));
    }
}
