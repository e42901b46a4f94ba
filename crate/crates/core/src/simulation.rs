//! Synthetic data generation and the evaluation metrics used by the
//! simulation studies.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Gamma, Geometric, LogNormal, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Gamma as GammaDist};

use crate::error::{GbmError, Result};
use crate::estimation::{finalize_factors, prepare_covariates};
use crate::inference::StandardErrorSet;
use crate::model::{compute_eta, CovariateSet, DataMatrix, Dims, GbmParams};
use crate::nb::{inverse_dispersions, sample_nb, sample_poisson};
use crate::special::normal_cdf;

/// Magnitude at which generated covariates are clamped.
const COVARIATE_CLAMP: f64 = 100.0;
/// Overall log-dispersion of simulated data.
pub const TRUE_OMEGA: f64 = -2.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CovariateScheme {
    Normal,
    Gamma,
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParameterScheme {
    Normal,
    Gamma,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    NB,
    LNP,
    Poisson,
    Geometric,
}

/// Independent random streams within one replicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Covariates = 1,
    Parameters = 2,
    Outcomes = 3,
}

/// Outcome family, covariate distribution, parameter distribution,
/// dimensions and seed of a simulation design.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimScheme {
    pub outcome: Outcome,
    pub covariates: CovariateScheme,
    pub parameters: ParameterScheme,
    pub dims: Dims,
    pub seed: u64,
}

/// The `outcome/covariates/parameters` triplet, e.g. `NB/Normal/Normal`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SchemeTriplet {
    pub outcome: Outcome,
    pub covariates: CovariateScheme,
    pub parameters: ParameterScheme,
}

pub const OUTCOME_TOKENS: &[&str] = &["NB", "LNP", "Poisson", "Geometric"];
pub const COVARIATE_TOKENS: &[&str] = &["Normal", "Gamma", "Binary"];
pub const PARAMETER_TOKENS: &[&str] = &["Normal", "Gamma"];

impl FromStr for SchemeTriplet {
    type Err = GbmError;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split('/').collect();
        let usage = || {
            GbmError::Input(format!(
                "scheme must be outcome/covariates/parameters with outcome in {OUTCOME_TOKENS:?}, \
                 covariates in {COVARIATE_TOKENS:?}, parameters in {PARAMETER_TOKENS:?}; got '{s}'"
            ))
        };
        if parts.len() != 3 {
            return Err(usage());
        }
        let outcome = match parts[0] {
            "NB" => Outcome::NB,
            "LNP" => Outcome::LNP,
            "Poisson" => Outcome::Poisson,
            "Geometric" => Outcome::Geometric,
            _ => return Err(usage()),
        };
        let covariates = match parts[1] {
            "Normal" => CovariateScheme::Normal,
            "Gamma" => CovariateScheme::Gamma,
            "Binary" => CovariateScheme::Binary,
            _ => return Err(usage()),
        };
        let parameters = match parts[2] {
            "Normal" => ParameterScheme::Normal,
            "Gamma" => ParameterScheme::Gamma,
            _ => return Err(usage()),
        };
        Ok(Self { outcome, covariates, parameters })
    }
}

impl fmt::Display for SchemeTriplet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}/{:?}/{:?}", self.outcome, self.covariates, self.parameters)
    }
}

impl SimScheme {
    pub fn new(triplet: SchemeTriplet, dims: Dims, seed: u64) -> Result<Self> {
        let Dims { i, j, k, l, m } = dims;
        if i == 0 || j == 0 || k == 0 || l == 0 {
            return Err(GbmError::Shape("simulation dimensions must be positive".into()));
        }
        if m >= i.min(j) {
            return Err(GbmError::Shape(format!("latent dimension {m} must be below min(I, J)")));
        }
        Ok(Self {
            outcome: triplet.outcome,
            covariates: triplet.covariates,
            parameters: triplet.parameters,
            dims,
            seed,
        })
    }

    pub fn triplet(&self) -> SchemeTriplet {
        SchemeTriplet { outcome: self.outcome, covariates: self.covariates, parameters: self.parameters }
    }

    /// Random stream for one component of one replicate.
    pub fn rng(&self, replicate: u64, stream: Stream) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed ^ replicate.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        rng.set_stream(stream as u64);
        rng
    }
}

/// True parameters and covariates of a simulated data set.
#[derive(Debug, Clone)]
pub struct SimTruth {
    pub cov: CovariateSet,
    pub params0: GbmParams,
    pub mu0: DMatrix<f64>,
    pub r0: DMatrix<f64>,
    /// Covariate draws clamped at ±100.
    pub clamp_events: usize,
}

/// Raw copula draws before standardization, with the clamp count.
pub fn draw_raw_covariates<R: Rng + ?Sized>(
    n: usize,
    p: usize,
    scheme: CovariateScheme,
    rng: &mut R,
) -> Result<(DMatrix<f64>, usize)> {
    if p == 0 {
        return Err(GbmError::Shape("need at least the intercept column".into()));
    }
    let mut normal = |rows: usize, cols: usize| {
        DMatrix::from_fn(rows, cols, |_, _| {
            let z: f64 = StandardNormal.sample(&mut *rng);
            z
        })
    };
    let q = normal(p, p);
    let sigma = q.tr_mul(&q);
    let scale = sigma.diagonal().map(|v| 1.0 / v.sqrt());
    let corr = DMatrix::from_fn(p, p, |a, b| sigma[(a, b)] * scale[a] * scale[b]);
    let chol = corr
        .cholesky()
        .ok_or_else(|| GbmError::Numeric("random correlation matrix is not positive definite".into()))?;
    let latent = normal(n, p) * chol.l().transpose();
    let gamma = GammaDist::new(2.0, 2f64.sqrt()).expect("valid gamma parameters");
    let mut clamped = 0;
    let mut x = latent.map(|v| {
        let mapped = match scheme {
            CovariateScheme::Normal => v,
            CovariateScheme::Gamma => gamma.inverse_cdf(normal_cdf(v)),
            CovariateScheme::Binary => {
                if normal_cdf(v) <= 0.5 {
                    0.0
                } else {
                    1.0
                }
            }
        };
        if !(mapped.abs() <= COVARIATE_CLAMP) {
            clamped += 1;
        }
        if mapped.is_nan() {
            COVARIATE_CLAMP
        } else {
            mapped.clamp(-COVARIATE_CLAMP, COVARIATE_CLAMP)
        }
    });
    x.column_mut(0).fill(1.0);
    Ok((x, clamped))
}

/// Copula covariates with an intercept column and standardized remaining
/// columns.
pub fn generate_covariates<R: Rng + ?Sized>(
    n: usize,
    p: usize,
    scheme: CovariateScheme,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let (raw, _) = draw_raw_covariates(n, p, scheme, rng)?;
    prepare_covariates(&raw, true)
}

fn gaussian_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, sd: f64, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| {
        let z: f64 = StandardNormal.sample(&mut *rng);
        sd * z
    })
}

fn gamma_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rate: f64, rng: &mut R) -> DMatrix<f64> {
    let g = Gamma::new(2.0, 1.0 / rate).expect("valid gamma parameters");
    DMatrix::from_fn(rows, cols, |_, _| g.sample(&mut *rng))
}

/// Orthonormal basis drawn uniformly from the orthogonal complement of the
/// columns of `design`.
fn stiefel_in_complement<R: Rng + ?Sized>(
    design: &DMatrix<f64>,
    design_pinv: &DMatrix<f64>,
    m: usize,
    rng: &mut R,
) -> DMatrix<f64> {
    let n = design.nrows();
    let g = gaussian_matrix(n, m, 1.0, rng);
    let projected = &g - design * (design_pinv * &g);
    let qr = projected.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for c in 0..m {
        if r[(c, c)] < 0.0 {
            q.column_mut(c).neg_mut();
        }
    }
    q
}

fn recenter_log_mean_exp(v: &mut DVector<f64>) {
    let shift = (v.iter().map(|x| x.exp()).sum::<f64>() / v.len() as f64).ln();
    v.add_scalar_mut(-shift);
}

/// Evenly spaced latent scales on [√I+√J, 2(√I+√J)], largest first.
pub fn latent_scales(i: usize, j: usize, m: usize) -> DVector<f64> {
    let lo = (i as f64).sqrt() + (j as f64).sqrt();
    let hi = 2.0 * lo;
    if m == 1 {
        return DVector::from_element(1, lo);
    }
    DVector::from_fn(m, |q, _| hi - (hi - lo) * q as f64 / (m - 1) as f64)
}

/// True parameters satisfying every identifiability constraint.
pub fn generate_parameters<R: Rng + ?Sized>(
    cov: &CovariateSet,
    m: usize,
    scheme: ParameterScheme,
    rng: &mut R,
) -> GbmParams {
    let (i, j, k, l) = (cov.nrows(), cov.ncols(), cov.k(), cov.l());
    let (kf, lf) = (k as f64, l as f64);
    let (a, b, mut c) = match scheme {
        ParameterScheme::Normal => (
            gaussian_matrix(j, k, (1.0 / (4.0 * kf)).sqrt(), rng),
            gaussian_matrix(i, l, (1.0 / (4.0 * lf)).sqrt(), rng),
            gaussian_matrix(k, l, (1.0 / (kf * lf)).sqrt(), rng),
        ),
        ParameterScheme::Gamma => (
            gamma_matrix(j, k, 2.0 * (2.0 * kf).sqrt(), rng),
            gamma_matrix(i, l, 2.0 * (2.0 * lf).sqrt(), rng),
            gamma_matrix(k, l, (2.0 * kf * lf).sqrt(), rng),
        ),
    };
    c[(0, 0)] += 3.0;
    let a = &a - &cov.z * (&cov.z_pinv * &a);
    let b = &b - &cov.x * (&cov.x_pinv * &b);
    let u = stiefel_in_complement(&cov.x, &cov.x_pinv, m, rng);
    let v = stiefel_in_complement(&cov.z, &cov.z_pinv, m, rng);
    let mut s = gaussian_matrix(i, 1, 1.0, rng).column(0).into_owned();
    let mut t = gaussian_matrix(j, 1, 1.0, rng).column(0).into_owned();
    recenter_log_mean_exp(&mut s);
    recenter_log_mean_exp(&mut t);
    let mut params = GbmParams { a, b, c, d: latent_scales(i, j, m), u, v, s, t, omega: TRUE_OMEGA };
    finalize_factors(&mut params);
    params
}

/// Draws counts with mean `mu0` from the requested family.
pub fn generate_outcomes<R: Rng + ?Sized>(
    mu0: &DMatrix<f64>,
    r0: &DMatrix<f64>,
    outcome: Outcome,
    rng: &mut R,
) -> Result<DataMatrix> {
    if mu0.shape() != r0.shape() {
        return Err(GbmError::Shape("mu0 and r0 differ in shape".into()));
    }
    if mu0.iter().chain(r0.iter()).any(|&v| !(v > 0.0)) {
        return Err(GbmError::Domain("means and inverse dispersions must be positive".into()));
    }
    let mut counts = DMatrix::<u64>::zeros(mu0.nrows(), mu0.ncols());
    for idx in 0..mu0.len() {
        let (mu, r) = (mu0[idx], r0[idx]);
        counts[idx] = match outcome {
            Outcome::NB => sample_nb(rng, mu, r),
            Outcome::LNP => {
                let var = (1.0 / r).ln_1p();
                let rate = LogNormal::new(mu.ln() - var / 2.0, var.sqrt()).map(|d| d.sample(&mut *rng)).unwrap_or(mu);
                sample_poisson(rng, rate)
            }
            Outcome::Poisson => sample_poisson(rng, mu),
            Outcome::Geometric => Geometric::new(1.0 / (mu + 1.0))
                .map(|g| g.sample(&mut *rng))
                .map_err(|e| GbmError::Domain(format!("geometric parameter: {e}")))?,
        };
    }
    DataMatrix::new(counts)
}

/// Generates covariates, true parameters and counts for one replicate.
pub fn simulate(scheme: &SimScheme, replicate: u64) -> Result<(DataMatrix, SimTruth)> {
    let Dims { i, j, k, l, .. } = scheme.dims;
    let mut cov_rng = scheme.rng(replicate, Stream::Covariates);
    let (x_raw, cx) = draw_raw_covariates(i, k, scheme.covariates, &mut cov_rng)?;
    let (z_raw, cz) = draw_raw_covariates(j, l, scheme.covariates, &mut cov_rng)?;
    let cov = CovariateSet::prepare(&x_raw, &z_raw, true)?;
    simulate_given(scheme, replicate, cov, cx + cz, |_| {})
}

/// A replicate whose column covariates end with a balanced random
/// two-group split that has no effect: its column of B is zero in the
/// truth. Returns the index of that column.
pub fn simulate_mock_null(scheme: &SimScheme, replicate: u64) -> Result<(DataMatrix, SimTruth, usize)> {
    let Dims { i, j, k, l, .. } = scheme.dims;
    let mut cov_rng = scheme.rng(replicate, Stream::Covariates);
    let (x_raw, cx) = draw_raw_covariates(i, k, scheme.covariates, &mut cov_rng)?;
    let (z_raw, cz) = draw_raw_covariates(j, l, scheme.covariates, &mut cov_rng)?;
    let base = CovariateSet::prepare(&x_raw, &z_raw, true)?;
    let cov = with_mock_split(&base, &mut cov_rng)?;
    let split = cov.l() - 1;
    let (y, truth) = simulate_given(scheme, replicate, cov, cx + cz, |p| p.b.column_mut(split).fill(0.0))?;
    Ok((y, truth, split))
}

fn simulate_given(
    scheme: &SimScheme,
    replicate: u64,
    cov: CovariateSet,
    clamp_events: usize,
    adjust: impl FnOnce(&mut GbmParams),
) -> Result<(DataMatrix, SimTruth)> {
    let m = scheme.dims.m;
    let mut params0 = generate_parameters(&cov, m, scheme.parameters, &mut scheme.rng(replicate, Stream::Parameters));
    adjust(&mut params0);
    let mu0 = compute_eta(&params0, &cov)?.map(f64::exp);
    let r0 = inverse_dispersions(&params0.s, &params0.t, params0.omega);
    let y = generate_outcomes(&mu0, &r0, scheme.outcome, &mut scheme.rng(replicate, Stream::Outcomes))?;
    Ok((y, SimTruth { cov, params0, mu0, r0, clamp_events }))
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for rest in permutations(n - 1) {
        for pos in 0..=rest.len() {
            let mut p = rest.clone();
            p.insert(pos, n - 1);
            out.push(p);
        }
    }
    out
}

/// Matching of estimated latent factors to true ones by absolute
/// correlation of the U columns: `order[t]` is the estimated column matched
/// to true column t and `signs[t]` the sign flip applied to it.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentAlignment {
    pub order: Vec<usize>,
    pub signs: Vec<f64>,
}

impl LatentAlignment {
    /// Reorders the columns of a matrix shaped like U or V (for example
    /// its standard errors) without changing signs.
    pub fn permute_columns(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(m.nrows(), self.order.len(), |r, t| m[(r, self.order[t])])
    }

    pub fn apply(&self, est: &GbmParams) -> GbmParams {
        let mut out = est.clone();
        for (t, (&e, &sign)) in self.order.iter().zip(&self.signs).enumerate() {
            out.u.set_column(t, &(est.u.column(e) * sign));
            out.v.set_column(t, &(est.v.column(e) * sign));
            out.d[t] = est.d[e];
        }
        out
    }
}

pub fn latent_alignment(est: &GbmParams, truth: &GbmParams) -> Result<LatentAlignment> {
    let m = est.d.len();
    if truth.d.len() != m || est.u.nrows() != truth.u.nrows() || est.v.nrows() != truth.v.nrows() {
        return Err(GbmError::Shape("estimate and truth have different latent shapes".into()));
    }
    let corr = DMatrix::from_fn(m, m, |e, t| correlation(est.u.column(e).as_slice(), truth.u.column(t).as_slice()));
    let order: Vec<usize> = if m <= 5 {
        permutations(m)
            .into_iter()
            .max_by(|p, q| {
                let score = |perm: &Vec<usize>| perm.iter().enumerate().map(|(t, &e)| corr[(e, t)].abs()).sum::<f64>();
                score(p).total_cmp(&score(q))
            })
            .unwrap_or_default()
    } else {
        let mut taken = vec![false; m];
        let mut filled = vec![false; m];
        let mut order = vec![0; m];
        let mut pairs: Vec<(usize, usize)> = (0..m).flat_map(|e| (0..m).map(move |t| (e, t))).collect();
        pairs.sort_by(|&(e1, t1), &(e2, t2)| corr[(e2, t2)].abs().total_cmp(&corr[(e1, t1)].abs()));
        for (e, t) in pairs {
            if !taken[e] && !filled[t] {
                taken[e] = true;
                filled[t] = true;
                order[t] = e;
            }
        }
        order
    };
    let signs = order.iter().enumerate().map(|(t, &e)| if corr[(e, t)] < 0.0 { -1.0 } else { 1.0 }).collect();
    Ok(LatentAlignment { order, signs })
}

/// Permutes and sign-flips estimated latent factors to best match the
/// truth.
pub fn align_latent_factors(est: &GbmParams, truth: &GbmParams) -> Result<GbmParams> {
    Ok(latent_alignment(est, truth)?.apply(est))
}

/// Σ(est − truth)² / Σ truth².
pub fn relative_mse(est: &[f64], truth: &[f64]) -> Result<f64> {
    if est.len() != truth.len() {
        return Err(GbmError::Shape(format!("{} estimates for {} true values", est.len(), truth.len())));
    }
    let denom: f64 = truth.iter().map(|t| t * t).sum();
    if denom == 0.0 {
        return Err(GbmError::Domain("true values are all zero".into()));
    }
    Ok(est.iter().zip(truth).map(|(e, t)| (e - t).powi(2)).sum::<f64>() / denom)
}

/// Relative MSE of each block after latent alignment; T is compared on
/// the dispersion scale exp(T).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockErrors {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: Option<f64>,
    pub u: Option<f64>,
    pub v: Option<f64>,
    pub s: f64,
    pub t: f64,
}

pub fn block_relative_mse(est: &GbmParams, truth: &GbmParams) -> Result<BlockErrors> {
    let aligned = align_latent_factors(est, truth)?;
    let latent = |e: &[f64], t: &[f64]| if t.is_empty() { Ok(None) } else { relative_mse(e, t).map(Some) };
    let exp_t = |v: &DVector<f64>| v.iter().map(|x| x.exp()).collect::<Vec<_>>();
    Ok(BlockErrors {
        a: relative_mse(aligned.a.as_slice(), truth.a.as_slice())?,
        b: relative_mse(aligned.b.as_slice(), truth.b.as_slice())?,
        c: relative_mse(aligned.c.as_slice(), truth.c.as_slice())?,
        d: latent(aligned.d.as_slice(), truth.d.as_slice())?,
        u: latent(aligned.u.as_slice(), truth.u.as_slice())?,
        v: latent(aligned.v.as_slice(), truth.v.as_slice())?,
        s: relative_mse(aligned.s.as_slice(), truth.s.as_slice())?,
        t: relative_mse(&exp_t(&aligned.t), &exp_t(&truth.t))?,
    })
}

/// Number of target levels in a coverage curve.
pub const COVERAGE_GRID: usize = 101;

/// Fraction of entries whose central interval at each target level covers
/// the truth, on the grid 0, 0.01, …, 1.
pub fn coverage_curve(estimates: &[f64], ses: &[f64], truths: &[f64]) -> Result<Vec<(f64, f64)>> {
    if estimates.len() != ses.len() || estimates.len() != truths.len() {
        return Err(GbmError::Shape("coverage inputs differ in length".into()));
    }
    if estimates.is_empty() {
        return Err(GbmError::Shape("coverage needs at least one entry".into()));
    }
    if ses.iter().any(|&s| !(s > 0.0)) {
        return Err(GbmError::Domain("standard errors must be positive".into()));
    }
    let mut levels: Vec<f64> =
        estimates.iter().zip(ses).zip(truths).map(|((e, s), t)| 2.0 * normal_cdf((e - t).abs() / s) - 1.0).collect();
    levels.sort_by(f64::total_cmp);
    let n = levels.len() as f64;
    Ok((0..COVERAGE_GRID)
        .map(|g| {
            let target = g as f64 / (COVERAGE_GRID - 1) as f64;
            let covered = levels.partition_point(|&c| c < target);
            (target, covered as f64 / n)
        })
        .collect())
}

/// Empirical coverage of the central interval at one target level.
pub fn coverage_at(estimates: &[f64], ses: &[f64], truths: &[f64], target: f64) -> Result<f64> {
    if estimates.len() != ses.len() || estimates.len() != truths.len() || estimates.is_empty() {
        return Err(GbmError::Shape("coverage inputs differ in length or are empty".into()));
    }
    let covered = estimates
        .iter()
        .zip(ses)
        .zip(truths)
        .filter(|((e, s), t)| 2.0 * normal_cdf((*e - *t).abs() / **s) - 1.0 < target)
        .count();
    Ok(covered as f64 / estimates.len() as f64)
}

/// Appends a balanced random two-group indicator to the column
/// covariates, standardized like the other columns. The data carry no
/// effect of it, so its B column is null.
pub fn with_mock_split<R: Rng + ?Sized>(cov: &CovariateSet, rng: &mut R) -> Result<CovariateSet> {
    let j = cov.ncols();
    if j < 2 {
        return Err(GbmError::Shape("a mock split needs at least two columns".into()));
    }
    let mut labels: Vec<f64> = (0..j).map(|idx| if idx < j / 2 { 1.0 } else { 0.0 }).collect();
    labels.shuffle(rng);
    let z_raw = cov.z.clone().insert_column(cov.l(), 0.0);
    let mut z_raw = z_raw;
    z_raw.set_column(cov.l(), &DVector::from_vec(labels));
    CovariateSet::new(cov.x.clone(), prepare_covariates(&z_raw, true)?)
}

/// Kolmogorov–Smirnov distance between the empirical distribution of
/// `values` and Uniform(0, 1).
pub fn ks_uniform_distance(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(GbmError::Shape("KS distance needs at least one value".into()));
    }
    if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(GbmError::Domain("values must lie in [0, 1]".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    Ok(sorted.iter().enumerate().fold(0.0f64, |acc, (idx, &v)| {
        let above = (idx + 1) as f64 / n - v;
        let below = v - idx as f64 / n;
        acc.max(above).max(below)
    }))
}

/// Estimates, standard errors and true values pooled across replicates.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IntervalSamples {
    pub estimates: Vec<f64>,
    pub ses: Vec<f64>,
    pub truths: Vec<f64>,
}

impl IntervalSamples {
    pub fn extend(&mut self, estimates: &[f64], ses: &[f64], truths: &[f64]) -> Result<()> {
        if estimates.len() != ses.len() || estimates.len() != truths.len() {
            return Err(GbmError::Shape("interval samples differ in length".into()));
        }
        self.estimates.extend_from_slice(estimates);
        self.ses.extend_from_slice(ses);
        self.truths.extend_from_slice(truths);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.estimates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.estimates.is_empty()
    }

    pub fn coverage_at(&self, target: f64) -> Result<f64> {
        coverage_at(&self.estimates, &self.ses, &self.truths, target)
    }

    pub fn coverage_curve(&self) -> Result<Vec<(f64, f64)>> {
        coverage_curve(&self.estimates, &self.ses, &self.truths)
    }
}

/// Interval samples for each block that carries standard errors. The
/// intercept entry c₁₁ is left out because it is confounded with ω.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CoverageSamples {
    pub a: IntervalSamples,
    pub b: IntervalSamples,
    pub c: IntervalSamples,
    pub u: IntervalSamples,
    pub v: IntervalSamples,
    pub s: IntervalSamples,
    pub t: IntervalSamples,
}

impl CoverageSamples {
    /// Adds one replicate after aligning its latent factors to the truth.
    pub fn record(&mut self, est: &GbmParams, se: &StandardErrorSet, truth: &GbmParams) -> Result<()> {
        let shapes = [
            (se.a.shape(), est.a.shape()),
            (se.b.shape(), est.b.shape()),
            (se.c.shape(), est.c.shape()),
            (se.u.shape(), est.u.shape()),
            (se.v.shape(), est.v.shape()),
            (se.s.shape(), est.s.shape()),
            (se.t.shape(), est.t.shape()),
        ];
        if shapes.iter().any(|(a, b)| a != b) {
            return Err(GbmError::Shape("standard errors do not match the estimate".into()));
        }
        let alignment = latent_alignment(est, truth)?;
        let aligned = alignment.apply(est);
        let se_u = alignment.permute_columns(&se.u);
        let se_v = alignment.permute_columns(&se.v);
        self.a.extend(aligned.a.as_slice(), se.a.as_slice(), truth.a.as_slice())?;
        self.b.extend(aligned.b.as_slice(), se.b.as_slice(), truth.b.as_slice())?;
        self.c.extend(&aligned.c.as_slice()[1..], &se.c.as_slice()[1..], &truth.c.as_slice()[1..])?;
        self.u.extend(aligned.u.as_slice(), se_u.as_slice(), truth.u.as_slice())?;
        self.v.extend(aligned.v.as_slice(), se_v.as_slice(), truth.v.as_slice())?;
        self.s.extend(aligned.s.as_slice(), se.s.as_slice(), truth.s.as_slice())?;
        self.t.extend(aligned.t.as_slice(), se.t.as_slice(), truth.t.as_slice())?;
        Ok(())
    }

    pub fn blocks(&self) -> [(&'static str, &IntervalSamples); 7] {
        [("A", &self.a), ("B", &self.b), ("C", &self.c), ("U", &self.u), ("V", &self.v), ("S", &self.s), ("T", &self.t)]
    }
}
