//! MAP estimation by bounded regularized Fisher scoring with
//! likelihood-preserving projections.

mod projection;
mod step;
mod updates;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

pub use projection::{
    bias_correct_dispersions, finalize_factors, project_a, project_b, project_g, project_h, project_s, project_t,
};
pub use step::{bounded_fisher_step, Penalty};
pub use updates::{
    fisher_c, fisher_d, likelihood_gradients, update_a, update_b, update_c, update_d, update_g, update_h, update_s,
    update_t, AdaptiveStepState, FitState, Gradients,
};

use crate::error::{GbmError, Result};
use crate::linalg::truncated_svd;
use crate::model::{CovariateSet, DataMatrix, Dims, FitConfig, GbmParams, PriorConfig};

/// Standard deviation of the noise matrix whose SVD seeds the latent factors.
const INIT_NOISE_SD: f64 = 1e-8;

/// Centers columns after the first and scales them to unit mean square.
pub fn standardize_covariates(raw: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    prepare_covariates(raw, true)
}

/// Centers columns after the first, optionally scaling them, and checks
/// the intercept and rank requirements.
pub fn prepare_covariates(raw: &DMatrix<f64>, standardize: bool) -> Result<DMatrix<f64>> {
    let (n, p) = raw.shape();
    if n == 0 || p == 0 {
        return Err(GbmError::Shape("covariate matrix must be nonempty".into()));
    }
    if raw.column(0).iter().any(|&v| v != 1.0) {
        return Err(GbmError::Input("first covariate column must be all ones".into()));
    }
    let mut out = raw.clone();
    for k in 1..p {
        let mut col = out.column_mut(k);
        let mean = col.mean();
        col.add_scalar_mut(-mean);
        let ms = col.norm_squared() / n as f64;
        let scale = col.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if ms <= (1e-14 * mean.abs()).powi(2) || scale == 0.0 {
            return Err(GbmError::DegenerateCovariate { column: k + 1 });
        }
        if standardize {
            col /= ms.sqrt();
        }
    }
    let sv = out.singular_values();
    let (hi, lo) = (sv.max(), sv.min());
    if p > n || !(lo > 1e-10 * hi) {
        return Err(GbmError::Rank(format!("{p} covariate columns are linearly dependent")));
    }
    Ok(out)
}

/// Starting values: least-squares fit of the log counts for A, B, C, tiny
/// random latent factors, then a few dispersion-only sweeps.
pub fn initialize(
    y: &DataMatrix,
    cov: &CovariateSet,
    m: usize,
    prior: &PriorConfig,
    config: &FitConfig,
) -> Result<(GbmParams, AdaptiveStepState)> {
    let (i, j) = (y.nrows(), y.ncols());
    check_dims(y, cov, m)?;
    let log_y = y.values().map(|v| (v + config.epsilon).ln());
    let xy = &cov.x_pinv * &log_y;
    let c = &xy * cov.z_pinv.transpose();
    let a = (&xy - &c * cov.z.transpose()).transpose();
    let b = &log_y * cov.z_pinv.transpose() - &cov.x * &c;
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let noise = DMatrix::from_fn(i, j, |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        z * INIT_NOISE_SD
    });
    let (u, d, v) = truncated_svd(&noise, m)?;
    let params = GbmParams { a, b, c, d, u, v, s: DVector::zeros(i), t: DVector::zeros(j), omega: 0.0 };
    let mut state = FitState::new(y.values(), cov, params, *prior, *config);
    for _ in 0..config.init_st_iters {
        update_s(&mut state)?;
        update_t(&mut state)?;
    }
    Ok((state.params, state.adapt))
}

fn check_dims(y: &DataMatrix, cov: &CovariateSet, m: usize) -> Result<()> {
    let (i, j) = (y.nrows(), y.ncols());
    if cov.nrows() != i || cov.ncols() != j {
        return Err(GbmError::Shape(format!(
            "counts are {i}x{j} but covariates describe {}x{}",
            cov.nrows(),
            cov.ncols()
        )));
    }
    if m >= i.min(j) {
        return Err(GbmError::Shape(format!("latent dimension {m} must be below min(I, J) = {}", i.min(j))));
    }
    Ok(())
}

/// Outcome of a fit.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: GbmParams,
    /// Log-posterior after initialization and after each iteration.
    pub trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub clamp_events: usize,
    pub warnings: Vec<String>,
}

/// Fits a model with `m` latent factors from the default initialization.
pub fn fit(y: &DataMatrix, cov: &CovariateSet, m: usize, prior: &PriorConfig, config: &FitConfig) -> Result<FitResult> {
    prior.validate()?;
    config.validate()?;
    let (params, adapt) = initialize(y, cov, m, prior, config).map_err(|e| e.context("initialization"))?;
    run(y, cov, params, adapt, prior, config)
}

/// Fits starting from the supplied parameters instead of the default
/// initialization.
pub fn fit_from(
    y: &DataMatrix,
    cov: &CovariateSet,
    start: GbmParams,
    prior: &PriorConfig,
    config: &FitConfig,
) -> Result<FitResult> {
    prior.validate()?;
    config.validate()?;
    check_dims(y, cov, start.d.len())?;
    start.check_shapes(cov)?;
    let adapt = AdaptiveStepState::new(y.nrows(), y.ncols(), config.rho);
    run(y, cov, start, adapt, prior, config)
}

type Update = fn(&mut FitState) -> Result<()>;

fn run(
    y: &DataMatrix,
    cov: &CovariateSet,
    params: GbmParams,
    adapt: AdaptiveStepState,
    prior: &PriorConfig,
    config: &FitConfig,
) -> Result<FitResult> {
    let mut state = FitState::new(y.values(), cov, params, *prior, *config);
    state.adapt = adapt;
    let latent = !state.params.d.is_empty();
    let mut schedule: Vec<(&str, Update)> = vec![("A", update_a), ("B", update_b), ("C", update_c)];
    if latent {
        schedule.extend([("D", update_d as Update), ("G", update_g), ("H", update_h)]);
    }
    schedule.push(("S", |s| update_s(s).map(|_| ())));
    schedule.push(("T", |s| update_t(s).map(|_| ())));

    let mut trace = vec![state.objective()?];
    let mut converged = false;
    let mut iterations = 0;
    for iter in 1..=config.max_iter {
        for (name, update) in &schedule {
            update(&mut state).map_err(|e| e.context(format!("iteration {iter}, update {name}")))?;
        }
        let obj = state.objective()?;
        if !obj.is_finite() {
            return Err(GbmError::Numeric(format!("iteration {iter}: log-posterior is not finite")));
        }
        let prev = *trace.last().expect("trace starts nonempty");
        trace.push(obj);
        iterations = iter;
        if (obj - prev).abs() / (obj.abs() + 1.0) < config.tol {
            converged = true;
            break;
        }
    }
    if config.bias_correction {
        bias_correct_dispersions(&mut state.params, config.s_floor, config.t_floor);
    }
    if let Some(w) = finalize_factors(&mut state.params) {
        log::warn!("{w}");
        state.warnings.push(w);
    }
    Ok(FitResult {
        params: state.params,
        trace,
        converged,
        iterations,
        clamp_events: state.clamp_events,
        warnings: state.warnings,
    })
}

/// Dimensions implied by data, covariates and latent rank.
pub fn dims_of(cov: &CovariateSet, m: usize) -> Dims {
    Dims { i: cov.nrows(), j: cov.ncols(), k: cov.k(), l: cov.l(), m }
}
