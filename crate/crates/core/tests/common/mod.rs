//! Checks shared by the focused integration tests and the acceptance
//! suite. Each returns a verdict with a one-line summary.
#![allow(dead_code)]

use std::cell::Cell;
use std::time::{Duration, Instant};

use gbm::estimation::{
    fit, fit_from, likelihood_gradients, project_a, project_b, project_g, project_h, project_s, project_t,
};
use gbm::inference::{
    bordered_leading_block, bordered_uv_oracle, jacobian_column, joint_uv_uncertainty, standard_errors, wald_tests,
    Block, Edge, InferenceContext,
};
use gbm::metrics::{lrse, wmad, WeightedSeries};
use gbm::model::{check_constraints, compute_eta, CovariateSet, Dims, FitConfig, GbmParams, PriorConfig};
use gbm::nb::{compute_workspace, dispersion_derivatives, inverse_dispersions, log_likelihood, nb_log_pmf};
use gbm::simulation::{
    block_relative_mse, ks_uniform_distance, simulate, simulate_mock_null, CoverageSamples, SimScheme,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

#[derive(Debug, Clone)]
pub struct Verdict {
    pub pass: bool,
    pub detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }

    fn timed(self, started: Instant) -> Self {
        Self { detail: format!("{} [{:.1?}]", self.detail, started.elapsed()), ..self }
    }
}

pub const DESK: Dims = Dims { i: 200, j: 50, k: 2, l: 2, m: 1 };

pub fn scheme(triplet: &str, dims: Dims, seed: u64) -> SimScheme {
    SimScheme::new(triplet.parse().expect("valid scheme"), dims, seed).expect("valid dims")
}

fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Gaussian design with an intercept first column.
fn design(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
    let mut m = gaussian(rng, n, p);
    m.column_mut(0).fill(1.0);
    m
}

fn random_covariates(rng: &mut ChaCha8Rng, i: usize, j: usize, k: usize, l: usize) -> CovariateSet {
    let (x, z) = (design(rng, i, k), design(rng, j, l));
    CovariateSet::prepare(&x, &z, true).expect("random covariates are full rank")
}

/// An unconstrained random state.
fn random_state(rng: &mut ChaCha8Rng, cov: &CovariateSet, m: usize) -> GbmParams {
    let (i, j, k, l) = (cov.nrows(), cov.ncols(), cov.k(), cov.l());
    GbmParams {
        a: gaussian(rng, j, k),
        b: gaussian(rng, i, l),
        c: gaussian(rng, k, l),
        d: DVector::from_fn(m, |q, _| 4.0 - q as f64 + rng.random_range(0.0..0.5)),
        u: gaussian(rng, i, m),
        v: gaussian(rng, j, m),
        s: DVector::from_fn(i, |_, _| rng.random_range(-1.0..1.0)),
        t: DVector::from_fn(j, |_, _| rng.random_range(-1.0..1.0)),
        omega: rng.random_range(-2.0..0.0),
    }
}

fn max_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).abs().max()
}

/// Criterion 1: every projection keeps η (or r) and establishes its
/// constraints, over 200 random states.
pub fn projections() -> Verdict {
    let started = Instant::now();
    let worst = Cell::new(0.0f64);
    let mut runner = TestRunner::new(Config { cases: 200, failure_persistence: None, ..Config::default() });
    let strategy = (any::<u64>(), 1usize..4, 1usize..4, 0usize..3, 0usize..6, 0usize..6);
    let result = runner.run(&strategy, |(seed, k, l, m, extra_i, extra_j)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (i, j) = (k + m + 3 + extra_i, l + m + 3 + extra_j);
        let cov = random_covariates(&mut rng, i, j, k, l);
        let mut p = random_state(&mut rng, &cov, m);
        let tol = 1e-8;
        let check = |what: &str, before: &DMatrix<f64>, after: &DMatrix<f64>| -> Result<(), TestCaseError> {
            let diff = max_diff(before, after);
            worst.set(worst.get().max(diff));
            prop_assert!(diff < tol, "{what} moved eta/r by {diff:e}");
            Ok(())
        };

        let eta0 = compute_eta(&p, &cov).unwrap();
        project_a(&mut p, &cov);
        check("A projection", &eta0, &compute_eta(&p, &cov).unwrap())?;
        prop_assert!(check_constraints(&p, &cov, tol).za < tol);
        project_b(&mut p, &cov);
        check("B projection", &eta0, &compute_eta(&p, &cov).unwrap())?;
        prop_assert!(check_constraints(&p, &cov, tol).xb < tol);
        if m > 0 {
            let h = p.scaled_v();
            project_h(&mut p, &h, &cov).unwrap();
            check("H projection", &eta0, &compute_eta(&p, &cov).unwrap())?;
            let rep = check_constraints(&p, &cov, tol);
            prop_assert!(rep.zv < tol && rep.vtv < tol && rep.xb < tol, "{rep:?}");
            let g = p.scaled_u();
            project_g(&mut p, &g, &cov).unwrap();
            check("G projection", &eta0, &compute_eta(&p, &cov).unwrap())?;

            // A fresh G replaces U·D inside η, and the constraints hold.
            let g_new = gaussian(&mut rng, i, m);
            let mut replaced = p.clone();
            replaced.u = g_new.clone();
            replaced.d = DVector::from_element(m, 1.0);
            let target = compute_eta(&replaced, &cov).unwrap();
            let mut q = p.clone();
            project_g(&mut q, &g_new, &cov).unwrap();
            check("G projection with a new G", &target, &compute_eta(&q, &cov).unwrap())?;
            let rep = check_constraints(&q, &cov, tol);
            prop_assert!(rep.xu < tol && rep.utu < tol && rep.za < tol && rep.vtv < tol, "{rep:?}");
        }
        let r0 = inverse_dispersions(&p.s, &p.t, p.omega);
        project_s(&mut p);
        check("S projection", &r0, &inverse_dispersions(&p.s, &p.t, p.omega))?;
        project_t(&mut p);
        check("T projection", &r0, &inverse_dispersions(&p.s, &p.t, p.omega))?;
        let rep = check_constraints(&p, &cov, tol);
        prop_assert!(rep.passes(), "{rep:?}");
        Ok(())
    });
    let detail = format!("200 random states, worst |change| {:.2e}", worst.get());
    match result {
        Ok(()) => Verdict::new(true, detail),
        Err(e) => Verdict::new(false, format!("{detail}; {e}")),
    }
    .timed(started)
}

fn block_mut<'a>(p: &'a mut GbmParams, name: &str) -> &'a mut [f64] {
    match name {
        "A" => p.a.as_mut_slice(),
        "B" => p.b.as_mut_slice(),
        "C" => p.c.as_mut_slice(),
        "D" => p.d.as_mut_slice(),
        "U" => p.u.as_mut_slice(),
        _ => p.v.as_mut_slice(),
    }
}

fn log_lik(y: &DMatrix<f64>, p: &GbmParams, cov: &CovariateSet) -> f64 {
    let ws = compute_workspace(y, &compute_eta(p, cov).unwrap(), &p.s, &p.t, p.omega).unwrap();
    log_likelihood(y, &ws)
}

fn rel_err(fd: &[f64], an: &[f64]) -> f64 {
    let num: f64 = fd.iter().zip(an).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let den: f64 = an.iter().map(|v| v * v).sum::<f64>().sqrt();
    num / den.max(1e-12)
}

/// Criterion 2: analytic gradients of the six bilinear blocks and the
/// dispersion derivatives against central finite differences.
pub fn derivatives() -> Verdict {
    let started = Instant::now();
    let (mut worst_grad, mut worst_second) = (0.0f64, 0.0f64);
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let cov = random_covariates(&mut rng, 5, 4, 2, 2);
        let mut p = random_state(&mut rng, &cov, 2);
        p.a *= 0.3;
        p.b *= 0.3;
        p.c *= 0.3;
        p.d *= 0.2;
        let y = DMatrix::from_fn(5, 4, |_, _| rng.random_range(0..12) as f64);
        let ws = compute_workspace(&y, &compute_eta(&p, &cov).unwrap(), &p.s, &p.t, p.omega).unwrap();
        let grads = likelihood_gradients(&p, &cov, &ws);
        let h = 1e-6;
        let blocks = [
            ("A", grads.a.as_slice()),
            ("B", grads.b.as_slice()),
            ("C", grads.c.as_slice()),
            ("D", grads.d.as_slice()),
            ("U", grads.u.as_slice()),
            ("V", grads.v.as_slice()),
        ];
        for (name, analytic) in blocks {
            let fd: Vec<f64> = (0..analytic.len())
                .map(|idx| {
                    let mut plus = p.clone();
                    block_mut(&mut plus, name)[idx] += h;
                    let mut minus = p.clone();
                    block_mut(&mut minus, name)[idx] -= h;
                    (log_lik(&y, &plus, &cov) - log_lik(&y, &minus, &cov)) / (2.0 * h)
                })
                .collect();
            let err = rel_err(&fd, analytic);
            worst_grad = worst_grad.max(err);
            if err >= 1e-5 {
                return Verdict::new(false, format!("gradient of {name} off by {err:.2e} (seed {seed})"));
            }
        }
        // Per-entry dispersion derivatives in s (t enters identically).
        let derivs = dispersion_derivatives(&y, &ws.mu, &ws.r);
        let term = |i: usize, j: usize, shift: f64| {
            let r = (-p.s[i] - shift - p.t[j] - p.omega).exp();
            nb_log_pmf(y[(i, j)], ws.mu[(i, j)], r).unwrap()
        };
        for i in 0..5 {
            for j in 0..4 {
                let h1 = 1e-6;
                let first = (term(i, j, h1) - term(i, j, -h1)) / (2.0 * h1);
                let e1 = (first - derivs.delta[(i, j)]).abs() / derivs.delta[(i, j)].abs().max(1e-3);
                let h2 = 1e-3;
                let second = (term(i, j, -h2) - 2.0 * term(i, j, 0.0) + term(i, j, h2)) / (h2 * h2);
                let e2 = (second - derivs.delta_prime[(i, j)]).abs() / derivs.delta_prime[(i, j)].abs().max(1e-3);
                worst_grad = worst_grad.max(e1);
                worst_second = worst_second.max(e2);
                if e1 >= 1e-5 || e2 >= 1e-4 {
                    return Verdict::new(false, format!("dispersion derivative at ({i}, {j}) off: {e1:.2e}, {e2:.2e}"));
                }
            }
        }
    }
    Verdict::new(
        true,
        format!(
            "5 instances of 5x4, worst gradient error {worst_grad:.2e}, worst second derivative {worst_second:.2e}"
        ),
    )
    .timed(started)
}

/// Criterion 3: the bordered inverse is unchanged by adding JᵀJ to F.
pub fn bordered_equivalence() -> Verdict {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let d = rng.random_range(2..=30);
        let k = rng.random_range(1..=10.min(d - 1));
        let g = gaussian(&mut rng, d, d);
        let f = &g * g.transpose() + DMatrix::identity(d, d) * 0.1;
        let j = gaussian(&mut rng, k, d);
        let lhs = bordered_leading_block(&f, &j).unwrap();
        let rhs = bordered_leading_block(&(&f + j.tr_mul(&j)), &j).unwrap();
        let rel = max_diff(&lhs, &rhs) / lhs.abs().max();
        worst = worst.max(rel);
        if rel > 1e-9 {
            return Verdict::new(false, format!("case {case} (d={d}, k={k}): relative difference {rel:.2e}"));
        }
    }
    Verdict::new(true, format!("100 pairs, worst relative difference {worst:.2e}")).timed(started)
}

fn instance(i: usize, j: usize, m: usize, seed: u64) -> (DMatrix<f64>, CovariateSet, GbmParams) {
    let (y, truth) = simulate(&scheme("NB/Normal/Normal", Dims { i, j, k: 2, l: 2, m }, seed), 0).unwrap();
    (y.values().clone(), truth.cov, truth.params0)
}

/// Criterion 4: joint (U, V) variances against dense bordered inversion.
pub fn joint_uv() -> Verdict {
    let started = Instant::now();
    let mut worst = 0.0f64;
    for m in [1, 2] {
        let (y, cov, p) = instance(12, 8, m, 40 + m as u64);
        let ctx = InferenceContext::new(&y, &cov, &p, &PriorConfig::default()).unwrap();
        let joint = joint_uv_uncertainty(&ctx).unwrap();
        let (ou, ov) = bordered_uv_oracle(&ctx).unwrap();
        let rel = (max_diff(&joint.var_u, &ou) / ou.abs().max()).max(max_diff(&joint.var_v, &ov) / ov.abs().max());
        worst = worst.max(rel);
    }
    Verdict::new(worst <= 1e-8, format!("I=12, J=8, M in {{1,2}}: worst relative difference {worst:.2e}"))
        .timed(started)
}

fn flat_rows(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.transpose().as_slice())
}

fn one_step(y: &DMatrix<f64>, cov: &CovariateSet, p: &GbmParams, target: Block) -> DVector<f64> {
    let rows = InferenceContext::new(y, cov, p, &PriorConfig::default()).unwrap();
    let cols = rows.transposed().unwrap();
    let (a, c, s) = rows.one_step_targets();
    let (b, _, t) = cols.one_step_targets();
    match target {
        Block::A => flat_rows(&a),
        Block::B => flat_rows(&b),
        Block::C => c,
        Block::S => s,
        Block::T => t,
        _ => unreachable!("U and V are never propagation targets"),
    }
}

fn perturb(p: &GbmParams, block: Block, idx: usize, h: f64) -> GbmParams {
    let mut q = p.clone();
    let target = match block {
        Block::A => &mut q.a,
        Block::B => &mut q.b,
        Block::U => &mut q.u,
        Block::V => &mut q.v,
        _ => unreachable!("only A, B, U and V are propagation sources"),
    };
    let width = target.ncols();
    target[(idx / width, idx % width)] += h;
    q
}

/// Criterion 5: each propagation Jacobian column against finite
/// differences of the one-step map, 20 coordinates per edge.
pub fn propagation_jacobians() -> Verdict {
    let started = Instant::now();
    let (y, cov, p) = instance(6, 5, 2, 11);
    let rows = InferenceContext::new(&y, &cov, &p, &PriorConfig::default()).unwrap();
    let cols = rows.transposed().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for edge in Edge::ALL {
        let n = edge.source.len(&rows);
        for _ in 0..20 {
            let idx = rng.random_range(0..n);
            let analytic = jacobian_column(&rows, &cols, edge, idx).unwrap();
            let plus = one_step(&y, &cov, &perturb(&p, edge.source, idx, h), edge.target);
            let minus = one_step(&y, &cov, &perturb(&p, edge.source, idx, -h), edge.target);
            let fd = (plus - minus) / (2.0 * h);
            let rel = (&fd - &analytic).norm() / analytic.norm().max(1e-6);
            worst = worst.max(rel);
            if rel >= 1e-3 {
                return Verdict::new(false, format!("{edge} coordinate {idx}: relative error {rel:.2e}"));
            }
        }
    }
    Verdict::new(true, format!("{} edges x 20 coordinates, worst relative error {worst:.2e}", Edge::ALL.len()))
        .timed(started)
}

/// Largest relative decrease of a trace from iteration 3 on.
pub fn worst_decrease(trace: &[f64]) -> f64 {
    (3..trace.len()).map(|k| (trace[k - 1] - trace[k]) / (trace[k - 1].abs() + 1.0)).fold(0.0, f64::max)
}

pub struct ConvergenceStudy {
    pub all_converged: bool,
    pub max_iterations: usize,
    /// (seed, worst relative decrease) for seeds over the slack.
    pub nonmonotone: Vec<(u64, f64)>,
}

/// Criterion 6 data: 25 seeded desk-scale fits.
pub fn convergence_study() -> ConvergenceStudy {
    let results: Vec<_> = (0..25u64)
        .into_par_iter()
        .map(|seed| {
            let (y, truth) = simulate(&scheme("NB/Normal/Normal", DESK, seed), 0).unwrap();
            let r = fit(&y, &truth.cov, DESK.m, &PriorConfig::default(), &FitConfig::default()).unwrap();
            (seed, r.converged, r.iterations, worst_decrease(&r.trace))
        })
        .collect();
    ConvergenceStudy {
        all_converged: results.iter().all(|r| r.1),
        max_iterations: results.iter().map(|r| r.2).max().unwrap_or(0),
        nonmonotone: results.iter().filter(|r| r.3 > 1e-6).map(|r| (r.0, r.3)).collect(),
    }
}

pub fn convergence_verdict(study: &ConvergenceStudy) -> Verdict {
    let listed: Vec<String> = study.nonmonotone.iter().map(|(s, d)| format!("seed {s}: {d:.2e}")).collect();
    Verdict::new(
        study.all_converged && study.nonmonotone.is_empty(),
        format!(
            "all converged: {} (max {} iterations); relative trace decreases over 1e-6: [{}]",
            study.all_converged,
            study.max_iterations,
            listed.join(", ")
        ),
    )
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Criterion 7: median relative MSE of A falls with I.
pub fn consistency() -> Verdict {
    let started = Instant::now();
    let sizes = [100usize, 400, 1600];
    let medians: Vec<f64> = sizes
        .iter()
        .map(|&i| {
            let dims = Dims { i, ..DESK };
            let errs: Vec<f64> = (0..20u64)
                .into_par_iter()
                .map(|rep| {
                    let (y, truth) = simulate(&scheme("NB/Normal/Normal", dims, 700 + i as u64), rep).unwrap();
                    let r = fit(&y, &truth.cov, dims.m, &PriorConfig::default(), &FitConfig::default()).unwrap();
                    block_relative_mse(&r.params, &truth.params0).unwrap().a
                })
                .collect();
            median(errs)
        })
        .collect();
    let monotone = medians.windows(2).all(|w| w[1] < w[0]);
    let ratio = medians[0] / medians[2];
    Verdict::new(
        monotone && ratio > 4.0,
        format!(
            "median rel. MSE of A at I=100/400/1600: {:.3e} / {:.3e} / {:.3e}; ratio {ratio:.1}",
            medians[0], medians[1], medians[2]
        ),
    )
    .timed(started)
}

/// Pooled interval samples from `reps` fitted replicates.
pub fn coverage_samples(triplet: &str, reps: u64, seed: u64) -> CoverageSamples {
    let sch = scheme(triplet, DESK, seed);
    let prior = PriorConfig::default();
    let fits: Vec<_> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let (y, truth) = simulate(&sch, rep).unwrap();
            let r = fit(&y, &truth.cov, DESK.m, &prior, &FitConfig::default()).unwrap();
            let se = standard_errors(y.values(), &truth.cov, &r.params, &prior).unwrap();
            (r.params, se.errors(), truth.params0)
        })
        .collect();
    let mut samples = CoverageSamples::default();
    for (est, se, truth) in &fits {
        samples.record(est, se, truth).unwrap();
    }
    samples
}

/// Empirical (50%, 95%) coverage of each block.
pub fn coverage_table(samples: &CoverageSamples) -> Vec<(&'static str, f64, f64)> {
    samples
        .blocks()
        .into_iter()
        .filter(|(_, block)| !block.is_empty())
        .map(|(name, block)| (name, block.coverage_at(0.5).unwrap(), block.coverage_at(0.95).unwrap()))
        .collect()
}

/// A band requirement: block name, optional 50% band, 95% band.
pub type Band = (&'static str, Option<(f64, f64)>, (f64, f64));

pub fn within(band: &Band, c50: f64, c95: f64) -> bool {
    band.1.is_none_or(|(lo, hi)| (lo..=hi).contains(&c50)) && (band.2 .0..=band.2 .1).contains(&c95)
}

/// Checks coverage bands for the listed blocks; failing blocks are marked `!`.
pub fn coverage_verdict(table: &[(&'static str, f64, f64)], bands: &[Band]) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for &(name, c50, c95) in table {
        let Some(band) = bands.iter().find(|b| b.0 == name) else { continue };
        let ok = within(band, c50, c95);
        pass &= ok;
        parts.push(format!("{name}{} {c50:.3}/{c95:.3}", if ok { "" } else { "!" }));
    }
    Verdict::new(pass, format!("coverage at 50%/95%: {}", parts.join(", ")))
}

pub const TIGHT_50: (f64, f64) = (0.42, 0.58);
pub const TIGHT_95: (f64, f64) = (0.90, 0.98);
pub const LOOSE_95: (f64, f64) = (0.85, 0.99);

/// Criterion 8.
pub fn coverage() -> Verdict {
    let started = Instant::now();
    let table = coverage_table(&coverage_samples("NB/Normal/Normal", 200, 2024));
    let tight = Some(TIGHT_50);
    coverage_verdict(
        &table,
        &[
            ("A", tight, TIGHT_95),
            ("B", tight, TIGHT_95),
            ("C", tight, TIGHT_95),
            ("U", tight, TIGHT_95),
            ("S", tight, TIGHT_95),
            ("V", None, LOOSE_95),
            ("T", None, LOOSE_95),
        ],
    )
    .timed(started)
}

/// Criterion 9: Wald p-values of a null column covariate are uniform.
pub fn mock_null() -> Verdict {
    let started = Instant::now();
    let dims = Dims { l: 2, ..DESK };
    let sch = scheme("NB/Normal/Normal", dims, 77);
    let prior = PriorConfig::default();
    let p_values: Vec<Vec<f64>> = (0..20u64)
        .into_par_iter()
        .map(|rep| {
            let (y, truth, split) = simulate_mock_null(&sch, rep).unwrap();
            let r = fit(&y, &truth.cov, dims.m, &prior, &FitConfig::default()).unwrap();
            let se = standard_errors(y.values(), &truth.cov, &r.params, &prior).unwrap();
            let est: Vec<f64> = r.params.b.column(split).iter().copied().collect();
            let err: Vec<f64> = se.se_b.column(split).iter().copied().collect();
            wald_tests(&est, &err, 0.95).unwrap().p_values
        })
        .collect();
    let pooled: Vec<f64> = p_values.concat();
    let ks = ks_uniform_distance(&pooled).unwrap();
    Verdict::new(ks < 0.03, format!("pooled KS distance over {} p-values: {ks:.4}", pooled.len())).timed(started)
}

pub const ROBUST_BANDS: [Band; 3] =
    [("A", Some(TIGHT_50), TIGHT_95), ("B", Some(TIGHT_50), TIGHT_95), ("C", Some(TIGHT_50), TIGHT_95)];

/// Criterion 10 data: coverage table under a misspecified outcome family.
pub fn robustness(triplet: &str) -> Vec<(&'static str, f64, f64)> {
    coverage_table(&coverage_samples(triplet, 200, 2025))
}

/// Criterion 11: truth-initialized and default fits reach the same
/// optimum. Both run to a relative objective change of 1e-8; at the
/// default 1e-6 a fit started at the truth can stop after a few
/// iterations, before reaching the optimum.
pub fn initialization() -> Verdict {
    let started = Instant::now();
    let prior = PriorConfig::default();
    let config = FitConfig { tol: 1e-8, max_iter: 500, ..FitConfig::default() };
    let worst: Vec<(u64, f64)> = (0..10u64)
        .into_par_iter()
        .map(|seed| {
            let (y, truth) = simulate(&scheme("NB/Normal/Normal", DESK, 500 + seed), 0).unwrap();
            let default = fit(&y, &truth.cov, DESK.m, &prior, &config).unwrap();
            let from_truth = fit_from(&y, &truth.cov, truth.params0.clone(), &prior, &config).unwrap();
            assert!(default.converged && from_truth.converged, "seed {seed} did not converge");
            let e = block_relative_mse(&from_truth.params, &default.params).unwrap();
            let all = [Some(e.a), Some(e.b), Some(e.c), e.d, e.u, e.v, Some(e.s), Some(e.t)];
            (seed, all.into_iter().flatten().fold(0.0, f64::max))
        })
        .collect();
    let (seed, max) = worst.iter().copied().fold((0, 0.0), |acc, w| if w.1 > acc.1 { w } else { acc });
    Verdict::new(max < 1e-4, format!("10 instances, largest block relative MSE {max:.2e} (seed {seed})")).timed(started)
}

/// Naive O(n·k) LRSE and WMAD written independently of the library.
pub fn naive_scores(x: &[f64], w: &[f64], k: usize) -> (f64, f64) {
    let n = x.len() as isize;
    let half = (k / 2) as isize;
    let mut xbar = vec![0.0; x.len()];
    let mut wbar = vec![0.0; x.len()];
    for i in 0..n {
        let (mut num, mut den, mut count) = (0.0, 0.0, 0.0);
        for j in (i - half).max(0)..=(i + half).min(n - 1) {
            num += w[j as usize] * x[j as usize];
            den += w[j as usize];
            count += 1.0;
        }
        xbar[i as usize] = num / den;
        wbar[i as usize] = den / count;
    }
    let mut ss = 0.0;
    for i in 0..x.len() {
        ss += (w[i] / wbar[i] * (x[i] - xbar[i])).powi(2);
    }
    let lrse = (ss / x.len() as f64).sqrt();
    let mut diffs: Vec<f64> = (1..x.len()).map(|i| k as f64 * (xbar[i] - xbar[i - 1]).abs()).collect();
    diffs.sort_by(f64::total_cmp);
    let m = diffs.len();
    let wmad = if m % 2 == 1 { diffs[m / 2] } else { 0.5 * (diffs[m / 2 - 1] + diffs[m / 2]) };
    (lrse, wmad)
}

/// Criterion 12: LRSE and WMAD against the naive reference.
pub fn metrics_oracle() -> Verdict {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst = 0.0f64;
    for case in 0..1000 {
        let n = if case % 100 == 0 { 10_000 } else { rng.random_range(2..400) };
        let k = 2 * rng.random_range(0..60);
        let level = rng.random_range(-5.0..5.0);
        let x: Vec<f64> = (0..n).map(|_| level + rng.sample::<f64, _>(StandardNormal)).collect();
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..20.0)).collect();
        let series = WeightedSeries::new(x.clone(), w.clone(), k).unwrap();
        let (l_ref, m_ref) = naive_scores(&x, &w, k);
        let rel = |v: f64, r: f64| (v - r).abs() / r.abs().max(1.0);
        let err = rel(lrse(&series).unwrap(), l_ref).max(rel(wmad(&series).unwrap(), m_ref));
        worst = worst.max(err);
        if err > 1e-12 {
            return Verdict::new(false, format!("case {case} (n={n}, k={k}): difference {err:.2e}"));
        }
    }
    Verdict::new(true, format!("1000 series up to n=10000, worst relative difference {worst:.2e}")).timed(started)
}

fn best_of<T>(runs: usize, mut f: impl FnMut() -> (Duration, T)) -> (Duration, T) {
    let mut best = f();
    for _ in 1..runs {
        let next = f();
        if next.0 < best.0 {
            best = next;
        }
    }
    best
}

/// Fit time per iteration, excluding initialization: the difference
/// between 6 and 1 forced iterations, over 5.
fn per_iteration(i: usize, j: usize) -> Duration {
    let dims = Dims { i, j, ..DESK };
    let (y, truth) = simulate(&scheme("NB/Normal/Normal", dims, 9), 0).unwrap();
    let timed = |iterations: usize| {
        let config = FitConfig { tol: f64::MIN_POSITIVE, max_iter: iterations, ..FitConfig::default() };
        best_of(3, || {
            let t = Instant::now();
            let r = fit(&y, &truth.cov, dims.m, &PriorConfig::default(), &config).unwrap();
            (t.elapsed(), r.iterations)
        })
        .0
    };
    timed(6).saturating_sub(timed(1)) / 5
}

fn inference_time(i: usize, j: usize) -> Duration {
    let dims = Dims { i, j, k: 2, l: 2, m: 2 };
    let (y, truth) = simulate(&scheme("NB/Normal/Normal", dims, 10), 0).unwrap();
    best_of(3, || {
        let t = Instant::now();
        let r = standard_errors(y.values(), &truth.cov, &truth.params0, &PriorConfig::default()).unwrap();
        (t.elapsed(), r.se_a.nrows())
    })
    .0
}

/// Criterion 13: per-iteration fit time in I, inference time in J. The fit
/// sizes keep the I x J work matrices out of cache at both sizes, so the
/// ratio reflects arithmetic rather than a cache-size step.
pub fn scaling() -> Verdict {
    let started = Instant::now();
    let fit_ratio = per_iteration(3200, 100).as_secs_f64() / per_iteration(1600, 100).as_secs_f64();
    let inf_ratio = inference_time(400, 200).as_secs_f64() / inference_time(400, 100).as_secs_f64();
    Verdict::new(
        fit_ratio <= 2.5 && inf_ratio <= 5.0,
        format!("fit time per iteration x{fit_ratio:.2} for 2x I; inference time x{inf_ratio:.2} for 2x J"),
    )
    .timed(started)
}
