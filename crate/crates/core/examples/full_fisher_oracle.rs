//! Compares delta-propagated standard errors with the inverse of the full
//! constraint-augmented Fisher information on a small instance.
//!
//! ```text
//! cargo run --release --example full_fisher_oracle -- [I] [J] [seed]
//! ```

use gbm::estimation::fit;
use gbm::inference::{full_augmented_fisher_oracle, standard_errors, InferenceContext};
use gbm::model::{Dims, FitConfig, PriorConfig};
use gbm::simulation::{simulate, SimScheme};
use nalgebra::DMatrix;

fn ratio_summary(name: &str, se: &DMatrix<f64>, var: &DMatrix<f64>) {
    let ratios: Vec<f64> = se.iter().zip(var.iter()).map(|(s, v)| s / v.max(0.0).sqrt()).collect();
    let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ratios.iter().copied().fold(0.0, f64::max);
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    println!("{name}: propagated / full SE ratio mean {mean:.3}, range [{lo:.3}, {hi:.3}]");
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse()).collect::<Result<_, _>>()?;
    let get = |idx: usize, default: usize| args.get(idx).copied().unwrap_or(default);
    let dims = Dims { i: get(0, 60), j: get(1, 20), k: 2, l: 2, m: 1 };
    let scheme = SimScheme::new("NB/Normal/Normal".parse()?, dims, get(2, 3) as u64)?;
    let (y, truth) = simulate(&scheme, 0)?;
    let prior = PriorConfig::default();
    let fitted = fit(&y, &truth.cov, dims.m, &prior, &FitConfig::default())?;

    let se = standard_errors(y.values(), &truth.cov, &fitted.params, &prior)?;
    let ctx = InferenceContext::new(y.values(), &truth.cov, &fitted.params, &prior)?;
    let oracle = full_augmented_fisher_oracle(&ctx)?;
    println!("information asymmetry {:.2e}", oracle.asymmetry);
    println!("largest dispersion cross information {:.2e}", oracle.dispersion_cross_max);
    ratio_summary("A", &se.se_a, &oracle.var_a);
    ratio_summary("B", &se.se_b, &oracle.var_b);
    ratio_summary("C", &se.se_c, &oracle.var_c);
    ratio_summary("U", &se.se_u, &oracle.var_u);
    ratio_summary("V", &se.se_v, &oracle.var_v);
    Ok(())
}
