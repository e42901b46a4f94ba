//! Calibration of Wald p-values for a random two-group split that has no
//! effect on the data.
//!
//! ```text
//! cargo run --release --example mock_null -- [replicates] [I] [J]
//! ```

use gbm::estimation::fit;
use gbm::inference::{standard_errors, wald_tests};
use gbm::model::{Dims, FitConfig, PriorConfig};
use gbm::simulation::{ks_uniform_distance, simulate_mock_null, SimScheme};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse()).collect::<Result<_, _>>()?;
    let get = |idx: usize, default: usize| args.get(idx).copied().unwrap_or(default);
    let reps = get(0, 20) as u64;
    let dims = Dims { i: get(1, 200), j: get(2, 50), k: 2, l: 2, m: 1 };
    let scheme = SimScheme::new("NB/Normal/Normal".parse()?, dims, 77)?;
    let prior = PriorConfig::default();

    let mut pooled = Vec::new();
    for rep in 0..reps {
        let (y, truth, split) = simulate_mock_null(&scheme, rep)?;
        let cov = truth.cov;
        let fitted = fit(&y, &cov, dims.m, &prior, &FitConfig::default())?;
        let se = standard_errors(y.values(), &cov, &fitted.params, &prior)?;
        let est: Vec<f64> = fitted.params.b.column(split).iter().copied().collect();
        let ses: Vec<f64> = se.se_b.column(split).iter().copied().collect();
        let wald = wald_tests(&est, &ses, 0.95)?;
        println!("replicate {rep:>2}: KS distance {:.4}", ks_uniform_distance(&wald.p_values)?);
        pooled.extend(wald.p_values);
    }
    println!("pooled KS distance over {} p-values: {:.4}", pooled.len(), ks_uniform_distance(&pooled)?);
    Ok(())
}
