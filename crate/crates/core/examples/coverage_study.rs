//! Coverage of Wald intervals over simulated replicates.
//!
//! ```text
//! cargo run --release --example coverage_study -- [replicates] [I] [J] [scheme] [seed]
//! ```

use gbm::estimation::fit;
use gbm::inference::standard_errors;
use gbm::model::{Dims, FitConfig, PriorConfig};
use gbm::simulation::{simulate, CoverageSamples, SimScheme};
use rayon::prelude::*;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let num = |idx: usize, default: usize| args.get(idx).and_then(|a| a.parse().ok()).unwrap_or(default);
    let reps = num(0, 40) as u64;
    let dims = Dims { i: num(1, 200), j: num(2, 50), k: 2, l: 2, m: 1 };
    let triplet = args.get(3).map(String::as_str).unwrap_or("NB/Normal/Normal").parse()?;
    let scheme = SimScheme::new(triplet, dims, num(4, 2024) as u64)?;
    let prior = PriorConfig::default();

    let fits: Vec<_> = (0..reps)
        .into_par_iter()
        .map(|rep| -> gbm::Result<_> {
            let (y, truth) = simulate(&scheme, rep)?;
            let fitted = fit(&y, &truth.cov, dims.m, &prior, &FitConfig::default())?;
            let se = standard_errors(y.values(), &truth.cov, &fitted.params, &prior)?;
            Ok((fitted.params, se, truth.params0))
        })
        .collect::<Result<_, _>>()?;
    let mut samples = CoverageSamples::default();
    for (est, se, truth) in &fits {
        samples.record(est, &se.errors(), truth)?;
    }
    println!("{reps} replicates of {} at I={}, J={}", scheme.triplet(), dims.i, dims.j);
    println!("block  entries  cover@50%  cover@95%");
    for (name, block) in samples.blocks() {
        println!("{name:>5}  {:>7}  {:>9.3}  {:>9.3}", block.len(), block.coverage_at(0.5)?, block.coverage_at(0.95)?);
    }
    Ok(())
}
