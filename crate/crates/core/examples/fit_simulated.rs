//! Simulate a negative-binomial data set, fit it, and compare with truth.
//!
//! ```text
//! cargo run --release --example fit_simulated -- [I] [J] [M] [seed]
//! ```

use gbm::estimation::fit;
use gbm::model::{check_constraints, Dims, FitConfig, PriorConfig};
use gbm::simulation::{block_relative_mse, simulate, SimScheme};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse()).collect::<Result<_, _>>()?;
    let get = |idx: usize, default: usize| args.get(idx).copied().unwrap_or(default);
    let dims = Dims { i: get(0, 200), j: get(1, 50), k: 2, l: 2, m: get(2, 1) };
    let scheme = SimScheme::new("NB/Normal/Normal".parse()?, dims, get(3, 1) as u64)?;
    let (y, truth) = simulate(&scheme, 0)?;

    let started = std::time::Instant::now();
    let result = fit(&y, &truth.cov, dims.m, &PriorConfig::default(), &FitConfig::default())?;
    println!("converged={} after {} iterations in {:.2?}", result.converged, result.iterations, started.elapsed());
    for (it, value) in result.trace.iter().enumerate() {
        println!("  iter {it:>2}: log-posterior {value:.6}");
    }
    let report = check_constraints(&result.params, &truth.cov, 1e-8);
    println!("constraints satisfied: {}", report.passes_strict());

    let errors = block_relative_mse(&result.params, &truth.params0)?;
    println!("relative MSE by block: {errors:#?}");
    println!("true D {:?}, estimated D {:?}", truth.params0.d.as_slice(), result.params.d.as_slice());
    println!("true omega {:.3}, estimated omega {:.3}", truth.params0.omega, result.params.omega);
    Ok(())
}
