//! Standard errors and Wald tests for a fitted model.
//!
//! Fits one simulated data set, computes standard errors for every block,
//! and tests each coefficient of the second column covariate.
//!
//! ```text
//! cargo run --release --example standard_errors -- [I] [J] [seed]
//! ```

use gbm::estimation::fit;
use gbm::inference::{standard_errors, wald_tests};
use gbm::model::{Dims, FitConfig, PriorConfig};
use gbm::simulation::{simulate, SimScheme};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse()).collect::<Result<_, _>>()?;
    let get = |idx: usize, default: usize| args.get(idx).copied().unwrap_or(default);
    let dims = Dims { i: get(0, 200), j: get(1, 50), k: 2, l: 2, m: 1 };
    let scheme = SimScheme::new("NB/Normal/Normal".parse()?, dims, get(2, 1) as u64)?;
    let (y, truth) = simulate(&scheme, 0)?;
    let prior = PriorConfig::default();
    let fitted = fit(&y, &truth.cov, dims.m, &prior, &FitConfig::default())?;

    let started = std::time::Instant::now();
    let se = standard_errors(y.values(), &truth.cov, &fitted.params, &prior)?;
    println!("standard errors in {:.2?}", started.elapsed());
    for w in &se.warnings {
        println!("warning: {w}");
    }
    let mean = |m: &[f64]| m.iter().sum::<f64>() / m.len() as f64;
    println!(
        "mean SE  A {:.4}  B {:.4}  C {:.4}",
        mean(se.se_a.as_slice()),
        mean(se.se_b.as_slice()),
        mean(se.se_c.as_slice())
    );
    println!("mean SE  U {:.4}  V {:.4}", mean(se.se_u.as_slice()), mean(se.se_v.as_slice()));
    println!("mean SE  S {:.4}  T {:.4}", mean(se.se_s.as_slice()), mean(se.se_t.as_slice()));

    let est: Vec<f64> = fitted.params.b.column(1).iter().copied().collect();
    let err: Vec<f64> = se.se_b.column(1).iter().copied().collect();
    let truth_b: Vec<f64> = truth.params0.b.column(1).iter().copied().collect();
    let wald = wald_tests(&est, &err, 0.95)?;
    let significant = wald.p_values.iter().filter(|&&p| p < 0.05).count();
    let covered = (0..est.len()).filter(|&i| wald.ci_lower[i] <= truth_b[i] && truth_b[i] <= wald.ci_upper[i]).count();
    println!("B column 2: {significant}/{} rows with p < 0.05; 95% intervals cover the truth for {covered}", est.len());
    for i in 0..5 {
        println!(
            "  row {i}: estimate {:+.3} (truth {:+.3}), SE {:.3}, p {:.3e}",
            est[i], truth_b[i], err[i], wald.p_values[i]
        );
    }
    Ok(())
}
