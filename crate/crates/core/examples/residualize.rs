//! Removes unwanted variation from counts: keeps the effect of the second
//! column covariate and discards the rest of the fitted structure.
//!
//! ```text
//! cargo run --release --example residualize -- [I] [J] [seed]
//! ```

use gbm::estimation::fit;
use gbm::model::{compute_eta, partial_residuals, residuals, Dims, FitConfig, PriorConfig};
use gbm::simulation::{simulate, SimScheme};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse()).collect::<Result<_, _>>()?;
    let get = |idx: usize, default: usize| args.get(idx).copied().unwrap_or(default);
    let dims = Dims { i: get(0, 200), j: get(1, 50), k: 2, l: 2, m: 2 };
    let scheme = SimScheme::new("NB/Normal/Normal".parse()?, dims, get(2, 5) as u64)?;
    let (y, truth) = simulate(&scheme, 0)?;
    let config = FitConfig::default();
    let fitted = fit(&y, &truth.cov, dims.m, &PriorConfig::default(), &config)?;

    let eta = compute_eta(&fitted.params, &truth.cov)?;
    let resid = residuals(y.values(), &eta, config.epsilon)?;
    let kept = partial_residuals(&fitted.params, &truth.cov, &resid, &[], &[1], &[])?;

    // The column covariate's effect on row i is B[i, 1] * z_j1.
    let z = truth.cov.z.column(1);
    let corr = |m: &nalgebra::DMatrix<f64>| {
        let row = m.row(0).transpose();
        let (mz, mr) = (z.mean(), row.mean());
        let cov: f64 = z.iter().zip(row.iter()).map(|(a, b)| (a - mz) * (b - mr)).sum();
        cov / (z.iter().map(|a| (a - mz).powi(2)).sum::<f64>() * row.iter().map(|b| (b - mr).powi(2)).sum::<f64>())
            .sqrt()
    };
    println!("residual SD {:.4}", (resid.norm_squared() / resid.len() as f64).sqrt());
    println!("row 0 correlation with z2: residuals {:+.3}, with z2 effect kept {:+.3}", corr(&resid), corr(&kept));
    println!("fitted B[0, 1] = {:+.3} (truth {:+.3})", fitted.params.b[(0, 1)], truth.params0.b[(0, 1)]);
    Ok(())
}
