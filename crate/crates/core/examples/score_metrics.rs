//! Scores sequential estimates with LRSE and WMAD.
//!
//! Two synthetic tracks share the same precisions: a flat one with noise,
//! and one with a step change. WMAD reacts to the step's local slope while
//! LRSE measures the noise around the moving average.
//!
//! ```text
//! cargo run --release --example score_metrics -- [n] [bandwidth] [seed]
//! ```

use gbm::metrics::{lrse, weighted_moving_average, wmad, WeightedSeries};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::Normal;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse()).collect::<Result<_, _>>()?;
    let get = |idx: usize, default: usize| args.get(idx).copied().unwrap_or(default);
    let (n, k) = (get(0, 5000), get(1, 100));
    let mut rng = ChaCha20Rng::seed_from_u64(get(2, 1) as u64);

    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..4.0)).collect();
    let noise: Vec<f64> = w.iter().map(|&wi| rng.sample(Normal::new(0.0, 1.0 / wi.sqrt()).unwrap())).collect();
    let flat = noise.clone();
    let step: Vec<f64> = noise.iter().enumerate().map(|(i, e)| e + if i < n / 2 { 0.0 } else { 1.0 }).collect();

    for (name, x) in [("flat", flat), ("step", step)] {
        let series = WeightedSeries::new(x, w.clone(), k)?;
        let smooth = weighted_moving_average(&series);
        println!(
            "{name:>4}: LRSE {:.4}  WMAD {:.4}  smoothed value at the midpoint {:+.3}",
            lrse(&series)?,
            wmad(&series)?,
            smooth[n / 2]
        );
    }
    Ok(())
}
