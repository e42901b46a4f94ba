//! Precision-weighted signal-quality metrics for sequential estimates:
//! weighted moving average, local relative standard error (LRSE) and
//! weighted median absolute difference (WMAD).

use crate::error::{GbmError, Result};

/// Default moving-average bandwidth.
pub const DEFAULT_BANDWIDTH: usize = 100;

/// Values `x`, positive precisions `w` and an even bandwidth `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSeries {
    x: Vec<f64>,
    w: Vec<f64>,
    k: usize,
}

impl WeightedSeries {
    pub fn new(x: Vec<f64>, w: Vec<f64>, k: usize) -> Result<Self> {
        if x.is_empty() {
            return Err(GbmError::Shape("series must be nonempty".into()));
        }
        if x.len() != w.len() {
            return Err(GbmError::Shape(format!("{} values but {} weights", x.len(), w.len())));
        }
        if !k.is_multiple_of(2) {
            return Err(GbmError::Domain(format!("bandwidth {k} must be even")));
        }
        if let Some(pos) = w.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(GbmError::Domain(format!("weight {} at position {pos} must be positive", w[pos])));
        }
        if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
            return Err(GbmError::Domain(format!("value at position {pos} is not finite")));
        }
        Ok(Self { x, w, k })
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn w(&self) -> &[f64] {
        &self.w
    }

    pub fn bandwidth(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Inclusive 0-based window [i − k/2, i + k/2] clipped to the series.
    pub fn window(&self, i: usize) -> (usize, usize) {
        let h = self.k / 2;
        (i.saturating_sub(h), (i + h).min(self.x.len() - 1))
    }

    fn require_two(&self, what: &str) -> Result<()> {
        if self.x.len() < 2 {
            return Err(GbmError::Shape(format!("{what} needs at least two points")));
        }
        Ok(())
    }
}

/// Compensated running sum so that sliding updates stay accurate over
/// long series.
#[derive(Default, Clone, Copy)]
struct RunningSum {
    sum: f64,
    comp: f64,
}

impl RunningSum {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Sliding window sums of `f(j)` for every window.
fn window_sums(series: &WeightedSeries, f: impl Fn(usize) -> f64) -> Vec<f64> {
    let n = series.len();
    let mut acc = RunningSum::default();
    let (mut lo, mut hi) = (0usize, 0usize);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let (a, b) = series.window(i);
        while hi <= b {
            acc.add(f(hi));
            hi += 1;
        }
        while lo < a {
            acc.add(-f(lo));
            lo += 1;
        }
        out.push(acc.value());
    }
    out
}

/// Precision-weighted mean of x over each window.
pub fn weighted_moving_average(series: &WeightedSeries) -> Vec<f64> {
    let num = window_sums(series, |j| series.w[j] * series.x[j]);
    let den = window_sums(series, |j| series.w[j]);
    num.iter().zip(&den).map(|(n, d)| n / d).collect()
}

/// Unweighted mean of the precisions over each window.
fn mean_weights(series: &WeightedSeries) -> Vec<f64> {
    let sums = window_sums(series, |j| series.w[j]);
    sums.iter()
        .enumerate()
        .map(|(i, s)| {
            let (a, b) = series.window(i);
            s / (b - a + 1) as f64
        })
        .collect()
}

/// sqrt of the mean of ((wᵢ/w̄ᵢ)(xᵢ − x̄ᵢ))².
pub fn lrse(series: &WeightedSeries) -> Result<f64> {
    series.require_two("LRSE")?;
    let xbar = weighted_moving_average(series);
    let wbar = mean_weights(series);
    let mut acc = RunningSum::default();
    for i in 0..series.len() {
        let dev = series.w[i] / wbar[i] * (series.x[i] - xbar[i]);
        acc.add(dev * dev);
    }
    Ok((acc.value() / series.len() as f64).sqrt())
}

/// Median over i of k·|x̄ᵢ₊₁ − x̄ᵢ|.
pub fn wmad(series: &WeightedSeries) -> Result<f64> {
    series.require_two("WMAD")?;
    let xbar = weighted_moving_average(series);
    let k = series.k as f64;
    let diffs: Vec<f64> = xbar.windows(2).map(|p| k * (p[1] - p[0]).abs()).collect();
    Ok(median(diffs))
}

/// Median with the mean of the two central values for even lengths.
pub fn median(mut values: Vec<f64>) -> f64 {
    assert!(!values.is_empty(), "median of an empty list");
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}
