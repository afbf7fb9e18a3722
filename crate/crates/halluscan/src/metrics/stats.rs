//! Statistical machinery: bootstrap intervals, effect sizes, paired tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::MetricsError;

/// A percentile bootstrap confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub low: f64,
    pub high: f64,
    /// Resamples whose statistic was defined.
    pub used: usize,
    /// Resamples whose statistic was UNDEFINED and skipped.
    pub undefined_resamples: usize,
}

impl BootstrapCi {
    /// True when the interval excludes zero, the significance convention
    /// used throughout the reports.
    #[must_use]
    pub fn excludes_zero(&self) -> bool {
        self.low > 0.0 || self.high < 0.0
    }

    /// Renders as `[low, high]` with three decimals, the report format.
    #[must_use]
    pub fn display(&self) -> String {
        format!("[{:.3}, {:.3}]", self.low, self.high)
    }
}

/// Percentile bootstrap of an arbitrary statistic.
///
/// The resampling scheme is pinned so independent implementations can
/// reproduce it bit for bit: a `ChaCha20Rng` seeded with `seed` draws, for
/// each of `resamples` rounds, exactly `data.len()` indices in order via
/// `gen_range(0..n)`; the statistic runs on each resample; UNDEFINED
/// statistics are skipped and tallied; defined values are sorted ascending
/// and the interval is the linearly interpolated 2.5th and 97.5th
/// percentiles (position `q * (m - 1)`).
///
/// Returns `None` when `data` is empty or no resample produced a defined
/// statistic.
pub fn bootstrap_ci<T: Clone, F: Fn(&[T]) -> Option<f64>>(
    data: &[T],
    statistic: F,
    resamples: usize,
    seed: u64,
) -> Option<BootstrapCi> {
    if data.is_empty() || resamples == 0 {
        return None;
    }
    let n = data.len();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(resamples);
    let mut undefined_resamples = 0usize;
    let mut resample = Vec::with_capacity(n);
    for _ in 0..resamples {
        resample.clear();
        for _ in 0..n {
            resample.push(data[rng.gen_range(0..n)].clone());
        }
        match statistic(&resample) {
            Some(v) => values.push(v),
            None => undefined_resamples += 1,
        }
    }
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.partial_cmp(b).expect("statistics are finite"));
    Some(BootstrapCi {
        low: percentile(&values, 0.025),
        high: percentile(&values, 0.975),
        used: values.len(),
        undefined_resamples,
    })
}

/// Linear-interpolation percentile of an ascending slice.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let position = q * (sorted.len() - 1) as f64;
    let lower = position.floor() as usize;
    let upper = position.ceil() as usize;
    if lower == upper {
        sorted[lower]
    } else {
        let fraction = position - lower as f64;
        sorted[lower] * (1.0 - fraction) + sorted[upper] * fraction
    }
}

/// Cohen's d with the pooled unbiased standard deviation.
///
/// `None` when either sample has fewer than two values or the pooled
/// variance is zero.
#[must_use]
pub fn cohens_d(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() < 2 || b.len() < 2 {
        return None;
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let ssq = |v: &[f64], m: f64| v.iter().map(|x| (x - m) * (x - m)).sum::<f64>();
    let (ma, mb) = (mean(a), mean(b));
    let pooled_variance =
        (ssq(a, ma) + ssq(b, mb)) / (a.len() + b.len() - 2) as f64;
    if pooled_variance <= 0.0 {
        return None;
    }
    Some((ma - mb) / pooled_variance.sqrt())
}

/// Outcome of the paired Wilcoxon signed-rank test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonOutcome {
    /// W+: the sum of ranks carried by positive differences.
    pub statistic: f64,
    /// Pairs remaining after zero differences are removed.
    pub n: usize,
    /// Two-sided p-value.
    pub p_value: f64,
    /// Whether the exact sign-enumeration distribution was used.
    pub exact: bool,
}

/// Paired two-sided Wilcoxon signed-rank test.
///
/// Zero differences are dropped; at least five informative pairs must
/// remain. Absolute differences are midranked (ties share the average
/// rank). Up to 25 informative pairs the distribution of W+ under sign
/// flips is enumerated exactly and the two-sided p-value is
/// `min(1, 2 * min(P(W <= w), P(W >= w)))`; beyond 25 the normal
/// approximation with the tie-corrected variance
/// `n(n+1)(2n+1)/24 - sum(t^3 - t)/48` is used (no continuity correction).
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonOutcome, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::LengthMismatch { left: a.len(), right: b.len() });
    }
    let differences: Vec<f64> =
        a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    let n = differences.len();
    if n < 5 {
        return Err(MetricsError::TooFewPairs { got: n, need: 5 });
    }

    // Midranks of |d|.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        differences[i].abs().partial_cmp(&differences[j].abs()).expect("finite differences")
    });
    let mut ranks = vec![0.0f64; n];
    let mut tie_correction = 0.0f64;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n
            && differences[order[j + 1]].abs() == differences[order[i]].abs()
        {
            j += 1;
        }
        let midrank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = midrank;
        }
        let t = (j - i + 1) as f64;
        tie_correction += t * t * t - t;
        i = j + 1;
    }
    let w_plus: f64 = differences
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| *r)
        .sum();

    let (p_value, exact) = if n <= 25 {
        (exact_sign_flip_p(&ranks, w_plus), true)
    } else {
        let mu = n as f64 * (n as f64 + 1.0) / 4.0;
        let sigma2 =
            n as f64 * (n as f64 + 1.0) * (2.0 * n as f64 + 1.0) / 24.0 - tie_correction / 48.0;
        if sigma2 <= 0.0 {
            (1.0, false)
        } else {
            let z = (w_plus - mu) / sigma2.sqrt();
            (normal_two_sided_p(z), false)
        }
    };
    Ok(WilcoxonOutcome { statistic: w_plus, n, p_value, exact })
}

/// Exact two-sided p under uniform sign flips, via a subset-sum count over
/// doubled ranks (midranks are multiples of 0.5, so doubling gives integers).
fn exact_sign_flip_p(ranks: &[f64], w_plus: f64) -> f64 {
    let doubled: Vec<usize> = ranks
        .iter()
        .map(|r| {
            let d = (r * 2.0).round();
            debug_assert!((d - r * 2.0).abs() < 1e-9, "midranks are half-integers");
            d as usize
        })
        .collect();
    let max_sum: usize = doubled.iter().sum();
    let mut counts = vec![0u64; max_sum + 1];
    counts[0] = 1;
    for &r in &doubled {
        for s in (r..=max_sum).rev() {
            counts[s] += counts[s - r];
        }
    }
    let total = 2f64.powi(ranks.len() as i32);
    let w2 = (w_plus * 2.0).round() as usize;
    let at_most: u64 = counts[..=w2.min(max_sum)].iter().sum();
    let at_least: u64 = counts[w2.min(max_sum)..].iter().sum();
    let tail = (at_most as f64).min(at_least as f64) / total;
    (2.0 * tail).min(1.0)
}

/// Two-sided standard-normal p-value for a z statistic.
fn normal_two_sided_p(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2).clamp(0.0, 1.0)
}

/// Complementary error function, Abramowitz & Stegun 7.1.26 rational
/// approximation (absolute error below 1.5e-7, ample for reported p-values).
fn erfc(x: f64) -> f64 {
    let t = 1.0 / (1.0 + 0.3275911 * x.abs());
    let poly = t
        * (0.254829592
            + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    let value = poly * (-x * x).exp();
    if x >= 0.0 {
        value
    } else {
        2.0 - value
    }
}

/// Pearson correlation; `None` for fewer than two pairs or zero variance.
pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<Option<f64>, MetricsError> {
    if x.len() != y.len() {
        return Err(MetricsError::LengthMismatch { left: x.len(), right: y.len() });
    }
    let n = x.len();
    if n < 2 {
        return Ok(None);
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Ok(None);
    }
    Ok(Some(sxy / (sxx * syy).sqrt()))
}
