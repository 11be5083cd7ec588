//! Small statistics toolbox: compensated sums, batch means, KS tests, jackknife.

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    compensation: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl FromIterator<f64> for KahanSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = KahanSum::new();
        for x in iter {
            s.add(x);
        }
        s
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64
}

/// Standard error of the mean assuming independent samples.
pub fn standard_error(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    (variance(xs) / xs.len() as f64).sqrt()
}

/// Mean and batch-means standard error for a correlated series.
///
/// The series is cut into `batches` contiguous blocks (at least 2); the SE is
/// that of the block means.
pub fn batch_means(xs: &[f64], batches: usize) -> (f64, f64) {
    let n = xs.len();
    let m = mean(xs);
    let b = batches.max(2).min(n);
    if b < 2 {
        return (m, 0.0);
    }
    let size = n / b;
    let block_means: Vec<f64> = (0..b).map(|k| mean(&xs[k * size..(k + 1) * size])).collect();
    (m, standard_error(&block_means))
}

/// One-sample Kolmogorov–Smirnov distance between `sample` and `cdf`.
pub fn ks_statistic<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> f64 {
    let mut sorted = sample.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            let lo = f - i as f64 / n;
            let hi = (i + 1) as f64 / n - f;
            lo.max(hi)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic p-value of a KS distance `d` for sample size `n`, with the
/// Stephens small-sample correction.
pub fn ks_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let t = (sn + 0.12 + 0.11 / sn) * d;
    if t < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * t * t).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// `log(mean(exp(xs)))`, computed stably.
pub fn log_mean_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = xs.iter().map(|x| (x - m).exp()).sum();
    m + (s / xs.len() as f64).ln()
}

/// Effective number of samples carrying the weights `exp(xs)` (Kish).
pub fn effective_sample_size(log_weights: &[f64]) -> f64 {
    let m = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_weights.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = w.iter().sum();
    let s2: f64 = w.iter().map(|x| x * x).sum();
    s * s / s2
}

/// Leave-one-block-out jackknife SE of `estimator` over `blocks` blocks.
pub fn jackknife<F: Fn(&[f64]) -> f64>(xs: &[f64], blocks: usize, estimator: F) -> f64 {
    let n = xs.len();
    let b = blocks.min(n);
    if b < 2 {
        return 0.0;
    }
    let size = n / b;
    let used = size * b;
    let partials: Vec<f64> = (0..b)
        .map(|k| {
            let mut rest = Vec::with_capacity(used - size);
            rest.extend_from_slice(&xs[..k * size]);
            rest.extend_from_slice(&xs[(k + 1) * size..used]);
            estimator(&rest)
        })
        .collect();
    let m = mean(&partials);
    let bf = b as f64;
    ((bf - 1.0) / bf * partials.iter().map(|p| (p - m) * (p - m)).sum::<f64>()).sqrt()
}

/// Normalized autocorrelation at lag 1..=max_lag and the integrated
/// autocorrelation time (initial positive sequence cut-off).
pub fn integrated_autocorrelation_time(xs: &[f64], max_lag: usize) -> f64 {
    let n = xs.len();
    if n < 4 {
        return 1.0;
    }
    let m = mean(xs);
    let c0: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n as f64;
    if c0 == 0.0 {
        return 1.0;
    }
    let mut tau = 1.0;
    for lag in 1..max_lag.min(n - 1) {
        let c: f64 = (0..n - lag).map(|i| (xs[i] - m) * (xs[i + lag] - m)).sum::<f64>() / n as f64;
        let rho = c / c0;
        if rho <= 0.0 {
            break;
        }
        tau += 2.0 * rho;
    }
    tau
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kahan_beats_naive() {
        let mut k = KahanSum::new();
        k.add(1.0);
        for _ in 0..10_000 {
            k.add(1e-16);
        }
        assert!((k.value() - (1.0 + 1e-12)).abs() < 1e-15);
    }

    #[test]
    fn ks_of_perfect_grid_is_small() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        let d = ks_statistic(&xs, |x| x.clamp(0.0, 1.0));
        assert!((d - 0.0005).abs() < 1e-12);
        assert!(ks_p_value(d, 1000) > 0.99);
    }

    #[test]
    fn ks_p_value_known_point() {
        // Critical value for alpha = 0.05 is about 1.358 / sqrt(n).
        let p = ks_p_value(1.358 / (10_000f64).sqrt(), 10_000);
        assert!((p - 0.05).abs() < 0.003, "{p}");
    }

    #[test]
    fn log_mean_exp_constant() {
        assert!((log_mean_exp(&[2.0, 2.0, 2.0]) - 2.0).abs() < 1e-15);
        assert!((log_mean_exp(&[0.0, 1000.0]) - (1000.0 - 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn jackknife_of_mean_matches_se() {
        let xs: Vec<f64> = (0..100).map(|i| ((i * 37) % 17) as f64).collect();
        let jk = jackknife(&xs, 100, mean);
        assert!((jk - standard_error(&xs)).abs() < 1e-12);
    }

    #[test]
    fn batch_means_iid() {
        let xs: Vec<f64> = (0..1000).map(|i| (i % 2) as f64).collect();
        let (m, se) = batch_means(&xs, 20);
        assert!((m - 0.5).abs() < 1e-15);
        assert!(se < 1e-12);
    }
}
