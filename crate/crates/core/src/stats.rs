//! Goodness-of-fit tests and interval estimates used by the verification
//! suites. All p-values are asymptotic.

use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};
use thiserror::Error;

/// Minimum expected count per cell before pooling kicks in.
pub const MIN_EXPECTED: f64 = 5.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("fewer than two usable cells after pooling")]
    DegenerateCells,
    #[error("expected probabilities sum to {0}")]
    NotNormalized(f64),
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("confidence level must lie in (0, 1), got {0}")]
    BadLevel(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Pearson χ² goodness of fit. Cells whose expected count is below
/// [`MIN_EXPECTED`] are pooled into one cell, which is merged further with
/// the smallest remaining cell if it is still too small.
pub fn chi_square_gof(observed: &[u64], expected_probs: &[f64]) -> Result<TestResult, StatsError> {
    if observed.len() != expected_probs.len() {
        return Err(StatsError::LengthMismatch(observed.len(), expected_probs.len()));
    }
    let sum_p: f64 = expected_probs.iter().sum();
    if (sum_p - 1.0).abs() > 1e-9 {
        return Err(StatsError::NotNormalized(sum_p));
    }
    let total: u64 = observed.iter().sum();
    let total = total as f64;
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let mut pooled = (0.0, 0.0);
    for (&o, &p) in observed.iter().zip(expected_probs) {
        let e = p * total;
        if e < MIN_EXPECTED {
            pooled.0 += o as f64;
            pooled.1 += e;
        } else {
            cells.push((o as f64, e));
        }
    }
    if pooled.1 > 0.0 || pooled.0 > 0.0 {
        if pooled.1 >= MIN_EXPECTED || cells.is_empty() {
            cells.push(pooled);
        } else {
            let (idx, _) = cells
                .iter()
                .enumerate()
                .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
                .expect("nonempty");
            cells[idx].0 += pooled.0;
            cells[idx].1 += pooled.1;
        }
    }
    if cells.len() < 2 {
        return Err(StatsError::DegenerateCells);
    }
    let mut statistic = 0.0;
    for &(o, e) in &cells {
        if e == 0.0 {
            if o > 0.0 {
                return Ok(TestResult { statistic: f64::INFINITY, p_value: 0.0 });
            }
            continue;
        }
        statistic += (o - e) * (o - e) / e;
    }
    let df = (cells.len() - 1) as f64;
    Ok(TestResult { statistic, p_value: chi_square_sf(statistic, df) })
}

/// χ² test that two count vectors come from the same categorical law.
/// Columns with fewer than [`MIN_EXPECTED`] combined expected counts in
/// either row are pooled.
pub fn chi_square_homogeneity(a: &[u64], b: &[u64]) -> Result<TestResult, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch(a.len(), b.len()));
    }
    let na: u64 = a.iter().sum();
    let nb: u64 = b.iter().sum();
    let n = (na + nb) as f64;
    if na == 0 || nb == 0 {
        return Err(StatsError::DegenerateCells);
    }
    let (fa, fb) = (na as f64 / n, nb as f64 / n);
    let mut cols: Vec<(f64, f64)> = Vec::new();
    let mut pooled = (0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let col = (x + y) as f64;
        if col * fa.min(fb) < MIN_EXPECTED {
            pooled.0 += x as f64;
            pooled.1 += y as f64;
        } else {
            cols.push((x as f64, y as f64));
        }
    }
    if pooled.0 + pooled.1 > 0.0 {
        cols.push(pooled);
    }
    if cols.len() < 2 {
        return Err(StatsError::DegenerateCells);
    }
    let mut statistic = 0.0;
    for &(x, y) in &cols {
        let col = x + y;
        let (ea, eb) = (col * fa, col * fb);
        statistic += (x - ea) * (x - ea) / ea + (y - eb) * (y - eb) / eb;
    }
    let df = (cols.len() - 1) as f64;
    Ok(TestResult { statistic, p_value: chi_square_sf(statistic, df) })
}

fn chi_square_sf(statistic: f64, df: f64) -> f64 {
    let dist = ChiSquared::new(df).expect("df >= 1");
    dist.sf(statistic).clamp(0.0, 1.0)
}

/// Smallest sample accepted by the Kolmogorov–Smirnov tests.
pub const KS_MIN_SAMPLES: usize = 20;

/// One-sample Kolmogorov–Smirnov test against a continuous CDF.
pub fn ks_one_sample<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> Result<TestResult, StatsError> {
    if sample.len() < KS_MIN_SAMPLES {
        return Err(StatsError::TooFewSamples { need: KS_MIN_SAMPLES, got: sample.len() });
    }
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    Ok(TestResult { statistic: d, p_value: kolmogorov_sf(d, n) })
}

/// Two-sample Kolmogorov–Smirnov test.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<TestResult, StatsError> {
    for s in [a, b] {
        if s.len() < KS_MIN_SAMPLES {
            return Err(StatsError::TooFewSamples { need: KS_MIN_SAMPLES, got: s.len() });
        }
    }
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let (na, nb) = (xs.len() as f64, ys.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < xs.len() && j < ys.len() {
        let x = xs[i].min(ys[j]);
        while i < xs.len() && xs[i] <= x {
            i += 1;
        }
        while j < ys.len() && ys[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(TestResult { statistic: d, p_value: kolmogorov_sf(d, na * nb / (na + nb)) })
}

/// Asymptotic Kolmogorov tail probability with Stephens' small-sample
/// correction.
fn kolmogorov_sf(d: f64, n_eff: f64) -> f64 {
    let sq = n_eff.sqrt();
    let lambda = (sq + 0.12 + 0.11 / sq) * d;
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=100 {
        let jf = j as f64;
        let term = (-2.0 * jf * jf * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-17 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Normal-approximation interval: returns `(mean, half_width)`.
pub fn mean_ci(sample: &[f64], level: f64) -> Result<(f64, f64), StatsError> {
    if sample.len() < 2 {
        return Err(StatsError::TooFewSamples { need: 2, got: sample.len() });
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(StatsError::BadLevel(level));
    }
    let n = sample.len() as f64;
    let mean = sample.iter().sum::<f64>() / n;
    let var = sample.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    let z = Normal::standard().inverse_cdf(0.5 + level / 2.0);
    Ok((mean, z * (var / n).sqrt()))
}

/// Median of a nonempty sample (mean of the two middle values when even).
pub fn median(sample: &[f64]) -> f64 {
    assert!(!sample.is_empty(), "median of empty sample");
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, Exp};

    fn exp_sample(rate: f64, n: usize, s: u64) -> Vec<f64> {
        let mut rng = seed::rng(s);
        let d = Exp::new(rate).unwrap();
        (0..n).map(|_| d.sample(&mut rng)).collect()
    }

    #[test]
    fn chi_square_examples() {
        let r = chi_square_gof(&[10, 20, 30, 40], &[0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);

        let mut rng = seed::rng(5);
        let mut counts = [0u64; 6];
        for _ in 0..60_000 {
            counts[rng.random_range(0..6)] += 1;
        }
        assert!(chi_square_gof(&counts, &[1.0 / 6.0; 6]).unwrap().p_value > 1e-3);

        let r = chi_square_gof(&[1000, 0, 0, 0], &[0.25; 4]).unwrap();
        assert!(r.p_value < 1e-10);

        assert!(matches!(chi_square_gof(&[1, 2], &[1.0]), Err(StatsError::LengthMismatch(2, 1))));
        assert!(matches!(chi_square_gof(&[3, 1], &[0.5, 0.5]), Err(StatsError::DegenerateCells)));
    }

    #[test]
    fn ks_examples() {
        let x = exp_sample(1.0, 10_000, 1);
        let mut sorted = x.clone();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len() as f64;
        let self_ecdf = |t: f64| sorted.partition_point(|&v| v <= t) as f64 / n;
        // the statistic against the sample's own ECDF is at most one step
        assert!(ks_one_sample(&x, self_ecdf).unwrap().statistic <= 1.0 / n + 1e-15);
        assert_eq!(ks_two_sample(&x, &x).unwrap().statistic, 0.0);

        assert!(ks_one_sample(&x, |t| 1.0 - (-t).exp()).unwrap().p_value > 1e-3);
        let y = exp_sample(2.0, 10_000, 2);
        assert!(ks_two_sample(&x, &y).unwrap().p_value < 1e-6);
        assert!(matches!(ks_one_sample(&x[..5], |t| t), Err(StatsError::TooFewSamples { .. })));
    }

    #[test]
    fn mean_ci_examples() {
        let (m, h) = mean_ci(&[2.0; 10], 0.95).unwrap();
        assert_eq!((m, h), (2.0, 0.0));
        let x = exp_sample(1.0, 1000, 3);
        assert!(mean_ci(&x, 0.99).unwrap().1 > mean_ci(&x, 0.95).unwrap().1);
        assert!(matches!(mean_ci(&x, 1.0), Err(StatsError::BadLevel(_))));

        let covered = (0..200)
            .filter(|&r| {
                let (m, h) = mean_ci(&exp_sample(1.0, 10_000, 100 + r), 0.95).unwrap();
                (m - 1.0).abs() <= h
            })
            .count();
        assert!(covered >= 180, "coverage {covered}/200");
    }

    #[test]
    fn homogeneity_detects_shift() {
        assert!(chi_square_homogeneity(&[100, 200, 300], &[110, 190, 300]).unwrap().p_value > 0.1);
        assert!(chi_square_homogeneity(&[300, 200, 100], &[100, 200, 300]).unwrap().p_value < 1e-10);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    proptest! {
        #[test]
        fn chi_square_permutation_invariant(counts in proptest::collection::vec(0u64..200, 6), rot in 0usize..6) {
            prop_assume!(counts.iter().sum::<u64>() > 0);
            let probs = [0.05, 0.1, 0.15, 0.2, 0.22, 0.28];
            let mut c2 = counts.clone();
            let mut p2 = probs.to_vec();
            c2.rotate_left(rot);
            p2.rotate_left(rot);
            let a = chi_square_gof(&counts, &probs);
            let b = chi_square_gof(&c2, &p2);
            match (a, b) {
                (Ok(a), Ok(b)) => {
                    prop_assert!((a.statistic - b.statistic).abs() <= 1e-9 * (1.0 + a.statistic));
                    prop_assert!((0.0..=1.0).contains(&a.p_value));
                }
                (Err(a), Err(b)) => prop_assert_eq!(a, b),
                _ => prop_assert!(false, "pooling depends on order"),
            }
        }
    }
}
