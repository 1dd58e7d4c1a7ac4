//! Small statistics toolkit: t-intervals, two-sample KS, Hill tail index,
//! binomial errors, lag correlations and a permutation exchangeability test.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::rng::KeyedStream;

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance; 0 for fewer than two points.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

pub fn std_error(xs: &[f64]) -> f64 {
    (variance(xs) / xs.len() as f64).sqrt()
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// A two-sided confidence interval for a mean.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Interval {
    pub estimate: f64,
    pub half_width: f64,
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn overlaps(&self, other: &Interval) -> bool {
        self.lo <= other.hi && other.lo <= self.hi
    }
}

/// Two-sided Student-t quantile `t_{1-(1-level)/2, dof}`.
pub fn t_quantile(level: f64, dof: usize) -> f64 {
    let dist = StudentsT::new(0.0, 1.0, dof.max(1) as f64).expect("valid t law");
    dist.inverse_cdf(0.5 + 0.5 * level)
}

/// Student-t interval for the mean of `xs` at confidence `level`.
pub fn t_interval(xs: &[f64], level: f64) -> Interval {
    let n = xs.len();
    let m = mean(xs);
    let hw = if n >= 2 { t_quantile(level, n - 1) * std_error(xs) } else { f64::INFINITY };
    Interval { estimate: m, half_width: hw, lo: m - hw, hi: m + hw, n }
}

/// Standard error of a binomial proportion `p` estimated from `n` trials.
pub fn binomial_se(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Sample autocorrelation at `lag`.
pub fn lag_correlation(xs: &[f64], lag: usize) -> f64 {
    let n = xs.len();
    if lag >= n {
        return 0.0;
    }
    let m = mean(xs);
    let den: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    if den == 0.0 {
        return 0.0;
    }
    let num: f64 = (0..n - lag).map(|i| (xs[i] - m) * (xs[i + lag] - m)).sum();
    num / den
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Two-sample Kolmogorov–Smirnov test with the asymptotic Kolmogorov
/// p-value (Stephens' small-sample correction). Conservative under ties.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsResult {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len(), b.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < na && j < nb {
        let x = a[i].min(b[j]);
        while i < na && a[i] <= x {
            i += 1;
        }
        while j < nb && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na as f64 - j as f64 / nb as f64).abs());
    }
    let ne = (na * nb) as f64 / (na + nb) as f64;
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    KsResult { statistic: d, p_value: kolmogorov_q(lambda) }
}

/// `Q(λ) = 2 Σ_{k≥1} (-1)^{k-1} e^{-2k²λ²}`.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=200 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-16 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Hill estimate of the tail index from the top `k` order statistics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HillEstimate {
    pub alpha: f64,
    pub std_error: f64,
    pub k: usize,
}

/// Hill estimator over the top `fraction` of the positive samples.
/// Returns `None` when fewer than 10 order statistics are usable.
pub fn hill(xs: &[f64], fraction: f64) -> Option<HillEstimate> {
    let mut v: Vec<f64> = xs.iter().copied().filter(|x| *x > 0.0 && x.is_finite()).collect();
    v.sort_by(|a, b| b.total_cmp(a));
    let k = ((v.len() as f64 * fraction).floor() as usize).min(v.len().saturating_sub(1));
    if k < 10 {
        return None;
    }
    let threshold = v[k].ln();
    let s: f64 = v[..k].iter().map(|x| x.ln() - threshold).sum();
    if s <= 0.0 {
        return None;
    }
    let alpha = k as f64 / s;
    Some(HillEstimate { alpha, std_error: alpha / (k as f64).sqrt(), k })
}

/// Permutation test of exchangeability using the absolute lag-1
/// autocorrelation as statistic. Returns the p-value.
pub fn permutation_test(xs: &[f64], permutations: usize, seed: u64) -> f64 {
    use rand::seq::SliceRandom;
    if xs.len() < 4 {
        return 1.0;
    }
    let observed = lag_correlation(xs, 1).abs();
    let mut rng = KeyedStream::new(seed);
    let mut v = xs.to_vec();
    let mut at_least = 0usize;
    for _ in 0..permutations {
        v.shuffle(&mut rng);
        if lag_correlation(&v, 1).abs() >= observed {
            at_least += 1;
        }
    }
    (at_least + 1) as f64 / (permutations + 1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::unit_open;

    fn uniforms(seed: u64, n: usize) -> Vec<f64> {
        (0..n as u64).map(|i| unit_open(crate::rng::hash2(seed, i))).collect()
    }

    #[test]
    fn t_interval_matches_tabulated_quantiles() {
        assert!((t_quantile(0.95, 10) - 2.228_138_85).abs() < 1e-6);
        assert!((t_quantile(0.99, 30) - 2.749_995_65).abs() < 1e-6);
        let ci = t_interval(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.95);
        // sd = sqrt(2.5), se = sqrt(0.5), t_{0.975,4} = 2.776445
        assert!((ci.half_width - 2.776_445_1 * 0.5f64.sqrt()).abs() < 1e-6);
        assert!(ci.contains(3.0));
    }

    #[test]
    fn median_and_variance() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!((variance(&[1.0, 2.0, 3.0, 4.0]) - 5.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn kolmogorov_tail_values() {
        // Q(1.36) ≈ 0.0505, Q(1.63) ≈ 0.0100
        assert!((kolmogorov_q(1.36) - 0.0495).abs() < 2e-3);
        assert!((kolmogorov_q(1.628) - 0.0100).abs() < 5e-4);
    }

    #[test]
    fn ks_accepts_same_law_and_rejects_shift() {
        let a = uniforms(1, 4000);
        let b = uniforms(2, 4000);
        assert!(ks_two_sample(&a, &b).p_value > 0.01);
        let c: Vec<f64> = b.iter().map(|x| x + 0.1).collect();
        assert!(ks_two_sample(&a, &c).p_value < 1e-6);
        let same = ks_two_sample(&a, &a);
        assert_eq!(same.statistic, 0.0);
    }

    #[test]
    fn ks_handles_ties_in_discrete_samples() {
        let a: Vec<f64> = uniforms(3, 5000).iter().map(|u| (u * 4.0).floor()).collect();
        let b: Vec<f64> = uniforms(4, 5000).iter().map(|u| (u * 4.0).floor()).collect();
        let r = ks_two_sample(&a, &b);
        assert!(r.statistic < 0.03 && r.p_value > 0.01, "{r:?}");
    }

    #[test]
    fn hill_recovers_pareto_index() {
        // Pareto(α = 1.5): X = U^{-1/α}
        let xs: Vec<f64> = uniforms(5, 100_000).iter().map(|u| u.powf(-1.0 / 1.5)).collect();
        let h = hill(&xs, 0.05).unwrap();
        assert!((h.alpha - 1.5).abs() < 4.0 * h.std_error, "{h:?}");
        assert!(hill(&xs[..50], 0.05).is_none());
    }

    #[test]
    fn permutation_test_flags_trends() {
        let iid = uniforms(6, 300);
        assert!(permutation_test(&iid, 999, 1) > 0.05);
        let trend: Vec<f64> = (0..300).map(|i| i as f64 + 10.0 * iid[i]).collect();
        assert!(permutation_test(&trend, 999, 1) < 0.01);
    }
}
