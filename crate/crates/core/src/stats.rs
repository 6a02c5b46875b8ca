//! Reductions and tests used by the estimators and the verification suite.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

/// Sum in a fixed binary tree over the slice order; independent of threading.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const LEAF: usize = 16;
    if xs.len() <= LEAF {
        xs.iter().sum()
    } else {
        let (a, b) = xs.split_at(xs.len() / 2);
        pairwise_sum(a) + pairwise_sum(b)
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        pairwise_sum(xs) / xs.len() as f64
    }
}

/// Unbiased sample variance.
pub fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    let dev: Vec<f64> = xs.iter().map(|x| (x - m) * (x - m)).collect();
    pairwise_sum(&dev) / (n - 1) as f64
}

/// `(mean, sd / √n)`.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let m = mean(xs);
    let v = sample_variance(xs);
    (m, (v.max(0.0) / xs.len() as f64).sqrt())
}

/// Sample variance of zero-mean draws and its standard error
/// `√((m4 - s⁴)/n)`.
pub fn variance_with_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = mean(xs);
    let d2: Vec<f64> = xs.iter().map(|x| (x - m).powi(2)).collect();
    let d4: Vec<f64> = d2.iter().map(|x| x * x).collect();
    let s2 = pairwise_sum(&d2) / (n - 1.0);
    let m4 = pairwise_sum(&d4) / n;
    (s2, ((m4 - s2 * s2).max(0.0) / n).sqrt())
}

pub fn normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

/// One-sample Kolmogorov–Smirnov test against `N(0, 1)`.
pub fn ks_test_standard_normal(samples: &[f64]) -> KsResult {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    let nf = n as f64;
    let d = xs.iter().enumerate().fold(0.0f64, |d, (i, &x)| {
        let f = normal_cdf(x);
        d.max(f - i as f64 / nf).max((i + 1) as f64 / nf - f)
    });
    let sn = nf.sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    KsResult { statistic: d, p_value: kolmogorov_q(lambda), n }
}

/// `Q(λ) = 2 Σ_{j≥1} (-1)^{j-1} e^{-2 j² λ²}`.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=200 {
        let term = (-2.0 * (j * j) as f64 * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-16 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal, Uniform};

    #[test]
    fn pairwise_sum_matches_exact_integers() {
        let xs: Vec<f64> = (1..=1000).map(f64::from).collect();
        assert_eq!(pairwise_sum(&xs), 500_500.0);
        assert_eq!(pairwise_sum(&[]), 0.0);
    }

    #[test]
    fn mean_and_stderr() {
        let (m, se) = mean_stderr(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert_relative_eq!(se, (5.0f64 / 3.0 / 4.0).sqrt(), max_relative = 1e-15);
        assert_eq!(mean_stderr(&[2.0; 10]).1, 0.0);
    }

    #[test]
    fn kolmogorov_tail_reference_values() {
        // Classical critical values: Q(1.3581) = 0.05, Q(1.9495) = 0.001.
        assert!((kolmogorov_q(1.3581) - 0.05).abs() < 1e-4);
        assert!((kolmogorov_q(1.9495) - 0.001).abs() < 1e-5);
    }

    #[test]
    fn ks_accepts_normals_and_rejects_uniforms() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let z: Vec<f64> = (0..20_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        assert!(ks_test_standard_normal(&z).p_value > 1e-3);
        let u = Uniform::new(-2.0, 2.0).unwrap();
        let w: Vec<f64> = (0..20_000).map(|_| u.sample(&mut rng)).collect();
        assert!(ks_test_standard_normal(&w).p_value < 1e-6);
        let scaled: Vec<f64> = z.iter().map(|x| 1.1 * x).collect();
        assert!(ks_test_standard_normal(&scaled).p_value < 1e-3);
    }

    #[test]
    fn variance_stderr_of_normals() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let z: Vec<f64> = (0..100_000).map(|_| 2.0 * Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect();
        let (v, se) = variance_with_stderr(&z);
        // Var of s² for normals: 2σ⁴/n.
        assert_relative_eq!(se, (2.0 * 16.0 / 1e5f64).sqrt(), max_relative = 0.05);
        assert!((v - 4.0).abs() < 4.0 * se);
    }
}
