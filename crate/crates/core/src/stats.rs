//! Small statistical utilities shared by samplers, pivots and tests.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SessionRng = ChaCha8Rng;

/// Deterministic RNG for an independent stream under a base seed.
pub fn stream_rng(seed: u64, stream: u64) -> SessionRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Kolmogorov–Smirnov distance between the empirical law of `xs` and Unif[0,1].
pub fn ks_uniform(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let x = x.clamp(0.0, 1.0);
            let lo = i as f64 / n;
            let hi = (i + 1) as f64 / n;
            (x - lo).abs().max((hi - x).abs())
        })
        .fold(0.0, f64::max)
}

/// Two-sample Kolmogorov–Smirnov distance.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Effective sample size of a scalar chain using Geyer's initial positive
/// sequence estimator of the integrated autocorrelation time.
pub fn effective_sample_size(chain: &[f64]) -> f64 {
    let n = chain.len();
    if n < 4 {
        return n as f64;
    }
    let m = mean(chain);
    let centered: Vec<f64> = chain.iter().map(|x| x - m).collect();
    let c0 = centered.iter().map(|x| x * x).sum::<f64>() / n as f64;
    if c0 == 0.0 {
        return n as f64;
    }
    let autocov = |lag: usize| -> f64 {
        centered[..n - lag]
            .iter()
            .zip(&centered[lag..])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / n as f64
    };
    let mut tau = -1.0;
    let mut lag = 0;
    while lag + 1 < n {
        let pair = (autocov(lag) + autocov(lag + 1)) / c0;
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        lag += 2;
    }
    let tau = tau.max(1.0);
    n as f64 / tau
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn ks_uniform_of_grid_is_small() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        assert!((ks_uniform(&xs) - 0.0005).abs() < 1e-12);
        assert!((ks_uniform(&[0.0; 10]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ks_two_sample_basic() {
        assert_eq!(ks_two_sample(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert_eq!(ks_two_sample(&[0.0, 0.1], &[5.0, 6.0]), 1.0);
        assert!((ks_two_sample(&[0.0, 1.0], &[0.5]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn ess_of_iid_and_ar1() {
        let mut rng = stream_rng(1, 0);
        let iid: Vec<f64> = (0..20_000).map(|_| rng.gen::<f64>()).collect();
        let e = effective_sample_size(&iid);
        assert!(e > 15_000.0, "{e}");
        let mut x = 0.0;
        let ar: Vec<f64> = (0..20_000)
            .map(|_| {
                x = 0.9 * x + rng.gen::<f64>() - 0.5;
                x
            })
            .collect();
        // AR(1) with ρ = 0.9 has τ = 19.
        let e = effective_sample_size(&ar);
        assert!((e / (20_000.0 / 19.0) - 1.0).abs() < 0.3, "{e}");
    }

    #[test]
    fn streams_are_independent_and_reproducible() {
        let a: u64 = stream_rng(7, 1).gen();
        let b: u64 = stream_rng(7, 1).gen();
        let c: u64 = stream_rng(7, 2).gen();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
