use statrs::distribution::{ContinuousCDF, Normal};

use super::TestResult;
use crate::{Error, Result};

/// One-sample Kolmogorov-Smirnov test against a normal distribution with
/// the sample's own mean and standard deviation.
///
/// The p-value is the plain asymptotic Kolmogorov tail at `sqrt(n) * D`,
/// without the Lilliefors correction for estimated parameters. That makes
/// the test conservative (p too large) for normal data.
pub fn ks_normality(samples: &[f64], alpha: f64) -> Result<TestResult> {
    let n = samples.len();
    if n < 5 {
        return Err(Error::InsufficientData(format!("KS normality needs at least 5 samples, got {n}")));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::Degenerate("sample contains non-finite values".into()));
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if !(var > 0.0) {
        return Err(Error::Degenerate("zero variance".into()));
    }
    let normal = Normal::new(mean, var.sqrt()).map_err(|e| Error::Degenerate(e.to_string()))?;
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let nf = n as f64;
    let d = sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal.cdf(x);
            let above = (i + 1) as f64 / nf - f;
            let below = f - i as f64 / nf;
            above.max(below)
        })
        .fold(0.0, f64::max);
    let p = kolmogorov_survival(nf.sqrt() * d);
    Ok(TestResult::new(d, p, n, alpha))
}

/// `P(K > lambda)` for the Kolmogorov distribution.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        // Jacobi-theta form converges fast for small lambda.
        let c = std::f64::consts::PI * std::f64::consts::PI / (8.0 * lambda * lambda);
        let mut cdf = 0.0;
        for k in 1..=20 {
            let m = (2 * k - 1) as f64;
            cdf += (-m * m * c).exp();
        }
        cdf *= (2.0 * std::f64::consts::PI).sqrt() / lambda;
        (1.0 - cdf).clamp(0.0, 1.0)
    } else {
        let mut sum = 0.0;
        for k in 1..=100 {
            let kf = k as f64;
            let term = (-2.0 * kf * kf * lambda * lambda).exp();
            sum += if k % 2 == 1 { term } else { -term };
            if term < 1e-300 {
                break;
            }
        }
        (2.0 * sum).clamp(0.0, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::RngStream;

    #[test]
    fn kolmogorov_reference_values() {
        // Standard tabulated critical points of the Kolmogorov distribution.
        assert!((kolmogorov_survival(1.3581) - 0.05).abs() < 1e-4);
        assert!((kolmogorov_survival(1.6276) - 0.01).abs() < 1e-4);
        assert!((kolmogorov_survival(1.2238) - 0.10).abs() < 1e-4);
        // Both series agree where they meet.
        let a = kolmogorov_survival(1.18 - 1e-12);
        let b = kolmogorov_survival(1.18);
        assert!((a - b).abs() < 1e-10);
        assert_eq!(kolmogorov_survival(0.0), 1.0);
        assert!(kolmogorov_survival(0.2) > 0.999_99);
    }

    #[test]
    fn normal_samples_pass() {
        let mut passes = 0;
        for rep in 0..100 {
            let mut rng = RngStream::new(1000 + rep, 0);
            let xs: Vec<f64> = (0..10_000).map(|_| rng.next_normal()).collect();
            if ks_normality(&xs, 0.05).unwrap().p_value > 0.05 {
                passes += 1;
            }
        }
        assert!(passes >= 95, "{passes}/100");
    }

    #[test]
    fn exponential_samples_fail() {
        let mut rng = RngStream::new(4, 0);
        let xs: Vec<f64> = (0..10_000).map(|_| -(1.0 - rng.next_uniform()).ln()).collect();
        let r = ks_normality(&xs, 0.05).unwrap();
        assert!(r.p_value < 0.001, "{r:?}");
        assert!(r.significant);
    }

    #[test]
    fn degenerate_and_small_inputs() {
        assert!(matches!(ks_normality(&[2.0; 10], 0.05), Err(Error::Degenerate(_))));
        assert!(matches!(ks_normality(&[1.0, 2.0, 3.0, 4.0], 0.05), Err(Error::InsufficientData(_))));
    }
}
