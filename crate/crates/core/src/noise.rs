//! Binomial measurement noise of observed CTR on the log-calibrated scale.
//!
//! An observed CTR from `r` impressions of a pair whose true click
//! probability is `p` has, by the delta method, a log-scale standard
//! deviation of `sqrt((1 − p) / (p·r))`. The probability is recovered from
//! the predicted log-calibrated CTR `μ` as `baseline · exp(μ)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Range the implied probability is clamped to before the delta formula.
pub const PROB_CLAMP: (f64, f64) = (1e-6, 1.0 - 1e-6);

/// Aggregated impressions and clicks of one (target, context) pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImpressionRecord {
    pub r: u64,
    pub clicks: u64,
}

impl ImpressionRecord {
    pub fn new(r: u64, clicks: u64) -> Result<Self> {
        if r == 0 {
            return Err(Error::data("impression count r must be >= 1"));
        }
        if clicks > r {
            return Err(Error::data(format!(
                "clicks {clicks} exceed impressions {r}"
            )));
        }
        Ok(Self { r, clicks })
    }
}

fn check_baseline(baseline: f64) -> Result<()> {
    if !(baseline > 0.0 && baseline < 1.0) {
        return Err(Error::config(format!(
            "calibration baseline {baseline} must lie in (0, 1)"
        )));
    }
    Ok(())
}

/// Standard deviation of the measurement noise for a pair with predicted
/// log-calibrated CTR `mu` shown `r` times.
pub fn sigma_eps(mu: f64, r: u64, calibration_baseline: f64) -> Result<f64> {
    if r == 0 {
        return Err(Error::data("impression count r must be >= 1"));
    }
    if !mu.is_finite() {
        return Err(Error::data(format!("non-finite log-calibrated CTR {mu}")));
    }
    check_baseline(calibration_baseline)?;
    let p = (calibration_baseline * mu.exp()).clamp(PROB_CLAMP.0, PROB_CLAMP.1);
    Ok(((1.0 - p) / (p * r as f64)).sqrt())
}

/// Jeffreys-smoothed empirical log-calibrated CTR:
/// `ln(((clicks + 0.5) / (r + 1)) / baseline)`.
pub fn empirical_log_ctr(rec: ImpressionRecord, calibration_baseline: f64) -> Result<f64> {
    check_baseline(calibration_baseline)?;
    let ctr = (rec.clicks as f64 + 0.5) / (rec.r as f64 + 1.0);
    Ok((ctr / calibration_baseline).ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Binomial, Distribution};

    #[test]
    fn delta_method_values() {
        let b = 0.01;
        // mu = 0 gives p = baseline.
        let s = sigma_eps(0.0, 1000, b).unwrap();
        assert!((s - (0.99f64 / 10.0).sqrt()).abs() < 1e-12);
        assert!((s - 0.31464).abs() < 1e-5);
        let s4 = sigma_eps(0.0, 4000, b).unwrap();
        assert!((s4 - s / 2.0).abs() < 1e-15);
        assert!((sigma_eps(0.0, 1, 0.5).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sigma_eps_errors() {
        assert!(matches!(sigma_eps(0.0, 0, 0.1), Err(Error::Data(_))));
        assert!(matches!(sigma_eps(f64::NAN, 10, 0.1), Err(Error::Data(_))));
        assert!(matches!(sigma_eps(0.0, 10, 1.5), Err(Error::Config(_))));
        // Extreme predictions are clamped rather than blowing up.
        assert!(sigma_eps(-1000.0, 10, 0.1).unwrap().is_finite());
        assert!(sigma_eps(1000.0, 10, 0.1).unwrap() > 0.0);
    }

    #[test]
    fn sigma_eps_monotone() {
        let b = 0.01;
        let mut prev = f64::INFINITY;
        for r in [1, 10, 100, 1000, 10_000] {
            let s = sigma_eps(0.3, r, b).unwrap();
            assert!(s < prev);
            prev = s;
        }
        let mut prev = f64::INFINITY;
        for mu in [-3.0, -1.0, 0.0, 1.0, 3.0] {
            let s = sigma_eps(mu, 500, b).unwrap();
            assert!(s < prev);
            prev = s;
        }
    }

    #[test]
    fn empirical_label_values() {
        let zero = empirical_log_ctr(ImpressionRecord::new(999, 0).unwrap(), 0.0005).unwrap();
        assert!(zero.abs() < 1e-12);
        let y = empirical_log_ctr(ImpressionRecord::new(1000, 20).unwrap(), 0.01).unwrap();
        let oracle = ((20.5f64 / 1001.0) / 0.01).ln();
        assert!((y - oracle).abs() < 1e-12);
        assert!((y - 0.7169).abs() < 1e-4);
        // Both extremes stay finite.
        assert!(empirical_log_ctr(ImpressionRecord::new(5, 5).unwrap(), 0.2)
            .unwrap()
            .is_finite());
    }

    #[test]
    fn record_validation() {
        assert!(ImpressionRecord::new(0, 0).is_err());
        assert!(ImpressionRecord::new(3, 4).is_err());
        assert!(ImpressionRecord::new(3, 3).is_ok());
    }

    #[test]
    fn monte_carlo_fidelity() {
        // For each grid point, the spread of the empirical label over binomial
        // draws must agree with the delta-method prediction within 10%.
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let baseline = 0.01;
        for p in [0.005, 0.01, 0.05] {
            for r in [500u64, 2000, 10_000] {
                let binom = Binomial::new(r, p).unwrap();
                let n = 100_000;
                let ys: Vec<f64> = (0..n)
                    .map(|_| {
                        let rec = ImpressionRecord::new(r, binom.sample(&mut rng)).unwrap();
                        empirical_log_ctr(rec, baseline).unwrap()
                    })
                    .collect();
                let mean = ys.iter().sum::<f64>() / n as f64;
                let sd =
                    (ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
                let mu = (p / baseline).ln();
                let predicted = sigma_eps(mu, r, baseline).unwrap();
                let rel = (sd - predicted).abs() / predicted;
                assert!(rel < 0.10, "p={p} r={r}: mc {sd} vs delta {predicted}");
            }
        }
    }
}
