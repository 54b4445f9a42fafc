//! Isotropic Gaussian kernel density estimate over feature vectors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KdeModel {
    pub bandwidth: f64,
    pub points: Vec<Vec<f64>>,
}

impl KdeModel {
    pub fn new(points: Vec<Vec<f64>>, bandwidth: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::usage("density estimate over an empty reference set"));
        }
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::config(format!(
                "KDE bandwidth {bandwidth} must be positive"
            )));
        }
        let d = points[0].len();
        if d == 0 || points.iter().any(|p| p.len() != d) {
            return Err(Error::data(
                "KDE reference points must share a positive dimension",
            ));
        }
        Ok(Self { bandwidth, points })
    }

    /// Bandwidth by Scott's rule, `h = σ̄ · n^(−1/(d+4))`, with `σ̄` the
    /// mean per-coordinate sample standard deviation.
    pub fn scott(points: Vec<Vec<f64>>) -> Result<Self> {
        let n = points.len();
        if n == 0 {
            return Err(Error::usage("density estimate over an empty reference set"));
        }
        let d = points[0].len();
        let mut sigma = 0.0;
        for k in 0..d {
            let m = points.iter().map(|p| p[k]).sum::<f64>() / n as f64;
            let var =
                points.iter().map(|p| (p[k] - m).powi(2)).sum::<f64>() / (n.max(2) - 1) as f64;
            sigma += var.sqrt();
        }
        sigma /= d.max(1) as f64;
        let h = if sigma > 0.0 { sigma } else { 1.0 } * (n as f64).powf(-1.0 / (d as f64 + 4.0));
        Self::new(points, h)
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    /// Natural log of the density; finite for every finite `x`, even where
    /// the density itself underflows.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::data(format!(
                "KDE query of dimension {} against references of dimension {}",
                x.len(),
                self.dim()
            )));
        }
        let h2 = self.bandwidth * self.bandwidth;
        let exps: Vec<f64> = self
            .points
            .iter()
            .map(|p| -p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / (2.0 * h2))
            .collect();
        let m = exps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + exps.iter().map(|e| (e - m).exp()).sum::<f64>().ln();
        let d = self.dim() as f64;
        Ok(
            lse - (self.points.len() as f64).ln()
                - 0.5 * d * (2.0 * std::f64::consts::PI * h2).ln(),
        )
    }

    pub fn density(&self, x: &[f64]) -> Result<f64> {
        Ok(self.log_density(x)?.exp())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    #[test]
    fn single_point_at_center() {
        let h = 0.7;
        let k = KdeModel::new(vec![vec![1.0, -2.0, 0.5]], h).unwrap();
        let expected = (2.0 * PI * h * h).powf(-1.5);
        assert!((k.density(&[1.0, -2.0, 0.5]).unwrap() / expected - 1.0).abs() < 1e-12);
        let far = k.density(&[1.0 + 20.0 * h, -2.0, 0.5]).unwrap();
        assert!(far < 1e-30 * expected);
        assert!(k.log_density(&[1e6, 0.0, 0.0]).unwrap().is_finite());
    }

    #[test]
    fn two_point_average() {
        let k = KdeModel::new(vec![vec![-1.0], vec![1.0]], 1.0).unwrap();
        let phi = |z: f64| (-0.5 * z * z).exp() / (2.0 * PI).sqrt();
        assert!((k.density(&[0.0]).unwrap() - 0.5 * (phi(1.0) + phi(1.0))).abs() < 1e-15);
        assert!((k.density(&[0.5]).unwrap() - 0.5 * (phi(1.5) + phi(0.5))).abs() < 1e-15);
    }

    #[test]
    fn errors() {
        assert!(matches!(KdeModel::new(vec![], 1.0), Err(Error::Usage(_))));
        assert!(matches!(
            KdeModel::new(vec![vec![0.0]], 0.0),
            Err(Error::Config(_))
        ));
        assert!(matches!(KdeModel::scott(vec![]), Err(Error::Usage(_))));
    }

    #[test]
    fn integrates_to_one_in_2d() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Vec<f64>> = (0..20)
            .map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect();
        let k = KdeModel::new(pts, 0.4).unwrap();
        // Uniform Monte Carlo over a box that holds all but a negligible tail.
        let (lo, hi) = (-4.0, 4.0);
        let area = (hi - lo) * (hi - lo);
        let n = 200_000;
        let vals: Vec<f64> = (0..n)
            .map(|_| {
                k.density(&[rng.random_range(lo..hi), rng.random_range(lo..hi)])
                    .unwrap()
                    * area
            })
            .collect();
        let m = vals.iter().sum::<f64>() / n as f64;
        let se =
            (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64 / n as f64).sqrt();
        assert!((m - 1.0).abs() < 3.0 * se, "{m} ± {se}");
    }

    #[test]
    fn scott_bandwidth_by_hand() {
        // Coordinates with sample std 1 in both dims, n = 4, d = 2.
        let s = (4.0f64 / 3.0).sqrt().recip();
        let pts = vec![vec![s, s], vec![-s, -s], vec![s, -s], vec![-s, s]];
        let k = KdeModel::scott(pts).unwrap();
        assert!((k.bandwidth - 4f64.powf(-1.0 / 6.0)).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn permutation_invariant(seed in 0u64..1000, x in -2.0f64..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<Vec<f64>> = (0..8).map(|_| vec![rng.random_range(-2.0..2.0)]).collect();
            let mut rev = pts.clone();
            rev.reverse();
            let a = KdeModel::new(pts, 0.5).unwrap().density(&[x]).unwrap();
            let b = KdeModel::new(rev, 0.5).unwrap().density(&[x]).unwrap();
            prop_assert!((a - b).abs() <= 1e-14 * a.abs().max(1e-300));
            prop_assert!(a > 0.0);
        }
    }
}
