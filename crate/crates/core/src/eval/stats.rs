//! Rank statistics.

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Ranks starting at 1, ties receiving their average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|a, b| xs[*a].total_cmp(&xs[*b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for k in &idx[i..=j] {
            ranks[*k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return f64::NAN;
    }
    sxy / (sxx * syy).sqrt()
}

fn check_pairs(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::usage(
            "rank correlation over sequences of unequal length",
        ));
    }
    if x.len() < 3 {
        return Err(Error::usage("rank correlation needs at least 3 pairs"));
    }
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(Error::data("rank correlation over NaN values"));
    }
    Ok(())
}

/// Spearman's ρ with a two-sided p-value from the t approximation
/// `t = ρ·sqrt((n−2)/(1−ρ²))` with `n − 2` degrees of freedom.
///
/// A constant sequence has no ranking; ρ is NaN and p is 1.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    check_pairs(x, y)?;
    let rho = pearson(&average_ranks(x), &average_ranks(y));
    if rho.is_nan() {
        return Ok((f64::NAN, 1.0));
    }
    let df = x.len() as f64 - 2.0;
    if rho.abs() >= 1.0 {
        return Ok((rho.clamp(-1.0, 1.0), 0.0));
    }
    let t = rho * (df / (1.0 - rho * rho)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::numeric(e.to_string()))?;
    Ok((rho, 2.0 * dist.cdf(-t.abs())))
}

/// Kendall's τ-b.
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pairs(x, y)?;
    let (mut conc, mut disc, mut tx, mut ty) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            let dx = (x[i] - x[j]).signum() * ((x[i] != x[j]) as i32 as f64);
            let dy = (y[i] - y[j]).signum() * ((y[i] != y[j]) as i32 as f64);
            match (dx == 0.0, dy == 0.0) {
                (true, true) => {}
                (true, false) => tx += 1.0,
                (false, true) => ty += 1.0,
                (false, false) => {
                    if dx == dy {
                        conc += 1.0
                    } else {
                        disc += 1.0
                    }
                }
            }
        }
    }
    let denom = ((conc + disc + tx) * (conc + disc + ty)).sqrt();
    Ok(if denom == 0.0 {
        f64::NAN
    } else {
        (conc - disc) / denom
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ranks_with_ties() {
        assert_eq!(
            average_ranks(&[3.0, 1.0, 3.0, 2.0]),
            vec![3.5, 1.0, 3.5, 2.0]
        );
    }

    #[test]
    fn spearman_by_hand() {
        let (rho, p) = spearman(&[1.0, 2.0, 3.0, 4.0, 5.0], &[5.0, 6.0, 7.0, 8.0, 7.5]).unwrap();
        // d = (0,0,0,1,-1): ρ = 1 − 6·2/(5·24) = 0.9
        assert!((rho - 0.9).abs() < 1e-12);
        // t = 0.9·sqrt(3/0.19) = 3.5762; two-sided p with 3 df ≈ 0.0374
        assert!((p - 0.0374).abs() < 1e-3, "{p}");
        let (rho, p) = spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap();
        assert_eq!((rho, p), (-1.0, 0.0));
        assert!(spearman(&[1.0, 2.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn kendall_by_hand() {
        assert_eq!(
            kendall_tau(&[0.0, 0.5, 1.0, 1.5], &[1.0, 2.0, 3.0, 4.0]).unwrap(),
            1.0
        );
        // One swapped adjacent pair out of six: (5 − 1) / 6.
        let t = kendall_tau(&[0.0, 0.5, 1.0, 1.5], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((t - 4.0 / 6.0).abs() < 1e-12);
        assert_eq!(
            kendall_tau(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(),
            -1.0
        );
    }

    proptest! {
        #[test]
        fn spearman_is_rank_invariant(xs in prop::collection::vec(-10.0f64..10.0, 4..30)) {
            let ys: Vec<f64> = xs.iter().map(|x| x.sin()).collect();
            let mapped: Vec<f64> = xs.iter().map(|x| x.exp()).collect();
            let a = spearman(&xs, &ys).unwrap().0;
            let b = spearman(&mapped, &ys).unwrap().0;
            prop_assert!((a.is_nan() && b.is_nan()) || (a - b).abs() < 1e-12);
        }
    }
}
