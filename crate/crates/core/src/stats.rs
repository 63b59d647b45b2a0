//! G-tests for comparing empirical tree laws with exact ones.

use std::collections::BTreeMap;
use std::hash::Hash;

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Minimum expected count per bin before pooling.
pub const MIN_EXPECTED: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GTest {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

fn chi2_sf(stat: f64, dof: usize) -> f64 {
    if dof == 0 {
        return 1.0;
    }
    let d = ChiSquared::new(dof as f64).expect("positive degrees of freedom");
    (1.0 - d.cdf(stat)).clamp(0.0, 1.0)
}

fn xlogx_ratio(o: f64, e: f64) -> f64 {
    if o == 0.0 {
        0.0
    } else {
        o * (o / e).ln()
    }
}

/// Merges bins whose pooled weight `key(bin)` falls below [`MIN_EXPECTED`].
/// Bins are `(observed..., expected)` rows; returns the pooled rows.
fn pool<const N: usize>(rows: Vec<[f64; N]>, key: impl Fn(&[f64; N]) -> f64) -> Vec<[f64; N]> {
    let (mut big, small): (Vec<_>, Vec<_>) = rows.into_iter().partition(|r| key(r) >= MIN_EXPECTED);
    if !small.is_empty() {
        let mut pooled = [0.0; N];
        for r in &small {
            for i in 0..N {
                pooled[i] += r[i];
            }
        }
        if key(&pooled) >= MIN_EXPECTED || big.is_empty() {
            big.push(pooled);
        } else {
            let idx = (0..big.len())
                .min_by(|&a, &b| key(&big[a]).total_cmp(&key(&big[b])))
                .expect("non-empty");
            for i in 0..N {
                big[idx][i] += pooled[i];
            }
        }
    }
    big
}

/// Goodness of fit of `observed` counts against probabilities `probs`.
///
/// The categories must be exhaustive: put any leftover probability mass in
/// its own category. Bins with expected count below five are pooled.
pub fn g_test_gof(observed: &[u64], probs: &[f64]) -> GTest {
    assert_eq!(observed.len(), probs.len(), "one probability per category");
    let total: u64 = observed.iter().sum();
    let n = total as f64;
    let rows: Vec<[f64; 2]> = observed
        .iter()
        .zip(probs)
        .map(|(&o, &p)| [o as f64, p * n])
        .collect();
    let rows = pool(rows, |r| r[1]);
    let mut g = 0.0;
    for r in &rows {
        if r[1] <= 0.0 {
            if r[0] > 0.0 {
                return GTest {
                    statistic: f64::INFINITY,
                    dof: rows.len().saturating_sub(1),
                    p_value: 0.0,
                };
            }
            continue;
        }
        g += xlogx_ratio(r[0], r[1]);
    }
    let statistic = 2.0 * g;
    let dof = rows.len().saturating_sub(1);
    GTest {
        statistic,
        dof,
        p_value: chi2_sf(statistic, dof),
    }
}

/// Two-sample G-test of homogeneity on paired category counts.
pub fn g_test_two_sample(a: &[u64], b: &[u64]) -> GTest {
    assert_eq!(a.len(), b.len(), "paired categories");
    let na: f64 = a.iter().sum::<u64>() as f64;
    let nb: f64 = b.iter().sum::<u64>() as f64;
    let n = na + nb;
    let rows: Vec<[f64; 2]> = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| [x as f64, y as f64])
        .collect();
    // expected count of the smaller sample decides pooling
    let frac = na.min(nb) / n;
    let rows = pool(rows, |r| (r[0] + r[1]) * frac);
    let mut g = 0.0;
    for r in &rows {
        let col = r[0] + r[1];
        g += xlogx_ratio(r[0], col * na / n) + xlogx_ratio(r[1], col * nb / n);
    }
    let statistic = 2.0 * g;
    let dof = rows.len().saturating_sub(1);
    GTest {
        statistic,
        dof,
        p_value: chi2_sf(statistic, dof),
    }
}

/// Counts of each distinct value.
pub fn tally<T: Ord + Hash + Clone, I: IntoIterator<Item = T>>(items: I) -> BTreeMap<T, u64> {
    let mut m = BTreeMap::new();
    for x in items {
        *m.entry(x).or_insert(0) += 1;
    }
    m
}

/// Aligns an empirical tally with an exact law given as `(category, probability)` pairs.
///
/// Returns observed counts and probabilities with one extra category for
/// everything outside the law's listed support.
pub fn align_with_law<T: Ord>(
    counts: &BTreeMap<T, u64>,
    law: &BTreeMap<T, f64>,
) -> (Vec<u64>, Vec<f64>) {
    let mut obs = Vec::with_capacity(law.len() + 1);
    let mut probs = Vec::with_capacity(law.len() + 1);
    let mut seen = 0u64;
    for (k, &p) in law {
        let c = counts.get(k).copied().unwrap_or(0);
        seen += c;
        obs.push(c);
        probs.push(p);
    }
    let total: u64 = counts.values().sum();
    obs.push(total - seen);
    probs.push((1.0 - probs.iter().sum::<f64>()).max(0.0));
    (obs, probs)
}

/// Aligns two tallies on the union of their categories.
pub fn align_two<T: Ord + Clone>(
    a: &BTreeMap<T, u64>,
    b: &BTreeMap<T, u64>,
) -> (Vec<u64>, Vec<u64>) {
    let mut keys: Vec<&T> = a.keys().chain(b.keys()).collect();
    keys.sort();
    keys.dedup();
    let xs = keys
        .iter()
        .map(|k| a.get(*k).copied().unwrap_or(0))
        .collect();
    let ys = keys
        .iter()
        .map(|k| b.get(*k).copied().unwrap_or(0))
        .collect();
    (xs, ys)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_fit() {
        let t = g_test_gof(&[250, 250, 500], &[0.25, 0.25, 0.5]);
        assert!(t.statistic.abs() < 1e-12);
        assert_eq!(t.dof, 2);
        assert!((t.p_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gross_misfit() {
        let t = g_test_gof(&[900, 100], &[0.5, 0.5]);
        assert!(t.p_value < 1e-10);
    }

    #[test]
    fn pooling_small_bins() {
        let t = g_test_gof(&[50, 48, 1, 1], &[0.5, 0.48, 0.01, 0.01]);
        assert_eq!(t.dof, 1);
    }

    #[test]
    fn g_statistic_by_hand() {
        // G = 2 sum O ln(O/E)
        let t = g_test_gof(&[30, 70], &[0.5, 0.5]);
        let g = 2.0 * (30.0 * (30.0f64 / 50.0).ln() + 70.0 * (70.0f64 / 50.0).ln());
        assert!((t.statistic - g).abs() < 1e-10);
        assert!((t.p_value - 5.7e-5).abs() < 2e-5);
    }

    #[test]
    fn two_sample() {
        let same = g_test_two_sample(&[100, 200, 300], &[100, 200, 300]);
        assert!(same.statistic.abs() < 1e-12);
        let diff = g_test_two_sample(&[100, 200, 300], &[300, 200, 100]);
        assert!(diff.p_value < 1e-10);
    }
}
