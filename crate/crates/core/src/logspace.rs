//! Log-space arithmetic.
//!
//! Probabilities are carried as natural logarithms. Zero probability is
//! `f64::NEG_INFINITY` ([`LOG_ZERO`]) and every helper here treats it as an
//! absorbing element.

use statrs::function::factorial::ln_factorial as statrs_ln_factorial;

use crate::error::{GwError, Result};

/// Log of probability zero.
pub const LOG_ZERO: f64 = f64::NEG_INFINITY;

/// Relative tail tolerance used by [`sum_log_series`] callers by default.
pub const SERIES_REL_TOL: f64 = 1e-15;

/// Default iteration budget for adaptive series.
pub const SERIES_MAX_TERMS: u64 = 50_000_000;

/// `ln(e^a + e^b)`.
#[inline]
pub fn log_add(a: f64, b: f64) -> f64 {
    if a == LOG_ZERO {
        return b;
    }
    if b == LOG_ZERO {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `ln(Σ e^{x_i})`, stable for any mix of finite and `-inf` entries.
pub fn log_sum_exp<I: IntoIterator<Item = f64>>(xs: I) -> f64 {
    let xs: Vec<f64> = xs.into_iter().collect();
    let max = xs.iter().copied().fold(LOG_ZERO, f64::max);
    if max == LOG_ZERO {
        return LOG_ZERO;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let s: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + s.ln()
}

/// Streaming accumulator for log-sum-exp that keeps a running maximum.
#[derive(Debug, Clone, Copy)]
pub struct LogAccumulator {
    max: f64,
    scaled: f64,
}

impl Default for LogAccumulator {
    fn default() -> Self {
        Self::new()
    }
}

impl LogAccumulator {
    pub fn new() -> Self {
        LogAccumulator {
            max: LOG_ZERO,
            scaled: 0.0,
        }
    }

    pub fn add(&mut self, x: f64) {
        if x == LOG_ZERO {
            return;
        }
        if x <= self.max {
            self.scaled += (x - self.max).exp();
        } else {
            self.scaled = self.scaled * (self.max - x).exp() + 1.0;
            self.max = x;
        }
    }

    pub fn value(&self) -> f64 {
        if self.max == LOG_ZERO {
            LOG_ZERO
        } else {
            self.max + self.scaled.ln()
        }
    }
}

/// `ln(1 - e^x)` for `x <= 0`.
#[inline]
pub fn log1m_exp(x: f64) -> f64 {
    if x > -std::f64::consts::LN_2 {
        (-x.exp_m1()).ln()
    } else {
        (-x.exp()).ln_1p()
    }
}

/// `ln|e^x - 1|`, accurate for small and large `|x|`.
#[inline]
pub fn ln_abs_expm1(x: f64) -> f64 {
    if x > 0.0 {
        // ln(e^x - 1) = x + ln(1 - e^{-x})
        x + log1m_exp(-x)
    } else {
        log1m_exp(x)
    }
}

/// `ln(n!)`.
#[inline]
pub fn ln_factorial(n: u64) -> f64 {
    statrs_ln_factorial(n)
}

/// `ln C(n, k)`, `-inf` when `k > n`.
///
/// Small `min(k, n-k)` goes through a direct product so that huge `n`
/// keeps full relative precision.
pub fn ln_binomial(n: u64, k: u64) -> f64 {
    if k > n {
        return LOG_ZERO;
    }
    let m = k.min(n - k);
    if m == 0 {
        return 0.0;
    }
    if m <= 64 {
        let mut acc = 0.0;
        for t in 0..m {
            acc += ((n - t) as f64).ln();
        }
        acc - ln_factorial(m)
    } else {
        ln_factorial(n) - ln_factorial(m) - ln_factorial(n - m)
    }
}

/// `k * ln(x)` with the convention `0^0 = 1`.
#[inline]
pub fn ln_pow(ln_x: f64, k: u64) -> f64 {
    if k == 0 {
        0.0
    } else {
        k as f64 * ln_x
    }
}

/// Result of an adaptively truncated series.
#[derive(Debug, Clone, Copy)]
pub struct SeriesSum {
    /// Log of the enumerated partial sum.
    pub log_sum: f64,
    /// Log of the certified bound on the omitted tail.
    pub log_tail_bound: f64,
    /// Index one past the last summed term.
    pub end: u64,
}

/// Sums `exp(term(k))` for `k = start, start+1, ...` in log space.
///
/// Stops once the consecutive-term ratio `r` is below one and the geometric
/// tail bound `term * r / (1 - r)` drops under `rel_tol` times the running
/// total. The bound is valid for summands whose ratio is non-increasing from
/// that point on, which holds for every series in this crate (geometric
/// times polynomial, Poisson, negative binomial). A `-inf` term after a
/// finite one ends the support.
pub fn sum_log_series<F>(start: u64, mut term: F, rel_tol: f64, max_terms: u64) -> Result<SeriesSum>
where
    F: FnMut(u64) -> f64,
{
    let mut acc = LogAccumulator::new();
    let mut prev = LOG_ZERO;
    let ln_tol = rel_tol.ln();
    let mut k = start;
    loop {
        if k - start >= max_terms {
            return Err(GwError::Certification(format!(
                "series did not reach relative tolerance {rel_tol:e} within {max_terms} terms"
            )));
        }
        let t = term(k);
        if t.is_nan() {
            return Err(GwError::Certification(format!("series term {k} is NaN")));
        }
        if t == LOG_ZERO && prev != LOG_ZERO {
            return Ok(SeriesSum {
                log_sum: acc.value(),
                log_tail_bound: LOG_ZERO,
                end: k + 1,
            });
        }
        acc.add(t);
        if prev != LOG_ZERO && t != LOG_ZERO {
            let ln_r = t - prev;
            if ln_r < 0.0 {
                // tail <= t * r / (1 - r)
                let ln_tail = t + ln_r - log1m_exp(ln_r);
                if ln_tail < ln_tol + acc.value() {
                    return Ok(SeriesSum {
                        log_sum: acc.value(),
                        log_tail_bound: ln_tail,
                        end: k + 1,
                    });
                }
            }
        }
        prev = t;
        k += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_add_handles_zero() {
        assert_eq!(log_add(LOG_ZERO, LOG_ZERO), LOG_ZERO);
        assert_eq!(log_add(LOG_ZERO, -1.0), -1.0);
        assert!((log_add(0.5f64.ln(), 0.25f64.ln()) - 0.75f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn accumulator_matches_batch() {
        let xs = [-3.0, 10.0, LOG_ZERO, -700.0, 9.5];
        let mut acc = LogAccumulator::new();
        for &x in &xs {
            acc.add(x);
        }
        assert!((acc.value() - log_sum_exp(xs)).abs() < 1e-13);
    }

    #[test]
    fn binomials() {
        assert_eq!(ln_binomial(3, 5), LOG_ZERO);
        assert!((ln_binomial(10, 3) - 120f64.ln()).abs() < 1e-13);
        assert!(
            (ln_binomial(200, 100) - (ln_factorial(200) - 2.0 * ln_factorial(100))).abs() < 1e-9
        );
        // huge n, small k keeps precision
        let n = 1_000_000_000_000_000u64;
        let exact = (n as f64).ln() + ((n - 1) as f64).ln() - 2f64.ln();
        assert!((ln_binomial(n, 2) - exact).abs() < 1e-12);
    }

    #[test]
    fn expm1_helpers() {
        for &x in &[-50.0f64, -1.0, -1e-9, 1e-9, 0.3, 5.0, 800.0] {
            let direct = (x.exp() - 1.0).abs().ln();
            if x.abs() > 1e-3 && x < 700.0 {
                assert!((ln_abs_expm1(x) - direct).abs() < 1e-12, "x={x}");
            }
        }
        assert!((ln_abs_expm1(1e-9) - 1e-9f64.ln()).abs() < 1e-8);
        assert!((ln_abs_expm1(800.0) - 800.0).abs() < 1e-12);
    }

    #[test]
    fn geometric_series_is_certified() {
        let r: f64 = 0.5;
        let s = sum_log_series(0, |k| k as f64 * r.ln(), 1e-15, 10_000).unwrap();
        assert!((s.log_sum.exp() - 2.0).abs() < 1e-13);
    }

    #[test]
    fn divergent_series_fails() {
        assert!(matches!(
            sum_log_series(0, |_| 0.0, 1e-15, 100),
            Err(GwError::Certification(_))
        ));
    }
}
