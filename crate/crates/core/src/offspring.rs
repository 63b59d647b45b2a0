//! The geometric offspring family and the scalar sequences derived from it.
//!
//! A law `G(eta, q)` puts mass `1 - eta` at zero and `eta q (1-q)^(k-1)` at
//! `k >= 1`. It is equivalently described by the pair `(kappa, gamma)` with
//! `gamma = 1/(1-q)` (radius of convergence of the generating function) and
//! `kappa = (1-eta)/(1-q)` (the fixed point of the generating function other
//! than 1). The `n`-th iterate of the generating function is again geometric,
//! `G[kappa, gamma_n]`, and almost every formula in the crate is expressed
//! through `gamma_n`.
//!
//! `gamma_n` is always evaluated in closed form. The quantities that matter
//! numerically (`gamma_n - 1`, `gamma_n - kappa`, `gamma_m - gamma_n`) are
//! carried in log space through `expm1` so that neither the near-critical
//! case nor large `n` loses precision to cancellation.

use serde::{Deserialize, Serialize};

use crate::error::{GwError, Result};
use crate::logspace::{ln_abs_expm1, ln_binomial, ln_pow, LOG_ZERO};

/// Sign of `mu - 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criticality {
    Subcritical,
    Critical,
    Supercritical,
}

/// A bare geometric law `G(eta, q)` with `eta in [0, 1]` and `q in (0, 1]`.
///
/// Unlike [`OffspringParams`] this also admits the boundary laws that show
/// up as derived distributions (`q = 1` for the extinction law when
/// `eta = 1`, `eta = 1` for the survivor-count law `G(1, nu_h)`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Geometric {
    pub eta: f64,
    pub q: f64,
}

impl Geometric {
    pub fn new(eta: f64, q: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&eta) || !(q > 0.0 && q <= 1.0) {
            return Err(GwError::InvalidParameter(format!(
                "geometric law needs eta in [0,1] and q in (0,1], got eta={eta}, q={q}"
            )));
        }
        Ok(Geometric { eta, q })
    }

    /// `ln P(X = k)`.
    pub fn ln_pmf(&self, k: u64) -> f64 {
        if k == 0 {
            return (1.0 - self.eta).ln();
        }
        self.eta.ln() + self.q.ln() + ln_pow((-self.q).ln_1p(), k - 1)
    }

    pub fn mean(&self) -> f64 {
        self.eta / self.q
    }

    /// `ln p_[k](n) = ln[C(n,k) q^(k+1) (1-q)^(n-k)]`, the `k`-th order
    /// size-biased law; `-inf` for `n < k`.
    pub fn ln_size_biased(&self, k: u64, n: u64) -> f64 {
        if n < k {
            return LOG_ZERO;
        }
        ln_binomial(n, k) + (k + 1) as f64 * self.q.ln() + ln_pow((-self.q).ln_1p(), n - k)
    }
}

/// Parameters of the offspring law `G(eta, q) = G[kappa, gamma]`.
///
/// Only `(eta, q)` are serialized; the derived fields are recomputed on load.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct OffspringParams {
    pub eta: f64,
    pub q: f64,
    /// Mean `eta / q`.
    pub mu: f64,
    /// `(1 - eta) / (1 - q)`.
    pub kappa: f64,
    /// `1 / (1 - q)`.
    pub gamma: f64,
    ln_mu: f64,
    ln_gamma_minus_one: f64,
}

#[derive(Serialize, Deserialize)]
struct RawParams {
    eta: f64,
    q: f64,
}

impl TryFrom<RawParams> for OffspringParams {
    type Error = GwError;
    fn try_from(raw: RawParams) -> Result<Self> {
        OffspringParams::new(raw.eta, raw.q)
    }
}

impl From<OffspringParams> for RawParams {
    fn from(p: OffspringParams) -> Self {
        RawParams { eta: p.eta, q: p.q }
    }
}

/// The law `G[kappa, gamma_n]` of `Z_n` under a single ancestor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IteratedLaw {
    pub n: u64,
    pub gamma_n: f64,
    pub eta_n: f64,
    pub q_n: f64,
    pub ln_gamma_n: f64,
    /// `ln(gamma_n - 1)`.
    pub ln_gamma_n_minus_one: f64,
    /// `ln(gamma_n - kappa)`, equal to `n ln(mu) + ln(gamma_n - 1)`.
    pub ln_gamma_n_minus_kappa: f64,
}

/// Extinction-conditioned offspring data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtinctionParams {
    /// Offspring law of the tree conditioned on extinction.
    pub frak_p: Geometric,
    /// Extinction probability `min(1, kappa)`.
    pub frak_c: f64,
    /// Mean of `frak_p`.
    pub frak_m: f64,
}

impl OffspringParams {
    pub fn new(eta: f64, q: f64) -> Result<Self> {
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(GwError::InvalidParameter(format!(
                "eta must lie in (0,1], got {eta}"
            )));
        }
        if !(q > 0.0 && q < 1.0) {
            return Err(GwError::InvalidParameter(format!(
                "q must lie in (0,1), got {q}"
            )));
        }
        let mu = eta / q;
        let kappa = (1.0 - eta) / (1.0 - q);
        let gamma = 1.0 / (1.0 - q);
        Ok(OffspringParams {
            eta,
            q,
            mu,
            kappa,
            gamma,
            ln_mu: eta.ln() - q.ln(),
            // gamma - 1 = q / (1 - q)
            ln_gamma_minus_one: q.ln() - (-q).ln_1p(),
        })
    }

    /// Builds the law from `(kappa, gamma)` via `eta = 1 - kappa/gamma`, `q = 1 - 1/gamma`.
    pub fn from_kappa_gamma(kappa: f64, gamma: f64) -> Result<Self> {
        if gamma.partial_cmp(&1.0) != Some(std::cmp::Ordering::Greater)
            || kappa.is_nan()
            || kappa < 0.0
        {
            return Err(GwError::InvalidParameter(format!(
                "need gamma > 1 and kappa >= 0, got kappa={kappa}, gamma={gamma}"
            )));
        }
        Self::new(1.0 - kappa / gamma, 1.0 - 1.0 / gamma)
    }

    pub fn criticality(&self) -> Criticality {
        if self.eta == self.q {
            Criticality::Critical
        } else if self.eta < self.q {
            Criticality::Subcritical
        } else {
            Criticality::Supercritical
        }
    }

    pub fn ln_mu(&self) -> f64 {
        self.ln_mu
    }

    pub fn ln_kappa(&self) -> f64 {
        self.kappa.ln()
    }

    pub fn law(&self) -> Geometric {
        Geometric {
            eta: self.eta,
            q: self.q,
        }
    }

    /// `ln p(k)`.
    pub fn pmf(&self, k: u64) -> f64 {
        self.law().ln_pmf(k)
    }

    /// Generating function `f(s)` on `[0, gamma)`.
    pub fn generating_function(&self, s: f64) -> Result<f64> {
        if !(s >= 0.0 && s < self.gamma) {
            return Err(GwError::Domain(format!(
                "generating function needs 0 <= s < gamma = {}, got {s}",
                self.gamma
            )));
        }
        let (eta, q) = (self.eta, self.q);
        Ok(((1.0 - eta) - s * (1.0 - q - eta)) / (1.0 - s * (1.0 - q)))
    }

    /// `ln[(gamma_n - 1)/(gamma - 1)]`, i.e. `ln[(1-mu)/(1-mu^n)]` or `-ln n`.
    fn ln_gamma_ratio(&self, n: u64) -> f64 {
        if n == 0 {
            return f64::INFINITY;
        }
        if self.criticality() == Criticality::Critical {
            -(n as f64).ln()
        } else {
            ln_abs_expm1(self.ln_mu) - ln_abs_expm1(n as f64 * self.ln_mu)
        }
    }

    /// The `n`-th iterate `G[kappa, gamma_n]`, `n >= 1`.
    pub fn iterate(&self, n: u64) -> Result<IteratedLaw> {
        if n == 0 {
            return Err(GwError::Precondition("iterate needs n >= 1".into()));
        }
        let ln_gm1 = self.ln_gamma_minus_one + self.ln_gamma_ratio(n);
        let gm1 = ln_gm1.exp();
        let gamma_n = 1.0 + gm1;
        Ok(IteratedLaw {
            n,
            gamma_n,
            eta_n: 1.0 - self.kappa / gamma_n,
            q_n: gm1 / gamma_n,
            ln_gamma_n: gm1.ln_1p(),
            ln_gamma_n_minus_one: ln_gm1,
            ln_gamma_n_minus_kappa: n as f64 * self.ln_mu + ln_gm1,
        })
    }

    /// `gamma_n`, with `gamma_0 = +inf`.
    pub fn gamma_n(&self, n: u64) -> f64 {
        if n == 0 {
            f64::INFINITY
        } else {
            1.0 + (self.ln_gamma_minus_one + self.ln_gamma_ratio(n)).exp()
        }
    }

    /// `ln gamma_n`, with `ln gamma_0 = +inf`.
    pub fn ln_gamma_n(&self, n: u64) -> f64 {
        if n == 0 {
            f64::INFINITY
        } else {
            (self.ln_gamma_minus_one + self.ln_gamma_ratio(n))
                .exp()
                .ln_1p()
        }
    }

    /// `ln(gamma_m - gamma_n)` for `m < n`, computed without cancellation.
    pub fn ln_gamma_gap(&self, m: u64, n: u64) -> f64 {
        assert!(m < n, "ln_gamma_gap needs m < n");
        if m == 0 {
            return f64::INFINITY;
        }
        let base = self.ln_gamma_minus_one;
        if self.criticality() == Criticality::Critical {
            // (gamma-1) (n-m) / (m n)
            base + ((n - m) as f64).ln() - (m as f64).ln() - (n as f64).ln()
        } else {
            // (gamma-1) mu^m (1-mu)(1-mu^(n-m)) / ((1-mu^m)(1-mu^n))
            let l = self.ln_mu;
            base + m as f64 * l + ln_abs_expm1(l) + ln_abs_expm1((n - m) as f64 * l)
                - ln_abs_expm1(m as f64 * l)
                - ln_abs_expm1(n as f64 * l)
        }
    }

    /// `ln(gamma_m / gamma_n)` for `m < n`.
    pub fn ln_gamma_quotient(&self, m: u64, n: u64) -> f64 {
        if m == 0 {
            return f64::INFINITY;
        }
        (self.ln_gamma_gap(m, n) - self.ln_gamma_n(n)).exp().ln_1p()
    }

    pub fn extinction_params(&self) -> ExtinctionParams {
        if self.mu <= 1.0 {
            ExtinctionParams {
                frak_p: self.law(),
                frak_c: 1.0,
                frak_m: self.mu,
            }
        } else {
            ExtinctionParams {
                frak_p: Geometric {
                    eta: self.q,
                    q: self.eta,
                },
                frak_c: self.kappa,
                frak_m: 1.0 / self.mu,
            }
        }
    }

    /// `ln p_[k](n)`.
    pub fn size_biased_k(&self, k: u64, n: u64) -> Result<f64> {
        if k == 0 {
            return Err(GwError::Precondition(
                "size-biased order k must be >= 1".into(),
            ));
        }
        Ok(self.law().ln_size_biased(k, n))
    }

    /// Poisson immigration rate per unit `theta` at level `h`.
    pub fn zeta(&self, h: u64) -> Result<f64> {
        let mu = self.mu;
        match self.criticality() {
            Criticality::Subcritical => {
                if self.kappa == 0.0 {
                    return Err(GwError::Domain("zeta undefined for kappa = 0".into()));
                }
                Ok(
                    (-((h + 1) as f64) * self.ln_mu).exp() * (1.0 - mu) * (self.kappa - 1.0)
                        / self.kappa,
                )
            }
            Criticality::Critical => Ok(self.gamma - 1.0),
            Criticality::Supercritical => {
                Ok((h as f64 * self.ln_mu).exp() * (mu - 1.0) * (1.0 - self.kappa))
            }
        }
    }

    /// `nu_n = 1 - (gamma_{n+1} - 1)/(gamma_1 - 1)`.
    pub fn nu(&self, n: u64) -> f64 {
        -self.ln_gamma_ratio(n + 1).exp_m1()
    }

    /// `ln p~_n(k) = k ln gamma_{n+1} - ln gamma_n + ln p(k)`, `n >= 1`.
    pub fn condensation_offspring(&self, n: u64, k: u64) -> Result<f64> {
        if n == 0 {
            return Err(GwError::Precondition(
                "condensation offspring law needs n >= 1".into(),
            ));
        }
        Ok(ln_pow(self.ln_gamma_n(n + 1), k) - self.ln_gamma_n(n) + self.pmf(k))
    }

    /// `p~_n` written as a geometric law, `n >= 1`.
    pub fn condensation_law(&self, n: u64) -> Result<Geometric> {
        if n == 0 {
            return Err(GwError::Precondition(
                "condensation offspring law needs n >= 1".into(),
            ));
        }
        let eta = 1.0 - (1.0 - self.eta) / self.gamma_n(n);
        let q = 1.0 - (self.ln_gamma_n(n + 1) - self.gamma.ln()).exp();
        Geometric::new(eta, q)
    }

    /// `nu_h` of the extinction law: `m (1 - m^h)/(1 - m^{h+1})` with `m = min(mu, 1/mu)`.
    ///
    /// Equals [`nu`](Self::nu) when `mu <= 1`; for `mu > 1` it is `nu` of `G(q, eta)`.
    pub fn survivor_nu(&self, h: u64) -> f64 {
        if self.criticality() == Criticality::Critical {
            return h as f64 / (h + 1) as f64;
        }
        let ln_m = -self.ln_mu.abs();
        -(ln_abs_expm1(ln_m) - ln_abs_expm1((h + 1) as f64 * ln_m)).exp_m1()
    }

    /// Survivor-count law `G(1, nu_h)` of the two-type condensation tree, `h >= 1`.
    pub fn survivor_count_law(&self, h: u64) -> Result<Geometric> {
        if h == 0 {
            return Err(GwError::Precondition(
                "survivor count law needs h >= 1".into(),
            ));
        }
        Geometric::new(1.0, self.survivor_nu(h))
    }

    /// Head probability `q v eta` of the two-type condensation tree.
    pub fn head_probability(&self) -> f64 {
        self.q.max(self.eta)
    }
}
