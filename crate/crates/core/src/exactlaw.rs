//! Closed-form finite-dimensional laws.
//!
//! Every law handled here has the shape `P(r_h(tau) = t) * W(k_root, z_h(t))`
//! for a weight `W` that depends on the tree only through its root degree
//! and its generation size at height `h`. This is used both for per-tree
//! evaluation and for aggregated sums over all trees with capped degrees.

use serde::{Deserialize, Serialize};

use crate::error::{GwError, Result};
use crate::logspace::{
    ln_binomial, ln_factorial, ln_pow, log1m_exp, log_sum_exp, sum_log_series, LogAccumulator,
    LOG_ZERO, SERIES_MAX_TERMS, SERIES_REL_TOL,
};
use crate::offspring::{Criticality, OffspringParams};
use crate::treekit::{for_each_tree, EnumerationSpec, LawMeta, OrderedTree, TruncatedLaw};

/// Relative accuracy demanded of the series inside restricted limit laws.
pub const RESTRICTED_SERIES_TOL: f64 = 1e-12;

fn require_n(n: u64) -> Result<()> {
    if n == 0 {
        return Err(GwError::Precondition(
            "generation index must be >= 1".into(),
        ));
    }
    Ok(())
}

/// `ln P(Z_n = a)` under a single ancestor, `n >= 1`.
pub fn z_pmf(p: &OffspringParams, n: u64, a: u64) -> Result<f64> {
    require_n(n)?;
    let it = p.iterate(n)?;
    if a == 0 {
        return Ok(p.ln_kappa() - it.ln_gamma_n);
    }
    Ok(it.ln_gamma_n_minus_kappa + it.ln_gamma_n_minus_one - (a + 1) as f64 * it.ln_gamma_n)
}

/// `ln P_k(Z_n = a)`: generation `n` of a forest of `k` independent trees.
///
/// `n = 0` gives the Kronecker mass `1{a = k}` and `k = 0` gives `1{a = 0}`.
pub fn forest_z_pmf(p: &OffspringParams, k: u64, n: u64, a: u64) -> Result<f64> {
    if n == 0 {
        return Ok(if a == k { 0.0 } else { LOG_ZERO });
    }
    if k == 0 {
        return Ok(if a == 0 { 0.0 } else { LOG_ZERO });
    }
    let it = p.iterate(n)?;
    let ln_kappa = p.ln_kappa();
    if a == 0 {
        return Ok(ln_pow(ln_kappa - it.ln_gamma_n, k));
    }
    let ln_alpha = it.ln_gamma_n_minus_kappa + it.ln_gamma_n_minus_one;
    let mut acc = LogAccumulator::new();
    for i in 1..=k.min(a) {
        acc.add(
            ln_binomial(k, i)
                + ln_binomial(a - 1, i - 1)
                + ln_pow(ln_kappa, k - i)
                + i as f64 * ln_alpha,
        );
    }
    Ok(acc.value() - (a + k) as f64 * it.ln_gamma_n)
}

/// `ln P(r_h(tau) = t)`: product of `p(k_u)` over nodes of depth `< h`.
pub fn gw_tree_log_prob(p: &OffspringParams, t: &OrderedTree, h: usize) -> Result<f64> {
    if t.height() > h {
        return Err(GwError::Precondition(format!(
            "tree height {} exceeds h = {h}",
            t.height()
        )));
    }
    let mut s = 0.0;
    for level in &t.levels()[..h.min(t.levels().len())] {
        for &d in level {
            s += p.pmf(d as u64);
        }
    }
    Ok(s)
}

/// The two factors of the fused ratio formula.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioTerms {
    /// `ln b_{n,h} = -a ln(gamma_{n-h} / gamma_n)`.
    pub b_nh: f64,
    /// `ln G_{n,h}(k, i)` for `i = 1..=k`.
    pub g_terms: Vec<f64>,
}

/// `b_{n,h}` and `G_{n,h}(k, .)`, for `n > h >= 1`, `k, a >= 1`.
pub fn ratio_terms(p: &OffspringParams, n: u64, h: u64, k: u64, a: u64) -> Result<RatioTerms> {
    if !(n > h && h >= 1) || k == 0 || a == 0 {
        return Err(GwError::Precondition(format!(
            "ratio terms need n > h >= 1 and k, a >= 1 (n={n}, h={h}, k={k}, a={a})"
        )));
    }
    let m = n - h;
    let lo = p.iterate(m)?;
    let hi = p.iterate(n)?;
    let b_nh = -(a as f64) * p.ln_gamma_quotient(m, n);
    let ln_alpha_m = lo.ln_gamma_n_minus_kappa + lo.ln_gamma_n_minus_one;
    let base = hi.ln_gamma_n
        - k as f64 * lo.ln_gamma_n
        - hi.ln_gamma_n_minus_kappa
        - hi.ln_gamma_n_minus_one;
    let g_terms = (1..=k)
        .map(|i| {
            if i > a {
                LOG_ZERO
            } else {
                ln_binomial(a - 1, i - 1) + base + i as f64 * ln_alpha_m
            }
        })
        .collect();
    Ok(RatioTerms { b_nh, g_terms })
}

/// `ln[P_k(Z_{n-h} = a) / P(Z_n = a)]` for `n >= h >= 1`, `a >= 1`.
///
/// Uses the fused `b_{n,h}`/`G_{n,h}` form when `n > h` and the Kronecker
/// case `P_k(Z_0 = a) = 1{k = a}` when `n = h`. `k = 0` gives `-inf`.
pub fn conditioned_ratio(p: &OffspringParams, n: u64, h: u64, k: u64, a: u64) -> Result<f64> {
    if h == 0 || n < h || a == 0 {
        return Err(GwError::Precondition(format!(
            "ratio needs n >= h >= 1 and a >= 1 (n={n}, h={h}, a={a})"
        )));
    }
    if k == 0 {
        return Ok(LOG_ZERO);
    }
    if n == h {
        return Ok(if k == a { -z_pmf(p, n, a)? } else { LOG_ZERO });
    }
    let terms = ratio_terms(p, n, h, k, a)?;
    let ln_kappa = p.ln_kappa();
    let mut acc = LogAccumulator::new();
    for (idx, g) in terms.g_terms.iter().enumerate() {
        let i = idx as u64 + 1;
        acc.add(ln_binomial(k, i) + ln_pow(ln_kappa, k - i) + g);
    }
    Ok(terms.b_nh + acc.value())
}

/// `ln P(r_h(tau_n) = t)` where `tau_n` is the tree conditioned on `Z_n = a`.
pub fn conditioned_tree_law(
    p: &OffspringParams,
    n: u64,
    h: usize,
    t: &OrderedTree,
    a: u64,
) -> Result<f64> {
    let base = gw_tree_log_prob(p, t, h)?;
    Ok(base + conditioned_ratio(p, n, h as u64, t.generation_size(h) as u64, a)?)
}

/// `ln P(Bin(trials, prob) >= i)` given `ln prob` and `ln(1 - prob)`.
fn ln_binomial_upper_tail(trials: u64, ln_p: f64, ln_1mp: f64, i: u64) -> Result<f64> {
    if i == 0 {
        return Ok(0.0);
    }
    if i > trials {
        return Ok(LOG_ZERO);
    }
    let term = |j: u64| {
        if j > trials {
            LOG_ZERO
        } else {
            ln_binomial(trials, j) + ln_pow(ln_p, j) + ln_pow(ln_1mp, trials - j)
        }
    };
    let mean = trials as f64 * ln_p.exp();
    if ((i - 1) as f64) < mean {
        let lower = log_sum_exp((0..i).map(term));
        if lower >= 0.0 {
            return Ok(LOG_ZERO);
        }
        Ok(log1m_exp(lower))
    } else {
        Ok(sum_log_series(i, term, SERIES_REL_TOL, SERIES_MAX_TERMS)?.log_sum)
    }
}

/// `ln[P(r_{h,k0}(tau_n) = t) / P(r_h(tau) = t)]` for a tree `t` whose root
/// has exactly `k0` children and `z_h(t) = k`; needs `n > h >= 1`, `a >= 1`.
///
/// The root of `tau_n` may have any number `k0 + i` of children; summing the
/// unseen ones out gives `sum_i (1-q)^i P(Z^{(k)}_{n-h} + Z'^{(i)}_{n-1} = a)`
/// over `P(Z_n = a)`, which collapses to the closed form below.
pub fn conditioned_restricted_weight(
    p: &OffspringParams,
    n: u64,
    h: u64,
    k: u64,
    a: u64,
) -> Result<f64> {
    if !(n > h && h >= 1) || a == 0 {
        return Err(GwError::Precondition(format!(
            "restricted conditioned law needs n > h >= 1 and a >= 1 (n={n}, h={h}, a={a})"
        )));
    }
    let m = n - 1;
    let ln_gamma = p.gamma.ln();
    let it_m = p.iterate(m)?;
    let ln_c0 = (p.gamma * it_m.gamma_n - p.kappa).ln();
    let ln_v0 = ln_gamma + it_m.ln_gamma_n - ln_c0;
    let ln_gn = p.ln_gamma_n(n);
    let ln_cv = ln_gamma + it_m.ln_gamma_n_minus_one + it_m.ln_gamma_n_minus_kappa - 2.0 * ln_c0;
    // V(j) for j >= 1
    let ln_v = |j: u64| ln_cv - (j - 1) as f64 * ln_gn;

    let mut acc = LogAccumulator::new();
    acc.add(ln_v0 + forest_z_pmf(p, k, n - h, a)?);
    if k == 0 {
        acc.add(ln_v(a));
        return Ok(acc.value() - z_pmf(p, n, a)?);
    }
    let lo = p.iterate(n - h)?;
    let ln_kappa = p.ln_kappa();
    // l = 0
    acc.add(ln_pow(ln_kappa - lo.ln_gamma_n, k) + ln_v(a));
    // 1 <= l <= a-1, per i: sum_l C(l-1,i-1) x^l = (x/(1-x))^i P(Bin(a-1, 1-x) >= i)
    let ln_x = -p.ln_gamma_quotient(n - h, n);
    let ln_1mx = p.ln_gamma_gap(n - h, n) - lo.ln_gamma_n;
    let ln_alpha = lo.ln_gamma_n_minus_kappa + lo.ln_gamma_n_minus_one;
    let head = ln_cv - (a - 1) as f64 * ln_gn - k as f64 * lo.ln_gamma_n;
    for i in 1..=k.min(a.saturating_sub(1)) {
        let tail = ln_binomial_upper_tail(a - 1, ln_1mx, ln_x, i)?;
        if tail == LOG_ZERO {
            continue;
        }
        acc.add(
            head + ln_binomial(k, i)
                + ln_pow(ln_kappa, k - i)
                + i as f64 * (ln_alpha + ln_x - ln_1mx)
                + tail,
        );
    }
    Ok(acc.value() - z_pmf(p, n, a)?)
}

/// Restricted conditioned law `ln P(r_{h,k0}(tau_n) = t)`.
pub fn conditioned_restricted_law(
    p: &OffspringParams,
    n: u64,
    h: usize,
    k0: u32,
    t: &OrderedTree,
    a: u64,
) -> Result<f64> {
    check_restricted_shape(t, h, k0)?;
    if t.root_degree() < k0 {
        return conditioned_tree_law(p, n, h, t, a);
    }
    let k = t.generation_size(h) as u64;
    Ok(gw_tree_log_prob(p, t, h)? + conditioned_restricted_weight(p, n, h as u64, k, a)?)
}

fn check_restricted_shape(t: &OrderedTree, h: usize, k0: u32) -> Result<()> {
    if t.height() > h || t.root_degree() > k0 {
        return Err(GwError::Precondition(format!(
            "tree {t} is not an r_(h,k0) view for h = {h}, k0 = {k0}"
        )));
    }
    Ok(())
}

fn require_kesten(p: &OffspringParams) -> Result<()> {
    if p.eta >= 1.0 {
        return Err(GwError::UnsupportedRegime(
            "the Kesten tree needs eta < 1 (extinction probability > 0)".into(),
        ));
    }
    Ok(())
}

/// `ln[k c^{k-1} m^{-h}]`, the Kesten weight of a tree with `z_h = k`.
pub fn kesten_weight(p: &OffspringParams, h: u64, k: u64) -> Result<f64> {
    require_kesten(p)?;
    if k == 0 {
        return Ok(LOG_ZERO);
    }
    let e = p.extinction_params();
    Ok((k as f64).ln() + ln_pow(e.frak_c.ln(), k - 1) - h as f64 * e.frak_m.ln())
}

/// `ln P(r_h(tau^0) = t)` for the Kesten tree.
pub fn kesten_tree_law(p: &OffspringParams, h: usize, t: &OrderedTree) -> Result<f64> {
    require_kesten(p)?;
    Ok(gw_tree_log_prob(p, t, h)? + kesten_weight(p, h as u64, t.generation_size(h) as u64)?)
}

/// `ln H(h, k, theta)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScriptH {
    pub value: f64,
}

/// Sequence `ln H(h, 1, theta), ln H(h, 2, theta), ...` in O(1) per step.
///
/// `H(h,K,theta) = A e^{-theta B} sum_{i=1}^K C(K,i) c^{K-i} lambda^{i-1}/(i-1)!`
/// and, with `x = lambda / c`, the sum is `c^{K-1} L^{(1)}_{K-1}(-x)`; the
/// Laguerre values follow the three-term recurrence, rescaled in log space.
#[derive(Debug, Clone)]
pub struct ScriptHSeq {
    ln_prefactor: f64,
    ln_c: f64,
    ln_lambda: f64,
    x: f64,
    values: Vec<f64>,
    // recurrence state: y_{j-1}, y_j scaled by exp(-ln_scale)
    j: u64,
    y_prev: f64,
    y_cur: f64,
    ln_scale: f64,
}

impl ScriptHSeq {
    pub fn new(p: &OffspringParams, h: u64, theta: f64) -> Result<Self> {
        if h == 0 {
            return Err(GwError::Precondition("H(h,k,theta) needs h >= 1".into()));
        }
        if !(theta > 0.0 && theta.is_finite()) {
            return Err(GwError::InvalidParameter(format!(
                "theta must be in (0, inf), got {theta}"
            )));
        }
        let hf = h as f64;
        let (ln_a, b, ln_lambda, ln_c) = match p.criticality() {
            Criticality::Subcritical => {
                let l = -hf * p.ln_mu();
                let km1 = p.kappa - 1.0;
                let b = l.exp_m1() * km1 / p.kappa;
                (l, b, theta.ln() + l + 2.0 * km1.ln() - p.ln_kappa(), 0.0)
            }
            Criticality::Critical => {
                let gm1 = p.gamma - 1.0;
                (0.0, gm1 * hf, theta.ln() + 2.0 * gm1.ln(), 0.0)
            }
            Criticality::Supercritical => {
                let l = hf * p.ln_mu();
                let omk = 1.0 - p.kappa;
                let b = l.exp_m1() * omk;
                (l, b, theta.ln() + l + 2.0 * omk.ln(), p.ln_kappa())
            }
        };
        let x = if ln_c == LOG_ZERO {
            f64::INFINITY
        } else {
            (ln_lambda - ln_c).exp()
        };
        Ok(ScriptHSeq {
            ln_prefactor: ln_a - theta * b,
            ln_c,
            ln_lambda,
            x,
            values: Vec::new(),
            j: 0,
            y_prev: 0.0,
            y_cur: 1.0,
            ln_scale: 0.0,
        })
    }

    fn advance(&mut self) {
        let kk = self.values.len() as u64 + 1;
        let ln_sum = if self.ln_c == LOG_ZERO {
            // only i = K survives when c = 0
            (kk - 1) as f64 * self.ln_lambda - ln_factorial(kk - 1)
        } else {
            // bring recurrence index j up to K-1
            while self.j < kk - 1 {
                let n = self.j as f64;
                let next = if self.j == 0 {
                    2.0 + self.x
                } else {
                    ((2.0 * n + 2.0 + self.x) * self.y_cur - (n + 1.0) * self.y_prev) / (n + 1.0)
                };
                self.y_prev = self.y_cur;
                self.y_cur = next;
                self.j += 1;
                if self.y_cur > 1e250 {
                    self.y_prev /= self.y_cur;
                    self.ln_scale += self.y_cur.ln();
                    self.y_cur = 1.0;
                }
            }
            (kk - 1) as f64 * self.ln_c + self.ln_scale + self.y_cur.ln()
        };
        self.values.push(self.ln_prefactor + ln_sum);
    }

    /// `ln H(h, k, theta)`; `-inf` at `k = 0`.
    pub fn get(&mut self, k: u64) -> f64 {
        if k == 0 {
            return LOG_ZERO;
        }
        while (self.values.len() as u64) < k {
            self.advance();
        }
        self.values[k as usize - 1]
    }
}

/// `H(h, k, theta)`, the Poisson-regime weight of a tree with `z_h = k`.
pub fn script_h(p: &OffspringParams, h: u64, k: u64, theta: f64) -> Result<ScriptH> {
    if k == 0 {
        return Err(GwError::Precondition("H(h,k,theta) needs k >= 1".into()));
    }
    Ok(ScriptH {
        value: ScriptHSeq::new(p, h, theta)?.get(k),
    })
}

/// `ln P(r_h(tau^theta) = t)`.
pub fn poisson_tree_law(p: &OffspringParams, theta: f64, h: usize, t: &OrderedTree) -> Result<f64> {
    let k = t.generation_size(h) as u64;
    let base = gw_tree_log_prob(p, t, h)?;
    Ok(base + ScriptHSeq::new(p, h as u64, theta)?.get(k))
}

/// Weight of an `r_{h,k0}` view with root degree exactly `k0` and `z_h = k`,
/// for a limit law whose `r_h` weight is `w(z_h)`.
///
/// Summing over the subtrees grafted to the right of the first `k0` root
/// children gives
/// `w(k) + (1-q)/(eta q) [ sum_{k'>=1} w(k+k') P(Z_h = k') + w(k) (kappa/gamma_h - kappa/gamma) ]`.
pub fn restricted_weight<F>(p: &OffspringParams, h: u64, k: u64, mut w: F) -> Result<f64>
where
    F: FnMut(u64) -> f64,
{
    if h == 0 {
        return Err(GwError::Precondition(
            "restricted weight needs h >= 1".into(),
        ));
    }
    let ln_graft = (1.0 - p.q).ln() - p.eta.ln() - p.q.ln();
    let wk = w(k);
    let mut acc = LogAccumulator::new();
    acc.add(wk);
    if h > 1 && p.kappa > 0.0 {
        // kappa (gamma - gamma_h) / (gamma gamma_h)
        let ln_extra = p.ln_kappa() + p.ln_gamma_gap(1, h) - p.gamma.ln() - p.ln_gamma_n(h);
        acc.add(ln_graft + wk + ln_extra);
    }
    let it = p.iterate(h)?;
    let ln_z = |kp: u64| {
        it.ln_gamma_n_minus_kappa + it.ln_gamma_n_minus_one - (kp + 1) as f64 * it.ln_gamma_n
    };
    let series = sum_log_series(
        1,
        |kp| w(k + kp) + ln_z(kp),
        RESTRICTED_SERIES_TOL,
        SERIES_MAX_TERMS,
    )
    .map_err(|e| match e {
        GwError::Certification(msg) => {
            GwError::Certification(format!("restricted-law series at k = {k}: {msg}"))
        }
        other => other,
    })?;
    acc.add(ln_graft + series.log_sum);
    Ok(acc.value())
}

/// `ln P(r_{h,k0}(tau^theta) = t)`.
pub fn poisson_law_restricted(
    p: &OffspringParams,
    theta: f64,
    h: usize,
    k0: u32,
    t: &OrderedTree,
) -> Result<f64> {
    check_restricted_shape(t, h, k0)?;
    if t.root_degree() < k0 {
        return poisson_tree_law(p, theta, h, t);
    }
    let mut seq = ScriptHSeq::new(p, h as u64, theta)?;
    let k = t.generation_size(h) as u64;
    Ok(gw_tree_log_prob(p, t, h)? + restricted_weight(p, h as u64, k, |kk| seq.get(kk))?)
}

/// `ln[(1-q)/(eta q) gamma_h^k]`, the condensation weight of an `r_{h,k0}` view with `z_h = k`.
pub fn condensation_weight(p: &OffspringParams, h: u64, k: u64) -> Result<f64> {
    require_n(h)?;
    Ok((1.0 - p.q).ln() - p.eta.ln() - p.q.ln() + ln_pow(p.ln_gamma_n(h), k))
}

fn check_condensation_shape(t: &OrderedTree, h: usize, k0: u32) -> Result<()> {
    if h == 0 || k0 == 0 || t.height() > h || t.root_degree() != k0 {
        return Err(GwError::Precondition(format!(
            "condensation views need root degree exactly k0 = {k0} and height <= h = {h}, got {t}"
        )));
    }
    Ok(())
}

/// `ln P(r_{h,k0}(tau^inf) = t)` in martingale-weight form.
///
/// Accepts trees of height `<= h`: the first `k0` subtrees of the root may
/// all die out before generation `h`.
pub fn condensation_tree_law(
    p: &OffspringParams,
    h: usize,
    k0: u32,
    t: &OrderedTree,
) -> Result<f64> {
    check_condensation_shape(t, h, k0)?;
    Ok(gw_tree_log_prob(p, t, h)? + condensation_weight(p, h as u64, t.generation_size(h) as u64)?)
}

/// `ln P(r_{h,k0}(tau^inf) = t)` as the product of `p~_{|u|}(k_u)` over non-root nodes of depth `< h`.
pub fn condensation_product_law(
    p: &OffspringParams,
    h: usize,
    k0: u32,
    t: &OrderedTree,
) -> Result<f64> {
    check_condensation_shape(t, h, k0)?;
    let mut s = 0.0;
    for (d, level) in t.levels().iter().enumerate().take(h).skip(1) {
        for &deg in level {
            s += p.condensation_offspring(d as u64, deg as u64)?;
        }
    }
    Ok(s)
}

/// Mass of the `p~`-product law on trees with root degree `k0`, height `<= h`
/// and all other degrees `<= degree_cap`.
pub fn condensation_product_mass(
    p: &OffspringParams,
    h: usize,
    k0: u32,
    degree_cap: u32,
) -> Result<f64> {
    require_n(h as u64)?;
    // mass of a subtree rooted at depth d, truncated at h
    let mut ln_sub = 0.0;
    for d in (1..h).rev() {
        let mut acc = LogAccumulator::new();
        for k in 0..=degree_cap as u64 {
            acc.add(p.condensation_offspring(d as u64, k)? + ln_pow(ln_sub, k));
        }
        ln_sub = acc.value();
    }
    Ok((k0 as f64 * ln_sub).exp())
}

/// The five tree-law families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum LawFamily {
    /// The unconditioned GW tree.
    Gw,
    /// The GW tree conditioned on `Z_n = a`.
    Conditioned {
        n: u64,
        a: u64,
    },
    Kesten,
    Poisson {
        theta: f64,
    },
    Condensation,
}

impl LawFamily {
    pub fn name(&self) -> &'static str {
        match self {
            LawFamily::Gw => "gw",
            LawFamily::Conditioned { .. } => "conditioned",
            LawFamily::Kesten => "kesten",
            LawFamily::Poisson { .. } => "poisson",
            LawFamily::Condensation => "condensation",
        }
    }
}

/// A fully specified law of `r_h(T)` (or `r_{h,k0}(T)` when `k0` is set).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeLaw {
    pub params: OffspringParams,
    pub family: LawFamily,
    pub h: usize,
    pub k0: Option<u32>,
}

impl TreeLaw {
    pub fn new(
        params: OffspringParams,
        family: LawFamily,
        h: usize,
        k0: Option<u32>,
    ) -> Result<Self> {
        if h == 0 {
            return Err(GwError::Precondition(
                "truncation height must be >= 1".into(),
            ));
        }
        if k0 == Some(0) {
            return Err(GwError::Precondition("root cap k0 must be >= 1".into()));
        }
        match family {
            LawFamily::Gw => {}
            LawFamily::Conditioned { n, a } => {
                if a == 0 || n < h as u64 || (k0.is_some() && n == h as u64) {
                    return Err(GwError::Precondition(format!(
                        "conditioned law needs a >= 1 and n >= h (n > h with a root cap), got n={n}, a={a}, h={h}"
                    )));
                }
            }
            LawFamily::Kesten => require_kesten(&params)?,
            LawFamily::Poisson { theta } => {
                if !(theta > 0.0 && theta.is_finite()) {
                    return Err(GwError::InvalidParameter(format!(
                        "theta must be in (0, inf), got {theta}"
                    )));
                }
            }
            LawFamily::Condensation => {
                if k0.is_none() {
                    return Err(GwError::UnsupportedRegime(
                        "the condensation tree has infinite root degree; only r_(h,k0) views exist"
                            .into(),
                    ));
                }
            }
        }
        Ok(TreeLaw {
            params,
            family,
            h,
            k0,
        })
    }

    pub fn meta(&self, degree_cap: u32) -> LawMeta {
        LawMeta {
            height: self.h,
            k0: self.k0,
            degree_cap,
        }
    }

    /// Log-weights `W(j, k)` for `k = 0..=k_max` at root degree `j`.
    pub fn weights(&self, root_degree: u32, k_max: u64) -> Result<Vec<f64>> {
        let p = &self.params;
        let h = self.h as u64;
        let restricted = match self.k0 {
            Some(k0) if root_degree > k0 => return Ok(vec![LOG_ZERO; k_max as usize + 1]),
            Some(k0) => root_degree == k0,
            None => false,
        };
        let ks = 0..=k_max;
        match (self.family, restricted) {
            (LawFamily::Gw, false) => Ok(vec![0.0; k_max as usize + 1]),
            (LawFamily::Gw, true) => Ok(vec![-p.q.ln(); k_max as usize + 1]),
            (LawFamily::Conditioned { n, a }, false) => {
                ks.map(|k| conditioned_ratio(p, n, h, k, a)).collect()
            }
            (LawFamily::Conditioned { n, a }, true) => ks
                .map(|k| conditioned_restricted_weight(p, n, h, k, a))
                .collect(),
            (LawFamily::Kesten, false) => ks.map(|k| kesten_weight(p, h, k)).collect(),
            (LawFamily::Kesten, true) => {
                let e = p.extinction_params();
                let (lc, lm) = (e.frak_c.ln(), e.frak_m.ln());
                let w = |k: u64| {
                    if k == 0 {
                        LOG_ZERO
                    } else {
                        (k as f64).ln() + ln_pow(lc, k - 1) - h as f64 * lm
                    }
                };
                ks.map(|k| restricted_weight(p, h, k, w)).collect()
            }
            (LawFamily::Poisson { theta }, false) => {
                let mut seq = ScriptHSeq::new(p, h, theta)?;
                Ok(ks.map(|k| seq.get(k)).collect())
            }
            (LawFamily::Poisson { theta }, true) => {
                let mut seq = ScriptHSeq::new(p, h, theta)?;
                ks.map(|k| restricted_weight(p, h, k, |kk| seq.get(kk)))
                    .collect()
            }
            (LawFamily::Condensation, false) => Ok(vec![LOG_ZERO; k_max as usize + 1]),
            (LawFamily::Condensation, true) => ks.map(|k| condensation_weight(p, h, k)).collect(),
        }
    }

    /// `ln P(view(T) = t)` for this law.
    pub fn log_prob(&self, t: &OrderedTree) -> Result<f64> {
        if let Some(k0) = self.k0 {
            check_restricted_shape(t, self.h, k0)?;
        }
        let base = gw_tree_log_prob(&self.params, t, self.h)?;
        let k = t.generation_size(self.h) as u64;
        let w = self.weights(t.root_degree(), k)?;
        Ok(base + w[k as usize])
    }

    /// Enumerated law over all trees with degrees `<= degree_cap`; the
    /// residual is the uncovered mass.
    pub fn truncated_law(&self, degree_cap: u32) -> Result<TruncatedLaw> {
        let root_max = self.k0.map_or(degree_cap, |k| k.min(degree_cap));
        let mut entries = Vec::new();
        for j in 0..=root_max {
            let spec = EnumerationSpec::new(self.h, degree_cap).with_root_degree(j);
            let mut trees = Vec::new();
            for_each_tree(spec, |code| {
                trees.push(OrderedTree::from_preorder(code).expect("valid code"))
            })?;
            let k_max = trees
                .iter()
                .map(|t| t.generation_size(self.h))
                .max()
                .unwrap_or(0) as u64;
            let w = self.weights(j, k_max)?;
            for t in trees {
                let lw = w[t.generation_size(self.h)];
                if lw == LOG_ZERO {
                    continue;
                }
                let lp = gw_tree_log_prob(&self.params, &t, self.h)? + lw;
                entries.push((t, lp));
            }
        }
        TruncatedLaw::from_entries(self.meta(degree_cap), entries)
    }
}

/// `ln` of the total GW mass of trees with root degree `j`, all degrees
/// `<= degree_cap`, height `<= h`, and `z_h = k`, as a table `[j][k]`.
#[derive(Debug, Clone)]
pub struct CappedProfile {
    pub h: usize,
    pub degree_cap: u32,
    pub table: Vec<Vec<f64>>,
}

/// Upper bound on the convolution work of [`capped_profile`].
pub const PROFILE_WORK_CAP: f64 = 4e9;

fn log_convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![LOG_ZERO; a.len() + b.len() - 1];
    for (s, slot) in out.iter_mut().enumerate() {
        let lo = s.saturating_sub(b.len() - 1);
        let hi = s.min(a.len() - 1);
        let mut acc = LogAccumulator::new();
        for i in lo..=hi {
            acc.add(a[i] + b[s - i]);
        }
        *slot = acc.value();
    }
    out
}

/// Generation-size profile at height `h` of the degree-capped GW law, for root degrees `0..=root_max`.
pub fn capped_profile(
    p: &OffspringParams,
    h: usize,
    degree_cap: u32,
    root_max: u32,
) -> Result<CappedProfile> {
    if h == 0 || degree_cap == 0 {
        return Err(GwError::Precondition(
            "profile needs h >= 1 and degree cap >= 1".into(),
        ));
    }
    let d = degree_cap as usize;
    let root_max = root_max.min(degree_cap) as usize;
    let lp: Vec<f64> = (0..=d as u64).map(|k| p.pmf(k)).collect();
    // largest generation size whose offspring we must convolve
    let z_need = if h >= 2 {
        root_max * d.pow(h as u32 - 2)
    } else {
        0
    };
    let work = (z_need as f64).powi(2) * (d as f64).powi(2) / 2.0;
    if work > PROFILE_WORK_CAP {
        return Err(GwError::Resource(format!(
            "capped profile at h = {h}, degree cap = {degree_cap} is too large; lower the degree cap"
        )));
    }
    let mut powers: Vec<Vec<f64>> = vec![vec![0.0]];
    for z in 1..=z_need {
        let next = log_convolve(&powers[z - 1], &lp);
        powers.push(next);
    }
    let mut table = Vec::with_capacity(root_max + 1);
    for j in 0..=root_max {
        let mut dist = vec![LOG_ZERO; j + 1];
        dist[j] = lp[j];
        for _ in 1..h {
            let len = (dist.len() - 1) * d + 1;
            let mut next = vec![LogAccumulator::new(); len];
            for (z, &lz) in dist.iter().enumerate() {
                if lz == LOG_ZERO {
                    continue;
                }
                for (b, &lb) in powers[z].iter().enumerate() {
                    next[b].add(lz + lb);
                }
            }
            dist = next.iter().map(LogAccumulator::value).collect();
        }
        table.push(dist);
    }
    Ok(CappedProfile {
        h,
        degree_cap,
        table,
    })
}

/// Aggregated total-variation comparison of two laws over degree-capped trees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TvReport {
    /// `1/2 sum |P1(t) - P2(t)|` over trees with degrees `<= degree_cap`.
    pub tv_exact: f64,
    /// `1/2 (residual_1 + residual_2)`.
    pub tv_residual_bound: f64,
    pub mass_1: f64,
    pub mass_2: f64,
}

/// Captured mass `sum_t P(t)` of a law over trees with degrees `<= degree_cap`.
pub fn capped_mass(law: &TreeLaw, degree_cap: u32) -> Result<f64> {
    let root_max = law.k0.map_or(degree_cap, |k| k.min(degree_cap));
    let prof = capped_profile(&law.params, law.h, degree_cap, root_max)?;
    let mut acc = LogAccumulator::new();
    for (j, row) in prof.table.iter().enumerate() {
        let w = law.weights(j as u32, row.len() as u64 - 1)?;
        for (lz, lw) in row.iter().zip(&w) {
            acc.add(lz + lw);
        }
    }
    Ok(acc.value().exp())
}

/// Total variation between two laws of the same view, aggregated by `(root degree, z_h)`.
pub fn aggregated_tv(l1: &TreeLaw, l2: &TreeLaw, degree_cap: u32) -> Result<TvReport> {
    if l1.h != l2.h || l1.k0 != l2.k0 || l1.params != l2.params {
        return Err(GwError::Metadata(
            "laws differ in height, root cap or offspring parameters".into(),
        ));
    }
    let root_max = l1.k0.map_or(degree_cap, |k| k.min(degree_cap));
    let prof = capped_profile(&l1.params, l1.h, degree_cap, root_max)?;
    let (mut tv, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for (j, row) in prof.table.iter().enumerate() {
        let k_max = row.len() as u64 - 1;
        let w1 = l1.weights(j as u32, k_max)?;
        let w2 = l2.weights(j as u32, k_max)?;
        for k in 0..row.len() {
            let (a, b) = ((row[k] + w1[k]).exp(), (row[k] + w2[k]).exp());
            tv += (a - b).abs();
            m1 += a;
            m2 += b;
        }
    }
    let res = (1.0 - m1).max(0.0) + (1.0 - m2).max(0.0);
    Ok(TvReport {
        tv_exact: 0.5 * tv,
        tv_residual_bound: 0.5 * res,
        mass_1: m1,
        mass_2: m2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(eta: f64, q: f64) -> OffspringParams {
        OffspringParams::new(eta, q).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn z_pmf_examples() {
        let c = p(0.5, 0.5);
        assert!(close(z_pmf(&c, 2, 1).unwrap().exp(), 1.0 / 9.0, 1e-15));
        // two-generation oracle: sum_k p(k) P_k(Z_1 = 1) = sum_k p(k) k p(0)^{k-1} p(1)
        let oracle: f64 = (1..200u64)
            .map(|k| c.pmf(k).exp() * k as f64 * c.pmf(0).exp().powi(k as i32 - 1) * c.pmf(1).exp())
            .sum();
        assert!(close(z_pmf(&c, 2, 1).unwrap().exp(), oracle, 1e-14));
        assert_eq!(z_pmf(&p(1.0, 0.5), 1, 0).unwrap(), LOG_ZERO);
        let s: f64 = (0..=200).map(|a| z_pmf(&c, 1, a).unwrap().exp()).sum();
        assert!(close(s, 1.0, 1e-12));
        assert!(z_pmf(&c, 0, 1).is_err());
    }

    #[test]
    fn forest_examples() {
        let c = p(0.5, 0.5);
        assert!(close(forest_z_pmf(&c, 2, 1, 1).unwrap().exp(), 0.25, 1e-15));
        for n in 1..5 {
            for a in 0..20 {
                assert!(close(
                    forest_z_pmf(&c, 1, n, a).unwrap(),
                    z_pmf(&c, n, a).unwrap(),
                    1e-12
                ));
            }
        }
        assert_eq!(forest_z_pmf(&c, 3, 0, 3).unwrap(), 0.0);
        assert_eq!(forest_z_pmf(&c, 3, 0, 2).unwrap(), LOG_ZERO);
        assert_eq!(forest_z_pmf(&c, 0, 4, 0).unwrap(), 0.0);
        // a < k is allowed
        let s: f64 = (0..400)
            .map(|a| forest_z_pmf(&c, 5, 2, a).unwrap().exp())
            .sum();
        assert!(close(s, 1.0, 1e-12));
    }

    #[test]
    fn gw_tree_examples() {
        let c = p(0.5, 0.5);
        let leaf = OrderedTree::root();
        assert!(close(
            gw_tree_log_prob(&c, &leaf, 1).unwrap().exp(),
            0.5,
            1e-15
        ));
        let cherry: OrderedTree = "2,0,0".parse().unwrap();
        assert!(close(
            gw_tree_log_prob(&c, &cherry, 1).unwrap().exp(),
            0.125,
            1e-15
        ));
        assert!(gw_tree_log_prob(&c, &"1,1,0".parse().unwrap(), 1).is_err());
    }

    #[test]
    fn ratio_kronecker_and_limit() {
        let c = p(0.5, 0.5);
        let r = conditioned_ratio(&c, 3, 3, 2, 2).unwrap();
        assert!(close(r, -z_pmf(&c, 3, 2).unwrap(), 1e-15));
        assert_eq!(conditioned_ratio(&c, 3, 3, 1, 2).unwrap(), LOG_ZERO);
        // k c^{k-1} m^{-h} = 2 in the critical case
        let r = conditioned_ratio(&c, 4000, 1, 2, 1).unwrap().exp();
        assert!(close(r, 2.0, 1e-2), "{r}");
        let r40 = conditioned_ratio(&c, 40, 1, 2, 1).unwrap().exp();
        assert!((r40 - 2.0).abs() < 0.1);
    }

    #[test]
    fn ratio_matches_quotient() {
        for &(eta, q) in &[(0.5, 0.5), (0.4, 0.5), (0.6, 0.3), (1.0, 0.4)] {
            let pp = p(eta, q);
            for n in 2..=12u64 {
                for h in 1..n {
                    for k in 1..=5 {
                        for a in [1u64, 2, 7, 30, 60] {
                            let fused = conditioned_ratio(&pp, n, h, k, a).unwrap();
                            let direct =
                                forest_z_pmf(&pp, k, n - h, a).unwrap() - z_pmf(&pp, n, a).unwrap();
                            if direct == LOG_ZERO {
                                assert_eq!(fused, LOG_ZERO);
                            } else {
                                assert!(
                                    close(fused, direct, 1e-9),
                                    "eta={eta} n={n} h={h} k={k} a={a}"
                                );
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn binomial_tail_both_sides() {
        // compare with an explicit sum
        for &(trials, prob) in &[(10u64, 0.3f64), (50, 0.9), (200, 0.02), (5, 0.5)] {
            for i in 0..=trials + 1 {
                let explicit: f64 = (i..=trials)
                    .map(|j| {
                        (ln_binomial(trials, j)
                            + j as f64 * prob.ln()
                            + (trials - j) as f64 * (1.0 - prob).ln())
                        .exp()
                    })
                    .sum();
                let got = ln_binomial_upper_tail(trials, prob.ln(), (1.0 - prob).ln(), i)
                    .unwrap()
                    .exp();
                assert!(
                    (got - explicit).abs() <= 1e-12 * explicit.max(1e-300) + 1e-300,
                    "{trials} {prob} {i}"
                );
            }
        }
    }

    #[test]
    fn script_h_critical_example() {
        let c = p(0.5, 0.5);
        for &theta in &[0.1, 1.0, 3.0] {
            let v = script_h(&c, 1, 1, theta).unwrap().value;
            assert!(close(v, -theta, 1e-14));
        }
    }

    #[test]
    fn condensation_root_view_is_deterministic() {
        let c = p(0.5, 0.5);
        for k0 in 1..6u32 {
            let t = OrderedTree::from_levels(vec![vec![k0], vec![0; k0 as usize]]).unwrap();
            assert!(close(
                condensation_tree_law(&c, 1, k0, &t).unwrap(),
                0.0,
                1e-14
            ));
        }
        assert!(condensation_tree_law(&c, 1, 2, &"1,0".parse().unwrap()).is_err());
    }

    #[test]
    fn profile_matches_enumeration() {
        let pp = p(0.4, 0.5);
        let prof = capped_profile(&pp, 2, 3, 3).unwrap();
        let mut table = vec![vec![0.0; 10]; 4];
        for t in crate::treekit::enumerate_trees(EnumerationSpec::new(2, 3)).unwrap() {
            table[t.root_degree() as usize][t.generation_size(2)] +=
                gw_tree_log_prob(&pp, &t, 2).unwrap().exp();
        }
        for j in 0..4 {
            for k in 0..10 {
                let got = prof.table[j].get(k).map_or(0.0, |x| x.exp());
                assert!(close(got, table[j][k], 1e-14), "j={j} k={k}");
            }
        }
    }
}
