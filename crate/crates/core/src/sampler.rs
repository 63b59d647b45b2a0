//! Exact random generation of truncated trees.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{GwError, Result};
use crate::exactlaw::forest_z_pmf;
use crate::logspace::{ln_factorial, LOG_ZERO};
use crate::offspring::{Geometric, OffspringParams};
use crate::treekit::OrderedTree;

/// Identifier of the generator behind [`Rng`].
pub const RNG_ALGORITHM: &str = "chacha8 (rand_chacha 0.3), seed expanded by seed_from_u64";

/// Largest number of nodes a single sampled tree may hold.
pub const NODE_CAP: usize = 20_000_000;

/// Release builds check the invariants of one typed tree in this many.
pub const AUDIT_PERIOD: u64 = 100;

static AUDIT_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Checks type invariants on every sample in debug builds and on a
/// [`AUDIT_PERIOD`] stream in release builds.
fn audit(t: TypedTree, kind: TreeKind, h_max: usize) -> Result<TypedTree> {
    if cfg!(debug_assertions)
        || AUDIT_COUNTER
            .fetch_add(1, Ordering::Relaxed)
            .is_multiple_of(AUDIT_PERIOD)
    {
        t.check_invariants(kind, h_max)?;
    }
    Ok(t)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the `index`-th child stream of `parent`.
pub fn split_seed(parent: u64, index: u64) -> u64 {
    splitmix64(parent ^ splitmix64(index.wrapping_add(0xD1B5_4A32_D192_ED03)))
}

/// Seedable random source; identical seeds give identical streams everywhere.
#[derive(Debug, Clone)]
pub struct Rng {
    inner: ChaCha8Rng,
    seed: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            inner: ChaCha8Rng::seed_from_u64(seed),
            seed,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream for task `index`, derived from this stream's seed.
    pub fn child(&self, index: u64) -> Rng {
        Rng::new(split_seed(self.seed, index))
    }

    /// Uniform in `(0, 1]`.
    pub fn open_unit(&mut self) -> f64 {
        1.0 - self.inner.gen::<f64>()
    }

    /// Uniform in `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: u64) -> u64 {
        self.inner.gen_range(0..n)
    }
}

impl RngCore for Rng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }
    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }
    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.inner.try_fill_bytes(dest)
    }
}

/// Number of failures before the first success, success probability `q`.
fn failures_before_success(rng: &mut Rng, q: f64) -> u64 {
    if q >= 1.0 {
        return 0;
    }
    let v = (rng.open_unit().ln() / (-q).ln_1p()).floor();
    if v >= u64::MAX as f64 {
        u64::MAX
    } else {
        v as u64
    }
}

/// Draw from `G(eta, q)` by inversion.
pub fn sample_geometric(rng: &mut Rng, law: &Geometric) -> u64 {
    if rng.unit() >= law.eta {
        return 0;
    }
    1 + failures_before_success(rng, law.q)
}

/// Draw from the size-biased law `p_[s]` of a geometric law with success parameter `r`:
/// `s` plus the failures before the `(s+1)`-th success.
pub fn sample_size_biased(rng: &mut Rng, s: u64, r: f64) -> u64 {
    let mut k = s;
    for _ in 0..=s {
        k += failures_before_success(rng, r);
    }
    k
}

/// Exact Poisson draw by inversion; from the mode outward when the mean is large.
pub fn sample_poisson(rng: &mut Rng, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    let u = rng.unit();
    if mean < 30.0 {
        let mut k = 0u64;
        let mut pk = (-mean).exp();
        let mut cum = pk;
        while u >= cum {
            k += 1;
            pk *= mean / k as f64;
            if pk == 0.0 {
                break;
            }
            cum += pk;
        }
        return k;
    }
    // Visit the support in the order m, m+1, m-1, m+2, m-2, ... so that the
    // scan length is O(sqrt(mean)); any fixed order keeps inversion exact.
    let m = mean.floor() as u64;
    let pm = (m as f64 * mean.ln() - mean - ln_factorial(m)).exp();
    let mut cum = pm;
    if u < cum {
        return m;
    }
    let (mut up, mut p_up) = (m, pm);
    let (mut down, mut p_down) = (m, pm);
    loop {
        let mut progressed = false;
        p_up *= mean / (up + 1) as f64;
        up += 1;
        if p_up > 0.0 {
            progressed = true;
            cum += p_up;
            if u < cum {
                return up;
            }
        }
        if down > 0 {
            p_down *= down as f64 / mean;
            down -= 1;
            if p_down > 0.0 {
                progressed = true;
                cum += p_down;
                if u < cum {
                    return down;
                }
            }
        }
        if !progressed {
            // leftover mass below double rounding
            return m;
        }
    }
}

/// Uniform `k`-subset of `0..n` in increasing order (selection sampling).
pub fn sample_subset(rng: &mut Rng, n: u64, k: u64) -> Vec<u64> {
    let mut out = Vec::with_capacity(k as usize);
    let mut need = k;
    for i in 0..n {
        if need == 0 {
            break;
        }
        if rng.below(n - i) < need {
            out.push(i);
            need -= 1;
        }
    }
    out
}

/// Uniform composition of `total` into `parts` positive integers.
pub fn sample_positive_composition(rng: &mut Rng, total: u64, parts: u64) -> Vec<u64> {
    assert!(
        parts >= 1 && total >= parts,
        "positive composition needs total >= parts >= 1"
    );
    let bars = sample_subset(rng, total - 1, parts - 1);
    let mut out = Vec::with_capacity(parts as usize);
    let mut prev = 0u64;
    for b in bars {
        out.push(b + 1 - prev);
        prev = b + 1;
    }
    out.push(total - prev);
    out
}

/// Which two-type construction a [`TypedTree`] comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TreeKind {
    Kesten,
    Poisson,
    Condensation,
}

/// A tree with a survivor/extinction type per node.
#[derive(Debug, Clone, PartialEq)]
pub struct TypedTree {
    pub tree: OrderedTree,
    /// `survivors[d][j]` is the type of the `j`-th node of generation `d`.
    pub survivors: Vec<Vec<bool>>,
}

impl TypedTree {
    /// `#S_d`.
    pub fn survivor_count(&self, d: usize) -> usize {
        self.survivors
            .get(d)
            .map_or(0, |l| l.iter().filter(|&&s| s).count())
    }

    /// Checks the structural invariants of the construction it came from, up to `h_max`.
    pub fn check_invariants(&self, kind: TreeKind, h_max: usize) -> Result<()> {
        let levels = self.tree.levels();
        let bad = |msg: String| {
            Err(GwError::Precondition(format!(
                "typed tree invariant: {msg}"
            )))
        };
        if self.survivors.len() != levels.len()
            || self
                .survivors
                .iter()
                .zip(levels)
                .any(|(s, l)| s.len() != l.len())
        {
            return bad("type flags do not match the tree shape".into());
        }
        if !self.survivors[0][0] {
            return bad("root is not a survivor".into());
        }
        for d in 0..levels.len().saturating_sub(1) {
            let mut child = 0usize;
            for (j, &deg) in levels[d].iter().enumerate() {
                let kids = &self.survivors[d + 1][child..child + deg as usize];
                let s_kids = kids.iter().filter(|&&s| s).count();
                if !self.survivors[d][j] && s_kids > 0 {
                    return bad(format!(
                        "survivor at depth {} has an extinction parent",
                        d + 1
                    ));
                }
                let exempt_root = kind == TreeKind::Condensation && d == 0;
                if self.survivors[d][j] && d < h_max && s_kids == 0 && !exempt_root {
                    return bad(format!("survivor at depth {d} has no survivor child"));
                }
                child += deg as usize;
            }
        }
        if kind == TreeKind::Kesten {
            for d in 0..=h_max.min(levels.len() - 1) {
                if self.survivor_count(d) != 1 {
                    return bad(format!(
                        "Kesten tree has {} survivors at depth {d}",
                        self.survivor_count(d)
                    ));
                }
            }
        }
        Ok(())
    }

    /// Tree line plus a tab and the type flags (`1` survivor, `0` extinction) in depth-first order.
    pub fn to_line(&self) -> String {
        let flags: Vec<&str> = self
            .tree
            .preorder_positions()
            .into_iter()
            .map(|(d, j)| if self.survivors[d][j] { "1" } else { "0" })
            .collect();
        format!("{}\t{}", self.tree, flags.join(","))
    }
}

/// Level-by-level tree construction with a node budget.
struct Builder {
    levels: Vec<Vec<u32>>,
    types: Vec<Vec<bool>>,
    nodes: usize,
}

impl Builder {
    fn new() -> Self {
        Builder {
            levels: vec![Vec::new()],
            types: vec![vec![true]],
            nodes: 1,
        }
    }

    fn push_level(&mut self, next_types: Vec<bool>) -> Result<()> {
        self.nodes += next_types.len();
        if self.nodes > NODE_CAP {
            return Err(GwError::Resource(format!(
                "sampled tree exceeds {NODE_CAP} nodes"
            )));
        }
        self.types.push(next_types);
        self.levels.push(Vec::new());
        Ok(())
    }

    fn finish(mut self) -> Result<TypedTree> {
        // last generation is truncated
        let last = self.types.len() - 1;
        self.levels[last] = vec![0; self.types[last].len()];
        while self.types.len() > 1 && self.types.last().is_some_and(Vec::is_empty) {
            self.types.pop();
            self.levels.pop();
        }
        let tree = OrderedTree::from_levels(self.levels)?;
        Ok(TypedTree {
            tree,
            survivors: self.types,
        })
    }
}

/// `r_{h_max}(tau)` for a fresh GW tree.
pub fn sample_gw(p: &OffspringParams, rng: &mut Rng, h_max: usize) -> Result<OrderedTree> {
    let law = p.law();
    let mut b = Builder::new();
    for d in 0..h_max {
        let width = b.types[d].len();
        if width == 0 {
            break;
        }
        let mut next = 0usize;
        for _ in 0..width {
            let k = sample_geometric(rng, &law) as u32;
            b.levels[d].push(k);
            next += k as usize;
        }
        b.push_level(vec![false; next])?;
    }
    Ok(b.finish()?.tree)
}

/// Draws an index by inversion against an exactly known log-normaliser.
///
/// `weight(x)` for `x = 0, 1, ...` must sum to `exp(ln_total)`. The scan
/// stops at the first index whose cumulative mass reaches `u * total`; it
/// fails if the scan has covered all but `1e-12` of the mass without doing so
/// and the weights have become negligible.
fn invert_scan<F>(rng: &mut Rng, ln_total: f64, max_x: Option<u64>, mut weight: F) -> Result<u64>
where
    F: FnMut(u64) -> Result<f64>,
{
    let u = rng.unit();
    let mut cum = 0.0f64;
    let mut x = 0u64;
    let mut last_positive = 0u64;
    loop {
        if let Some(m) = max_x {
            if x > m {
                if cum >= 1.0 - 1e-12 {
                    return Ok(last_positive);
                }
                return Err(GwError::Certification(format!(
                    "bridge support scan covered only {cum} of the kernel mass"
                )));
            }
        }
        let w = weight(x)?;
        if w != LOG_ZERO {
            let pw = (w - ln_total).exp();
            cum += pw;
            last_positive = x;
            if u < cum {
                return Ok(x);
            }
            if cum >= 1.0 - 1e-12 && pw < 1e-18 {
                return Ok(x);
            }
        }
        x += 1;
        if x > 100_000_000 {
            return Err(GwError::Certification(
                "bridge support scan did not terminate".into(),
            ));
        }
    }
}

/// `r_{h_max}(tau_n)` for the tree conditioned on `Z_n = a`, by an exact generation-size bridge.
pub fn sample_conditioned(
    p: &OffspringParams,
    n: u64,
    a: u64,
    rng: &mut Rng,
    h_max: usize,
) -> Result<OrderedTree> {
    if a == 0 || h_max == 0 || h_max as u64 > n {
        return Err(GwError::Precondition(format!(
            "conditioned sampling needs a >= 1 and 1 <= h_max <= n (n={n}, a={a}, h_max={h_max})"
        )));
    }
    let mut b = Builder::new();
    let mut z = 1u64;
    for m in 0..h_max as u64 {
        // Z_{m+1} given Z_m = z and Z_n = a
        let rest = n - m - 1;
        let ln_total = forest_z_pmf(p, z, n - m, a)?;
        let next = if rest == 0 {
            a
        } else {
            invert_scan(rng, ln_total, None, |x| {
                let w1 = forest_z_pmf(p, z, 1, x)?;
                if w1 == LOG_ZERO {
                    return Ok(LOG_ZERO);
                }
                Ok(w1 + forest_z_pmf(p, x, rest, a)?)
            })?
        };
        // split `next` children among the z parents
        let mut remaining = next;
        for i in 0..z {
            let parents_left = z - i;
            let k = if parents_left == 1 {
                remaining
            } else {
                let ln_tot = forest_z_pmf(p, parents_left, 1, remaining)?;
                let rem = remaining;
                invert_scan(rng, ln_tot, Some(rem), |x| {
                    Ok(p.pmf(x) + forest_z_pmf(p, parents_left - 1, 1, rem - x)?)
                })?
            };
            b.levels[m as usize].push(k as u32);
            remaining -= k;
        }
        b.push_level(vec![false; next as usize])?;
        z = next;
    }
    Ok(b.finish()?.tree)
}

/// `r_{h_max}` of the Kesten tree, with the spine marked as survivors.
pub fn sample_kesten(p: &OffspringParams, rng: &mut Rng, h_max: usize) -> Result<TypedTree> {
    if p.eta >= 1.0 {
        return Err(GwError::UnsupportedRegime(
            "the Kesten tree needs eta < 1".into(),
        ));
    }
    let frak_p = p.extinction_params().frak_p;
    let r = frak_p.q;
    let mut b = Builder::new();
    for d in 0..h_max {
        let mut next = Vec::new();
        for j in 0..b.types[d].len() {
            if b.types[d][j] {
                let k = sample_size_biased(rng, 1, r);
                let pos = rng.below(k);
                next.extend((0..k).map(|i| i == pos));
                b.levels[d].push(k as u32);
            } else {
                let k = sample_geometric(rng, &frak_p);
                next.extend(std::iter::repeat_n(false, k as usize));
                b.levels[d].push(k as u32);
            }
        }
        b.push_level(next)?;
    }
    audit(b.finish()?, TreeKind::Kesten, h_max)
}

/// `r_{h_max}` of the Poisson-regime tree, with survivor types.
pub fn sample_poisson_tree(
    p: &OffspringParams,
    theta: f64,
    rng: &mut Rng,
    h_max: usize,
) -> Result<TypedTree> {
    if !(theta > 0.0 && theta.is_finite()) {
        return Err(GwError::InvalidParameter(format!(
            "theta must be in (0, inf), got {theta}"
        )));
    }
    let frak_p = p.extinction_params().frak_p;
    let r = p.head_probability();
    let mut b = Builder::new();
    for d in 0..h_max {
        let s_now = b.types[d].iter().filter(|&&s| s).count() as u64;
        let delta = sample_poisson(rng, theta * p.zeta(d as u64)?);
        let mut shares = sample_positive_composition(rng, s_now + delta, s_now).into_iter();
        let mut next = Vec::new();
        for j in 0..b.types[d].len() {
            if b.types[d][j] {
                let s = shares.next().expect("one share per survivor");
                let k = sample_size_biased(rng, s, r);
                let chosen = sample_subset(rng, k, s);
                let mut flags = vec![false; k as usize];
                for c in chosen {
                    flags[c as usize] = true;
                }
                next.extend(flags);
                b.levels[d].push(k as u32);
            } else {
                let k = sample_geometric(rng, &frak_p);
                next.extend(std::iter::repeat_n(false, k as usize));
                b.levels[d].push(k as u32);
            }
        }
        b.push_level(next)?;
    }
    audit(b.finish()?, TreeKind::Poisson, h_max)
}

/// Which construction of the condensation tree to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CondensationGenerator {
    /// Inhomogeneous GW: depth-`m` nodes reproduce by `p~_m`.
    Inhomogeneous,
    /// Two-type tree: survivors get `G(1, nu_h)` survivor children interleaved by coin flips.
    TwoType,
}

/// `r_{h_max, k0_cap}` of the condensation tree.
///
/// The inhomogeneous generator carries no types; every node is flagged as
/// an extinction node except the root.
pub fn sample_condensation(
    p: &OffspringParams,
    rng: &mut Rng,
    h_max: usize,
    k0_cap: u32,
    generator: CondensationGenerator,
) -> Result<TypedTree> {
    if k0_cap == 0 {
        return Err(GwError::Precondition("k0_cap must be >= 1".into()));
    }
    let mut b = Builder::new();
    match generator {
        CondensationGenerator::Inhomogeneous => {
            for d in 0..h_max {
                let width = b.types[d].len();
                if width == 0 {
                    break;
                }
                let mut next = 0usize;
                if d == 0 {
                    b.levels[0].push(k0_cap);
                    next = k0_cap as usize;
                } else {
                    let law = p.condensation_law(d as u64)?;
                    for _ in 0..width {
                        let k = sample_geometric(rng, &law) as u32;
                        b.levels[d].push(k);
                        next += k as usize;
                    }
                }
                b.push_level(vec![false; next])?;
            }
        }
        CondensationGenerator::TwoType => {
            let frak_p = p.extinction_params().frak_p;
            let r = p.head_probability();
            for d in 0..h_max {
                let mut next = Vec::new();
                for j in 0..b.types[d].len() {
                    if d == 0 {
                        next.extend((0..k0_cap).map(|_| rng.unit() < r));
                        b.levels[0].push(k0_cap);
                    } else if b.types[d][j] {
                        let s_law = p.survivor_count_law(d as u64)?;
                        let s = sample_geometric(rng, &s_law);
                        let k = sample_size_biased(rng, s, r);
                        let chosen = sample_subset(rng, k, s);
                        let mut flags = vec![false; k as usize];
                        for c in chosen {
                            flags[c as usize] = true;
                        }
                        next.extend(flags);
                        b.levels[d].push(k as u32);
                    } else {
                        let k = sample_geometric(rng, &frak_p);
                        next.extend(std::iter::repeat_n(false, k as usize));
                        b.levels[d].push(k as u32);
                    }
                }
                b.push_level(next)?;
            }
        }
    }
    let t = b.finish()?;
    match generator {
        CondensationGenerator::TwoType => audit(t, TreeKind::Condensation, h_max),
        CondensationGenerator::Inhomogeneous => Ok(t),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_are_reproducible_and_split() {
        let mut a = Rng::new(7);
        let mut b = Rng::new(7);
        let xs: Vec<u64> = (0..5).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..5).map(|_| b.next_u64()).collect();
        assert_eq!(xs, ys);
        let c0 = Rng::new(7).child(0).next_u64();
        let c1 = Rng::new(7).child(1).next_u64();
        assert_ne!(c0, c1);
        assert_ne!(split_seed(1, 0), split_seed(0, 1));
    }

    #[test]
    fn composition_and_subset_shapes() {
        let mut rng = Rng::new(3);
        for _ in 0..200 {
            let c = sample_positive_composition(&mut rng, 9, 4);
            assert_eq!(c.len(), 4);
            assert_eq!(c.iter().sum::<u64>(), 9);
            assert!(c.iter().all(|&x| x >= 1));
            let s = sample_subset(&mut rng, 10, 3);
            assert_eq!(s.len(), 3);
            assert!(s.windows(2).all(|w| w[0] < w[1]) && s[2] < 10);
        }
        assert_eq!(sample_positive_composition(&mut rng, 3, 1), vec![3]);
        assert_eq!(sample_positive_composition(&mut rng, 3, 3), vec![1, 1, 1]);
    }

    #[test]
    fn poisson_means() {
        let mut rng = Rng::new(11);
        for &mean in &[0.5, 4.0, 29.0, 31.0, 500.0] {
            let n = 20_000;
            let s: f64 = (0..n).map(|_| sample_poisson(&mut rng, mean) as f64).sum();
            let m = s / n as f64;
            assert!(
                (m - mean).abs() < 5.0 * (mean / n as f64).sqrt(),
                "mean {mean}: {m}"
            );
        }
    }

    #[test]
    fn no_leaves_without_extinction() {
        let p = OffspringParams::new(1.0, 0.5).unwrap();
        let mut rng = Rng::new(5);
        for _ in 0..100 {
            let t = sample_gw(&p, &mut rng, 3).unwrap();
            assert_eq!(t.height(), 3);
            for lvl in &t.levels()[..3] {
                assert!(lvl.iter().all(|&d| d >= 1));
            }
        }
    }

    #[test]
    fn conditioned_pins_generation_one() {
        let p = OffspringParams::new(0.5, 0.5).unwrap();
        let mut rng = Rng::new(1);
        for _ in 0..10 {
            let t = sample_conditioned(&p, 1, 3, &mut rng, 1).unwrap();
            assert_eq!(t, "3,0,0,0".parse().unwrap());
        }
        for _ in 0..50 {
            let t = sample_conditioned(&p, 5, 4, &mut rng, 5).unwrap();
            assert_eq!(t.generation_size(5), 4);
        }
    }

    #[test]
    fn typed_invariants_hold() {
        let mut rng = Rng::new(9);
        for &(eta, q) in &[(0.5, 0.5), (0.6, 0.3), (0.3, 0.5)] {
            let p = OffspringParams::new(eta, q).unwrap();
            for _ in 0..200 {
                sample_kesten(&p, &mut rng, 4)
                    .unwrap()
                    .check_invariants(TreeKind::Kesten, 4)
                    .unwrap();
                sample_poisson_tree(&p, 0.7, &mut rng, 3)
                    .unwrap()
                    .check_invariants(TreeKind::Poisson, 3)
                    .unwrap();
                sample_condensation(&p, &mut rng, 3, 2, CondensationGenerator::TwoType)
                    .unwrap()
                    .check_invariants(TreeKind::Condensation, 3)
                    .unwrap();
                let a =
                    sample_condensation(&p, &mut rng, 1, 3, CondensationGenerator::Inhomogeneous)
                        .unwrap();
                assert_eq!(a.tree, "3,0,0,0".parse().unwrap());
            }
        }
    }

    #[test]
    fn typed_line_format() {
        let t = TypedTree {
            tree: "2,1,0,0".parse().unwrap(),
            survivors: vec![vec![true], vec![true, false], vec![true]],
        };
        assert_eq!(t.to_line(), "2,1,0,0\t1,1,1,0");
    }
}
