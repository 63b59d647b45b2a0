//! Finite rooted ordered trees in Neveu coding.
//!
//! A node is a word `u = u1 u2 ... ud` of positive integers; child `i` of `u`
//! is `ui`. A finite tree is stored generation by generation: `levels[d][j]`
//! is the out-degree of the `j`-th node of generation `d` in lexicographic
//! order. The children of the nodes of generation `d` form generation `d+1`
//! in the same order, so the layout is fully determined by the degrees.
//!
//! The canonical code of a tree is its depth-first (preorder) out-degree
//! sequence. Preorder codes are prefix-free, so lexicographic order on codes
//! is a total order and the DFS enumeration below emits trees in that order.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;

use crate::error::{GwError, Result};
use crate::logspace::{log1m_exp, log_sum_exp, LOG_ZERO};

/// Hard limit on the number of trees a single enumeration may produce.
pub const ENUMERATION_CAP: usize = 5_000_000;

/// Depth-first out-degree sequence of a tree.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CanonicalCode(pub Vec<u32>);

impl fmt::Display for CanonicalCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{d}")?;
        }
        Ok(())
    }
}

impl FromStr for CanonicalCode {
    type Err = GwError;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() {
            return Err(GwError::Parse("empty tree code".into()));
        }
        s.split(',')
            .map(|tok| {
                tok.trim()
                    .parse::<u32>()
                    .map_err(|e| GwError::Parse(format!("bad out-degree {tok:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()
            .map(CanonicalCode)
    }
}

/// A finite rooted ordered tree.
#[derive(Debug, Clone)]
pub struct OrderedTree {
    levels: Vec<Vec<u32>>,
    code: Vec<u32>,
}

impl PartialEq for OrderedTree {
    fn eq(&self, other: &Self) -> bool {
        self.code == other.code
    }
}

impl Eq for OrderedTree {}

impl Hash for OrderedTree {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.code.hash(state);
    }
}

impl PartialOrd for OrderedTree {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrderedTree {
    fn cmp(&self, other: &Self) -> Ordering {
        self.code.cmp(&other.code)
    }
}

impl fmt::Display for OrderedTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        CanonicalCode(self.code.clone()).fmt(f)
    }
}

impl FromStr for OrderedTree {
    type Err = GwError;
    fn from_str(s: &str) -> Result<Self> {
        OrderedTree::from_code(&s.parse::<CanonicalCode>()?)
    }
}

/// `(depth, index)` of every node in depth-first order.
fn preorder_positions(levels: &[Vec<u32>]) -> Vec<(usize, usize)> {
    let offsets: Vec<Vec<usize>> = levels
        .iter()
        .map(|lvl| {
            let mut acc = 0usize;
            lvl.iter()
                .map(|&d| {
                    let o = acc;
                    acc += d as usize;
                    o
                })
                .collect()
        })
        .collect();
    let total: usize = levels.iter().map(Vec::len).sum();
    let mut out = Vec::with_capacity(total);
    let mut stack = vec![(0usize, 0usize)];
    while let Some((d, j)) = stack.pop() {
        out.push((d, j));
        let first = offsets[d][j];
        for c in (0..levels[d][j] as usize).rev() {
            stack.push((d + 1, first + c));
        }
    }
    out
}

fn preorder_from_levels(levels: &[Vec<u32>]) -> Vec<u32> {
    preorder_positions(levels)
        .into_iter()
        .map(|(d, j)| levels[d][j])
        .collect()
}

impl OrderedTree {
    /// The single-node tree `{∅}`.
    pub fn root() -> Self {
        OrderedTree {
            levels: vec![vec![0]],
            code: vec![0],
        }
    }

    /// Builds a tree from per-generation out-degrees.
    pub fn from_levels(mut levels: Vec<Vec<u32>>) -> Result<Self> {
        if levels.first().map(Vec::len) != Some(1) {
            return Err(GwError::Parse(
                "generation 0 must hold exactly the root".into(),
            ));
        }
        while levels.len() > 1 && levels.last().is_some_and(Vec::is_empty) {
            levels.pop();
        }
        for d in 0..levels.len() {
            let children: u64 = levels[d].iter().map(|&x| x as u64).sum();
            let next = levels.get(d + 1).map_or(0, Vec::len) as u64;
            if children != next {
                return Err(GwError::Parse(format!(
                    "generation {d} has {children} children but generation {} has {next} nodes",
                    d + 1
                )));
            }
        }
        if levels.iter().any(Vec::is_empty) {
            return Err(GwError::Parse("empty generation inside tree".into()));
        }
        let code = preorder_from_levels(&levels);
        Ok(OrderedTree { levels, code })
    }

    /// Decodes a depth-first out-degree sequence.
    pub fn from_code(code: &CanonicalCode) -> Result<Self> {
        Self::from_preorder(&code.0)
    }

    pub fn from_preorder(seq: &[u32]) -> Result<Self> {
        let mut levels: Vec<Vec<u32>> = Vec::new();
        // pending children per open ancestor, with their depths
        let mut stack: Vec<(usize, u32)> = Vec::new();
        let mut depth = 0usize;
        for (i, &deg) in seq.iter().enumerate() {
            if i > 0 {
                match stack.last_mut() {
                    Some((d, left)) => {
                        depth = *d + 1;
                        *left -= 1;
                        if *left == 0 {
                            stack.pop();
                        }
                    }
                    None => {
                        return Err(GwError::Parse(format!(
                            "trailing entries after position {i}"
                        )));
                    }
                }
            }
            if levels.len() <= depth {
                levels.push(Vec::new());
            }
            levels[depth].push(deg);
            if deg > 0 {
                stack.push((depth, deg));
            }
        }
        if seq.is_empty() || !stack.is_empty() {
            return Err(GwError::Parse("truncated tree code".into()));
        }
        Ok(OrderedTree {
            levels,
            code: seq.to_vec(),
        })
    }

    /// Builds a tree from an explicit set of Neveu words, checking prefix
    /// closure and child contiguity.
    pub fn from_node_set<I, W>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = W>,
        W: AsRef<[u32]>,
    {
        let set: std::collections::BTreeSet<Vec<u32>> =
            words.into_iter().map(|w| w.as_ref().to_vec()).collect();
        if !set.contains(&Vec::new()) {
            return Err(GwError::Parse("node set lacks the root".into()));
        }
        for w in &set {
            if let Some((&last, parent)) = w.split_last() {
                if last == 0 {
                    return Err(GwError::Parse(format!("word {w:?} has a zero letter")));
                }
                if !set.contains(parent) {
                    return Err(GwError::Parse(format!("word {w:?} lacks its parent")));
                }
                if last > 1 {
                    let mut sib = w.clone();
                    *sib.last_mut().unwrap() = last - 1;
                    if !set.contains(&sib) {
                        return Err(GwError::Parse(format!("word {w:?} lacks its left sibling")));
                    }
                }
            }
        }
        let max_depth = set.iter().map(Vec::len).max().unwrap_or(0);
        let mut levels = vec![Vec::new(); max_depth + 1];
        // BTreeSet iterates lexicographically, which is Neveu order within a level
        for w in &set {
            let mut child = w.clone();
            child.push(1);
            let mut deg = 0u32;
            while set.contains(&child) {
                deg += 1;
                *child.last_mut().unwrap() += 1;
            }
            levels[w.len()].push(deg);
        }
        Self::from_levels(levels)
    }

    pub fn levels(&self) -> &[Vec<u32>] {
        &self.levels
    }

    pub fn code(&self) -> CanonicalCode {
        CanonicalCode(self.code.clone())
    }

    /// `(depth, index within generation)` of every node in depth-first order.
    pub fn preorder_positions(&self) -> Vec<(usize, usize)> {
        preorder_positions(&self.levels)
    }

    /// Depth-first out-degree sequence.
    pub fn preorder(&self) -> &[u32] {
        &self.code
    }

    /// `H(t)`.
    pub fn height(&self) -> usize {
        self.levels.len() - 1
    }

    /// `z_n(t)`.
    pub fn generation_size(&self, n: usize) -> usize {
        self.levels.get(n).map_or(0, Vec::len)
    }

    pub fn root_degree(&self) -> u32 {
        self.levels[0][0]
    }

    pub fn node_count(&self) -> usize {
        self.code.len()
    }

    /// `k_u(t)`, or `None` when `u` is not a node.
    pub fn out_degree(&self, word: &[u32]) -> Option<u32> {
        let mut idx = 0usize;
        for (d, &letter) in word.iter().enumerate() {
            let deg = self.levels[d][idx];
            if letter == 0 || letter > deg {
                return None;
            }
            let before: usize = self.levels[d][..idx].iter().map(|&x| x as usize).sum();
            idx = before + letter as usize - 1;
        }
        self.levels.get(word.len()).map(|l| l[idx])
    }

    pub fn contains(&self, word: &[u32]) -> bool {
        self.out_degree(word).is_some()
    }

    /// All nodes as `(word, out_degree)` in lexicographic order.
    pub fn nodes(&self) -> Vec<(Vec<u32>, u32)> {
        let mut out = Vec::with_capacity(self.node_count());
        let mut stack: Vec<Vec<u32>> = vec![Vec::new()];
        while let Some(w) = stack.pop() {
            let deg = self.out_degree(&w).expect("word came from this tree");
            for i in (1..=deg).rev() {
                let mut c = w.clone();
                c.push(i);
                stack.push(c);
            }
            out.push((w, deg));
        }
        out
    }

    /// `r_h(t) = {u in t : |u| <= h}`.
    pub fn restrict_h(&self, h: usize) -> OrderedTree {
        if h >= self.height() {
            return self.clone();
        }
        let mut levels: Vec<Vec<u32>> = self.levels[..=h].to_vec();
        levels[h].iter_mut().for_each(|d| *d = 0);
        OrderedTree::from_levels(levels).expect("restriction of a valid tree")
    }

    /// `r_{h,k}(t)`: `r_h(t)` keeping only the first `k` children of the root.
    pub fn restrict_hk(&self, h: usize, k: u32) -> OrderedTree {
        if h == 0 {
            return OrderedTree::root();
        }
        let mut levels = Vec::with_capacity(h + 1);
        let mut keep = 1usize;
        for d in 0..=h.min(self.height()) {
            let mut lvl: Vec<u32> = self.levels[d][..keep].to_vec();
            if d == 0 {
                lvl[0] = lvl[0].min(k);
            }
            if d == h {
                lvl.iter_mut().for_each(|x| *x = 0);
            }
            keep = lvl.iter().map(|&x| x as usize).sum();
            levels.push(lvl);
            if keep == 0 {
                break;
            }
        }
        OrderedTree::from_levels(levels).expect("restriction of a valid tree")
    }

    /// `t * t'`: grafts the root children of `other` to the right of those of `self`.
    pub fn graft(&self, other: &OrderedTree) -> OrderedTree {
        let depth = self.levels.len().max(other.levels.len());
        let mut levels = Vec::with_capacity(depth);
        for d in 0..depth {
            if d == 0 {
                levels.push(vec![self.root_degree() + other.root_degree()]);
            } else {
                let mut lvl = self.levels.get(d).cloned().unwrap_or_default();
                lvl.extend(other.levels.get(d).map(Vec::as_slice).unwrap_or(&[]));
                levels.push(lvl);
            }
        }
        OrderedTree::from_levels(levels).expect("graft of valid trees")
    }

    /// Subtree rooted at the `j`-th child of the root (1-based).
    pub fn root_subtree(&self, j: u32) -> Option<OrderedTree> {
        if j == 0 || j > self.root_degree() {
            return None;
        }
        let mut levels = Vec::new();
        let (mut start, mut len) = (j as usize - 1, 1usize);
        for d in 1..self.levels.len() {
            let lvl = &self.levels[d];
            let slice = lvl[start..start + len].to_vec();
            let next_start: usize = lvl[..start].iter().map(|&x| x as usize).sum();
            let next_len: usize = slice.iter().map(|&x| x as usize).sum();
            levels.push(slice);
            if next_len == 0 {
                break;
            }
            start = next_start;
            len = next_len;
        }
        Some(OrderedTree::from_levels(levels).expect("subtree of a valid tree"))
    }

    /// One line of the tree text format.
    pub fn to_line(&self) -> String {
        self.to_string()
    }
}

/// `2^{-m}` with `m` the largest level at which the diagonal truncations
/// `r_{m,m}` of the two trees agree; zero for equal trees.
pub fn local_distance(t: &OrderedTree, s: &OrderedTree) -> f64 {
    if t == s {
        return 0.0;
    }
    let mut m = 0usize;
    loop {
        let h = m + 1;
        let k = u32::try_from(h).unwrap_or(u32::MAX);
        if t.restrict_hk(h, k) != s.restrict_hk(h, k) {
            return 0.5f64.powi(m as i32);
        }
        m = h;
    }
}

/// What to enumerate.
#[derive(Debug, Clone, Copy)]
pub struct EnumerationSpec {
    pub height: usize,
    pub degree_cap: u32,
    pub root_degree: Option<u32>,
    /// Height exactly `height` when set, at most `height` otherwise.
    pub exact_height: bool,
    pub cap: usize,
}

impl EnumerationSpec {
    pub fn new(height: usize, degree_cap: u32) -> Self {
        EnumerationSpec {
            height,
            degree_cap,
            root_degree: None,
            exact_height: false,
            cap: ENUMERATION_CAP,
        }
    }

    pub fn exact(mut self) -> Self {
        self.exact_height = true;
        self
    }

    pub fn with_root_degree(mut self, k: u32) -> Self {
        self.root_degree = Some(k);
        self
    }

    pub fn with_cap(mut self, cap: usize) -> Self {
        self.cap = cap;
        self
    }
}

struct Enumerator<'a, F> {
    spec: EnumerationSpec,
    seq: Vec<u32>,
    pending: Vec<usize>,
    emitted: usize,
    visit: &'a mut F,
}

impl<F: FnMut(&[u32])> Enumerator<'_, F> {
    fn run(&mut self, max_depth: usize) -> Result<()> {
        let Some(d) = self.pending.pop() else {
            if !self.spec.exact_height || max_depth == self.spec.height {
                self.emitted += 1;
                if self.emitted > self.spec.cap {
                    return Err(GwError::Resource(format!(
                        "enumeration exceeds the cap of {} trees; shard by root degree",
                        self.spec.cap
                    )));
                }
                (self.visit)(&self.seq);
            }
            return Ok(());
        };
        let (lo, hi) = if d == self.spec.height {
            (0, 0)
        } else if d == 0 {
            match self.spec.root_degree {
                Some(k) => (k, k),
                None => (0, self.spec.degree_cap),
            }
        } else {
            (0, self.spec.degree_cap)
        };
        for deg in lo..=hi {
            self.seq.push(deg);
            for _ in 0..deg {
                self.pending.push(d + 1);
            }
            let md = if deg > 0 {
                max_depth.max(d + 1)
            } else {
                max_depth
            };
            let res = self.run(md);
            for _ in 0..deg {
                self.pending.pop();
            }
            self.seq.pop();
            res?;
        }
        self.pending.push(d);
        Ok(())
    }
}

/// Streams every tree matching `spec` as a preorder code, in canonical order.
pub fn for_each_tree<F: FnMut(&[u32])>(spec: EnumerationSpec, mut visit: F) -> Result<usize> {
    if spec.height == 0 || spec.degree_cap == 0 {
        return Err(GwError::Precondition(
            "enumeration needs height >= 1 and degree cap >= 1".into(),
        ));
    }
    let mut e = Enumerator {
        spec,
        seq: Vec::new(),
        pending: vec![0],
        emitted: 0,
        visit: &mut visit,
    };
    e.run(0)?;
    Ok(e.emitted)
}

/// All trees with out-degrees `<= degree_cap` and the requested height and
/// root degree, sorted by canonical code.
pub fn enumerate_trees(spec: EnumerationSpec) -> Result<Vec<OrderedTree>> {
    let mut out = Vec::new();
    for_each_tree(spec, |code| {
        out.push(OrderedTree::from_preorder(code).expect("enumerator emits valid codes"));
    })?;
    Ok(out)
}

/// Identifies which truncation a [`TruncatedLaw`] describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LawMeta {
    pub height: usize,
    /// Root cap of `r_{h,k0}` views; `None` for `r_h`.
    pub k0: Option<u32>,
    pub degree_cap: u32,
}

/// A finite part of the law of `r_h(T)` or `r_{h,k0}(T)` plus the mass it leaves out.
#[derive(Debug, Clone)]
pub struct TruncatedLaw {
    pub entries: BTreeMap<OrderedTree, f64>,
    /// Log of the probability mass not covered by `entries`.
    pub log_residual: f64,
    pub meta: LawMeta,
}

impl TruncatedLaw {
    /// Builds a law from enumerated log-probabilities; the residual is the complement.
    pub fn from_entries<I>(meta: LawMeta, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (OrderedTree, f64)>,
    {
        let entries: BTreeMap<OrderedTree, f64> = entries.into_iter().collect();
        let ln_mass = log_sum_exp(entries.values().copied());
        if ln_mass > 1e-9 {
            return Err(GwError::Certification(format!(
                "enumerated mass {} exceeds one",
                ln_mass.exp()
            )));
        }
        let log_residual = if ln_mass >= 0.0 {
            LOG_ZERO
        } else {
            log1m_exp(ln_mass)
        };
        Ok(TruncatedLaw {
            entries,
            log_residual,
            meta,
        })
    }

    pub fn residual(&self) -> f64 {
        self.log_residual.exp()
    }

    pub fn enumerated_mass(&self) -> f64 {
        self.entries.values().map(|x| x.exp()).sum()
    }

    pub fn log_prob(&self, t: &OrderedTree) -> f64 {
        self.entries.get(t).copied().unwrap_or(LOG_ZERO)
    }

    /// Law of a single tree.
    pub fn point_mass(meta: LawMeta, t: OrderedTree) -> Self {
        let mut entries = BTreeMap::new();
        entries.insert(t, 0.0);
        TruncatedLaw {
            entries,
            log_residual: LOG_ZERO,
            meta,
        }
    }
}
