//! Experiment runner: regime sweeps, continuity sweeps, and their outputs.

use std::io::{BufRead, Write};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GwError, Result};
use crate::exactlaw::{aggregated_tv, LawFamily, TreeLaw, TvReport};
use crate::offspring::{Criticality, OffspringParams};
use crate::sampler::{
    sample_condensation, sample_conditioned, sample_gw, sample_kesten, sample_poisson_tree,
    CondensationGenerator, Rng, TypedTree,
};
use crate::treekit::{LawMeta, OrderedTree, TruncatedLaw};

/// Environment variable overriding the worker count.
pub const THREADS_ENV: &str = "GEOMGW_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Kesten,
    Poisson,
    Condensation,
}

impl std::str::FromStr for Regime {
    type Err = GwError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kesten" => Ok(Regime::Kesten),
            "poisson" => Ok(Regime::Poisson),
            "condensation" => Ok(Regime::Condensation),
            _ => Err(GwError::Parse(format!("unknown regime {s:?}"))),
        }
    }
}

/// How `a_n` is produced from `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "lowercase")]
pub enum ARule {
    /// `max(1, round(c_n / n))`, `max(1, round(theta c_n))` or `max(1, round(n c_n))` by regime.
    Default,
    Constant {
        value: u64,
    },
    /// One value per entry of the `n` grid.
    Explicit {
        values: Vec<u64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeSpec {
    pub regime: Regime,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    pub a_rule: ARule,
}

/// `c_n`: `mu^{-n}`, `n^2` or `mu^n` according to criticality.
pub fn c_n(p: &OffspringParams, n: u64) -> f64 {
    match p.criticality() {
        Criticality::Subcritical => (-(n as f64) * p.ln_mu()).exp(),
        Criticality::Critical => (n as f64).powi(2),
        Criticality::Supercritical => (n as f64 * p.ln_mu()).exp(),
    }
}

fn round_at_least_one(x: f64) -> Result<u64> {
    if !x.is_finite() || x >= 9.0e18 {
        return Err(GwError::Resource(format!(
            "a_n = {x} does not fit in 64 bits"
        )));
    }
    Ok((x.round() as u64).max(1))
}

impl RegimeSpec {
    pub fn theta(&self) -> Result<f64> {
        match self.theta {
            Some(t) if t > 0.0 && t.is_finite() => Ok(t),
            _ => Err(GwError::InvalidParameter(
                "the Poisson regime needs theta in (0, inf)".into(),
            )),
        }
    }

    /// `a_n` for the `idx`-th grid point `n`.
    pub fn a_n(&self, p: &OffspringParams, n: u64, idx: usize) -> Result<u64> {
        match &self.a_rule {
            ARule::Constant { value } => Ok(*value),
            ARule::Explicit { values } => values.get(idx).copied().ok_or_else(|| {
                GwError::InvalidParameter(format!("no explicit a_n for grid index {idx}"))
            }),
            ARule::Default => {
                let c = c_n(p, n);
                match self.regime {
                    Regime::Kesten => round_at_least_one(c / n as f64),
                    Regime::Poisson => round_at_least_one(self.theta()? * c),
                    Regime::Condensation => round_at_least_one(n as f64 * c),
                }
            }
        }
    }

    pub fn limit_family(&self) -> Result<LawFamily> {
        Ok(match self.regime {
            Regime::Kesten => LawFamily::Kesten,
            Regime::Poisson => LawFamily::Poisson {
                theta: self.theta()?,
            },
            Regime::Condensation => LawFamily::Condensation,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OutputPaths {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub svg: Option<String>,
}

fn default_tolerance() -> f64 {
    1e-3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub params: OffspringParams,
    pub regime: RegimeSpec,
    pub h: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k0: Option<u32>,
    pub degree_cap: u32,
    pub n_grid: Vec<u64>,
    #[serde(default)]
    pub samples: u64,
    #[serde(default)]
    pub seed: u64,
    /// Rows whose residual bound exceeds this are reported as uncertified.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default)]
    pub output: OutputPaths,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.h == 0 || self.degree_cap == 0 {
            return Err(GwError::InvalidParameter(
                "h and degree_cap must be >= 1".into(),
            ));
        }
        if self.n_grid.is_empty() {
            return Err(GwError::InvalidParameter("n_grid is empty".into()));
        }
        let n_min = *self.n_grid.iter().min().expect("non-empty");
        if (n_min as usize) < self.h {
            return Err(GwError::InvalidParameter(format!(
                "h = {} exceeds min(n_grid) = {n_min}",
                self.h
            )));
        }
        match (self.regime.regime, self.k0) {
            (Regime::Condensation, None) => {
                return Err(GwError::InvalidParameter(
                    "the condensation regime is measured on r_(h,k0); set k0".into(),
                ))
            }
            (Regime::Condensation, Some(_)) => {
                if n_min as usize <= self.h {
                    return Err(GwError::InvalidParameter(
                        "the condensation regime needs n > h".into(),
                    ));
                }
            }
            (_, Some(_)) => return Err(GwError::InvalidParameter(
                "k0 applies only to the condensation regime; the other regimes are measured on r_h"
                    .into(),
            )),
            (_, None) => {}
        }
        if let ARule::Explicit { values } = &self.regime.a_rule {
            if values.len() != self.n_grid.len() {
                return Err(GwError::InvalidParameter(
                    "explicit a_n list must match n_grid".into(),
                ));
            }
        }
        self.regime.limit_family()?;
        if self.regime.regime == Regime::Kesten && self.params.eta >= 1.0 {
            return Err(GwError::UnsupportedRegime(
                "the Kesten regime needs eta < 1".into(),
            ));
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// The three bundled desk-scale experiments.
    pub fn bundled() -> Vec<(&'static str, ExperimentConfig)> {
        let critical = OffspringParams::new(0.5, 0.5).expect("valid");
        vec![
            (
                "kesten",
                ExperimentConfig {
                    params: critical,
                    regime: RegimeSpec {
                        regime: Regime::Kesten,
                        theta: None,
                        a_rule: ARule::Constant { value: 1 },
                    },
                    h: 2,
                    k0: None,
                    degree_cap: 20,
                    n_grid: (10..=50).step_by(5).collect(),
                    samples: 0,
                    seed: 1,
                    tolerance: default_tolerance(),
                    output: OutputPaths::default(),
                },
            ),
            (
                "poisson",
                ExperimentConfig {
                    params: critical,
                    regime: RegimeSpec {
                        regime: Regime::Poisson,
                        theta: Some(1.0),
                        a_rule: ARule::Default,
                    },
                    h: 1,
                    k0: None,
                    degree_cap: 60,
                    n_grid: (10..=60).step_by(5).collect(),
                    samples: 0,
                    seed: 1,
                    tolerance: default_tolerance(),
                    output: OutputPaths::default(),
                },
            ),
            (
                "condensation",
                ExperimentConfig {
                    params: critical,
                    regime: RegimeSpec {
                        regime: Regime::Condensation,
                        theta: None,
                        a_rule: ARule::Default,
                    },
                    h: 2,
                    k0: Some(2),
                    degree_cap: 30,
                    n_grid: (10..=50).step_by(5).collect(),
                    samples: 0,
                    seed: 1,
                    tolerance: default_tolerance(),
                    output: OutputPaths::default(),
                },
            ),
        ]
    }
}

/// One grid point of a convergence sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub n: u64,
    pub a_n: u64,
    /// `None` when the residual bound exceeds the tolerance.
    pub tv_exact: Option<f64>,
    pub tv_residual_bound: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub runtime_ms: Option<u64>,
}

impl ConvergenceRow {
    pub fn certified(&self) -> bool {
        self.tv_exact.is_some()
    }
}

/// Re-raises an error with the grid point it came from.
fn in_row<T>(what: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        GwError::InvalidParameter(m) => GwError::InvalidParameter(format!("{what}: {m}")),
        GwError::Domain(m) => GwError::Domain(format!("{what}: {m}")),
        GwError::Precondition(m) => GwError::Precondition(format!("{what}: {m}")),
        GwError::UnsupportedRegime(m) => GwError::UnsupportedRegime(format!("{what}: {m}")),
        GwError::Resource(m) => GwError::Resource(format!("{what}: {m}")),
        GwError::Certification(m) => GwError::Certification(format!("{what}: {m}")),
        other => other,
    })
}

/// Worker count from [`THREADS_ENV`], if set.
pub fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n >= 1)
            .map(Some)
            .ok_or_else(|| {
                GwError::InvalidParameter(format!(
                    "{THREADS_ENV} must be a positive integer, got {v:?}"
                ))
            }),
        Err(_) => Ok(None),
    }
}

/// Runs `f` on a dedicated pool with `threads` workers (or the default count).
pub fn with_workers<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        b = b.num_threads(n);
    }
    let pool = b
        .build()
        .map_err(|e| GwError::Resource(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

/// TV between the conditioned law and the regime's limit law at every grid point.
pub fn run_regime(cfg: &ExperimentConfig) -> Result<Vec<ConvergenceRow>> {
    cfg.validate()?;
    let limit = TreeLaw::new(cfg.params, cfg.regime.limit_family()?, cfg.h, cfg.k0)?;
    let rows: Vec<Result<ConvergenceRow>> = cfg
        .n_grid
        .par_iter()
        .enumerate()
        .map(|(idx, &n)| {
            let start = Instant::now();
            let ctx = format!("n = {n}");
            let a_n = in_row(&ctx, cfg.regime.a_n(&cfg.params, n, idx))?;
            let cond = in_row(
                &ctx,
                TreeLaw::new(
                    cfg.params,
                    LawFamily::Conditioned { n, a: a_n },
                    cfg.h,
                    cfg.k0,
                ),
            )?;
            let rep = in_row(&ctx, aggregated_tv(&cond, &limit, cfg.degree_cap))?;
            Ok(row_from(n, a_n, rep, cfg.tolerance, start))
        })
        .collect();
    rows.into_iter().collect()
}

fn row_from(n: u64, a_n: u64, rep: TvReport, tol: f64, start: Instant) -> ConvergenceRow {
    ConvergenceRow {
        n,
        a_n,
        tv_exact: (rep.tv_residual_bound < tol).then_some(rep.tv_exact.clamp(0.0, 1.0)),
        tv_residual_bound: rep.tv_residual_bound,
        runtime_ms: Some(start.elapsed().as_millis() as u64),
    }
}

/// One point of a `theta` sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThetaRow {
    pub theta: f64,
    /// TV between `r_h(tau^theta)` and `r_h(tau^0)`; `None` when the Kesten tree is undefined.
    pub kesten_tv: Option<f64>,
    pub kesten_residual_bound: Option<f64>,
    /// TV between `r_{h,k0}(tau^theta)` and `r_{h,k0}(tau^inf)`.
    pub condensation_tv: f64,
    pub condensation_residual_bound: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub runtime_ms: Option<u64>,
}

/// Log-spaced grid from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points <= 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..points)
        .map(|i| (a + (b - a) * i as f64 / (points - 1) as f64).exp())
        .collect()
}

/// Distances from the Poisson-regime laws to both endpoint laws over a `theta` grid.
pub fn run_theta_continuity(
    params: OffspringParams,
    h: usize,
    k0: u32,
    degree_cap: u32,
    thetas: &[f64],
) -> Result<Vec<ThetaRow>> {
    let kesten = if params.eta < 1.0 {
        Some(TreeLaw::new(params, LawFamily::Kesten, h, None)?)
    } else {
        None
    };
    let cond = TreeLaw::new(params, LawFamily::Condensation, h, Some(k0))?;
    let rows: Vec<Result<ThetaRow>> = thetas
        .par_iter()
        .map(|&theta| {
            let start = Instant::now();
            let ctx = format!("theta = {theta}");
            let pois = in_row(
                &ctx,
                TreeLaw::new(params, LawFamily::Poisson { theta }, h, None),
            )?;
            let pois_r = in_row(
                &ctx,
                TreeLaw::new(params, LawFamily::Poisson { theta }, h, Some(k0)),
            )?;
            let kr = match &kesten {
                Some(k) => Some(in_row(&ctx, aggregated_tv(&pois, k, degree_cap))?),
                None => None,
            };
            let cr = in_row(&ctx, aggregated_tv(&pois_r, &cond, degree_cap))?;
            Ok(ThetaRow {
                theta,
                kesten_tv: kr.map(|r| r.tv_exact),
                kesten_residual_bound: kr.map(|r| r.tv_residual_bound),
                condensation_tv: cr.tv_exact,
                condensation_residual_bound: cr.tv_residual_bound,
                runtime_ms: Some(start.elapsed().as_millis() as u64),
            })
        })
        .collect();
    rows.into_iter().collect()
}

fn fmt_f(x: f64) -> String {
    format!("{x:.12e}")
}

/// Header of the convergence CSV.
pub const CONVERGENCE_HEADER: [&str; 5] = ["n", "a_n", "tv_exact", "tv_residual_bound", "status"];

/// Header of the `theta` sweep CSV.
pub const THETA_HEADER: [&str; 6] = [
    "theta",
    "kesten_tv",
    "kesten_residual_bound",
    "condensation_tv",
    "condensation_residual_bound",
    "status",
];

/// Writes convergence rows; `runtime_ms` is appended only when `timings` is set.
pub fn write_convergence_csv<W: Write>(w: W, rows: &[ConvergenceRow], timings: bool) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header: Vec<&str> = CONVERGENCE_HEADER.to_vec();
    if timings {
        header.push("runtime_ms");
    }
    out.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.n.to_string(),
            r.a_n.to_string(),
            r.tv_exact.map(fmt_f).unwrap_or_default(),
            fmt_f(r.tv_residual_bound),
            if r.certified() {
                "certified"
            } else {
                "uncertified"
            }
            .to_string(),
        ];
        if timings {
            rec.push(r.runtime_ms.unwrap_or(0).to_string());
        }
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

/// Writes `theta` sweep rows; a row is certified when both residual bounds are below `tol`.
pub fn write_theta_csv<W: Write>(w: W, rows: &[ThetaRow], tol: f64, timings: bool) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header: Vec<&str> = THETA_HEADER.to_vec();
    if timings {
        header.push("runtime_ms");
    }
    out.write_record(&header)?;
    for r in rows {
        let ok =
            r.condensation_residual_bound < tol && r.kesten_residual_bound.is_none_or(|b| b < tol);
        let mut rec = vec![
            fmt_f(r.theta),
            r.kesten_tv.map(fmt_f).unwrap_or_default(),
            r.kesten_residual_bound.map(fmt_f).unwrap_or_default(),
            fmt_f(r.condensation_tv),
            fmt_f(r.condensation_residual_bound),
            if ok { "certified" } else { "uncertified" }.to_string(),
        ];
        if timings {
            rec.push(r.runtime_ms.unwrap_or(0).to_string());
        }
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

/// Descriptive header of a serialized [`TruncatedLaw`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LawHeader {
    pub eta: f64,
    pub q: f64,
    pub h: usize,
    pub k0: Option<u32>,
    pub regime: String,
    pub theta: Option<f64>,
    pub n: Option<u64>,
    pub a_n: Option<u64>,
    pub residual: f64,
    pub degree_cap: u32,
}

impl LawHeader {
    pub fn for_law(law: &TreeLaw, truncated: &TruncatedLaw) -> Self {
        let (theta, n, a_n) = match law.family {
            LawFamily::Poisson { theta } => (Some(theta), None, None),
            LawFamily::Conditioned { n, a } => (None, Some(n), Some(a)),
            _ => (None, None, None),
        };
        LawHeader {
            eta: law.params.eta,
            q: law.params.q,
            h: law.h,
            k0: law.k0,
            regime: law.family.name().to_string(),
            theta,
            n,
            a_n,
            residual: truncated.residual(),
            degree_cap: truncated.meta.degree_cap,
        }
    }

    fn to_comment(&self) -> String {
        fn opt<T: ToString>(x: &Option<T>) -> String {
            x.as_ref().map(T::to_string).unwrap_or_default()
        }
        format!(
            "# eta={} q={} h={} k0={} regime={} theta={} n={} a_n={} residual={:e} degree_cap={}",
            self.eta,
            self.q,
            self.h,
            opt(&self.k0),
            self.regime,
            opt(&self.theta),
            opt(&self.n),
            opt(&self.a_n),
            self.residual,
            self.degree_cap
        )
    }

    fn from_comment(line: &str) -> Result<Self> {
        let body = line
            .strip_prefix('#')
            .ok_or_else(|| GwError::Parse("law file must start with a '#' header line".into()))?;
        let mut map = std::collections::HashMap::new();
        for tok in body.split_whitespace() {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| GwError::Parse(format!("bad header token {tok:?}")))?;
            map.insert(k.to_string(), v.to_string());
        }
        let get = |k: &str| {
            map.get(k)
                .cloned()
                .ok_or_else(|| GwError::Parse(format!("header lacks {k}")))
        };
        fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| GwError::Parse(format!("header field {k} = {v:?} is not a number")))
        }
        fn opt_num<T: std::str::FromStr>(k: &str, v: &str) -> Result<Option<T>> {
            if v.is_empty() {
                Ok(None)
            } else {
                num(k, v).map(Some)
            }
        }
        Ok(LawHeader {
            eta: num("eta", &get("eta")?)?,
            q: num("q", &get("q")?)?,
            h: num("h", &get("h")?)?,
            k0: opt_num("k0", &get("k0")?)?,
            regime: get("regime")?,
            theta: opt_num("theta", &get("theta")?)?,
            n: opt_num("n", &get("n")?)?,
            a_n: opt_num("a_n", &get("a_n")?)?,
            residual: num("residual", &get("residual")?)?,
            degree_cap: num("degree_cap", &get("degree_cap")?)?,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct LawEntry {
    tree_code: String,
    log_prob: f64,
}

#[derive(Serialize, Deserialize)]
struct LawDocument {
    header: LawHeader,
    entries: Vec<LawEntry>,
}

/// Serializes a law as a `#` header line followed by `tree_code,log_prob` CSV.
pub fn write_law_csv<W: Write>(mut w: W, header: &LawHeader, law: &TruncatedLaw) -> Result<()> {
    writeln!(w, "{}", header.to_comment())?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["tree_code", "log_prob"])?;
    for (t, lp) in &law.entries {
        out.write_record([t.to_line(), format!("{lp:.17e}")])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_law_json<W: Write>(w: W, header: &LawHeader, law: &TruncatedLaw) -> Result<()> {
    let doc = LawDocument {
        header: header.clone(),
        entries: law
            .entries
            .iter()
            .map(|(t, &lp)| LawEntry {
                tree_code: t.to_line(),
                log_prob: lp,
            })
            .collect(),
    };
    serde_json::to_writer_pretty(w, &doc)?;
    Ok(())
}

fn law_from_parts(
    header: LawHeader,
    entries: Vec<(OrderedTree, f64)>,
) -> Result<(LawHeader, TruncatedLaw)> {
    let meta = LawMeta {
        height: header.h,
        k0: header.k0,
        degree_cap: header.degree_cap,
    };
    let mut law = TruncatedLaw::from_entries(meta, entries)?;
    law.log_residual = header.residual.ln();
    Ok((header, law))
}

pub fn read_law_csv<R: BufRead>(mut r: R) -> Result<(LawHeader, TruncatedLaw)> {
    let mut first = String::new();
    r.read_line(&mut first)?;
    let header = LawHeader::from_comment(first.trim_end())?;
    let mut rd = csv::Reader::from_reader(r);
    let mut entries = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let t: OrderedTree = rec.get(0).unwrap_or("").parse()?;
        let lp: f64 = rec
            .get(1)
            .unwrap_or("")
            .parse()
            .map_err(|_| GwError::Parse(format!("bad log_prob in row {:?}", rec)))?;
        entries.push((t, lp));
    }
    law_from_parts(header, entries)
}

pub fn read_law_json<R: std::io::Read>(r: R) -> Result<(LawHeader, TruncatedLaw)> {
    let doc: LawDocument = serde_json::from_reader(r)?;
    let entries = doc
        .entries
        .into_iter()
        .map(|e| Ok((e.tree_code.parse::<OrderedTree>()?, e.log_prob)))
        .collect::<Result<Vec<_>>>()?;
    law_from_parts(doc.header, entries)
}

/// Total variation between two enumerated laws of the same view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TvDistance {
    pub tv: f64,
    /// `1/2 (residual_1 + residual_2)`.
    pub bound: f64,
}

pub fn tv_distance(l1: &TruncatedLaw, l2: &TruncatedLaw) -> Result<TvDistance> {
    if l1.meta.height != l2.meta.height || l1.meta.k0 != l2.meta.k0 {
        return Err(GwError::Metadata(format!(
            "laws describe different views: (h={}, k0={:?}) vs (h={}, k0={:?})",
            l1.meta.height, l1.meta.k0, l2.meta.height, l2.meta.k0
        )));
    }
    let mut s = 0.0;
    for (t, &lp) in &l1.entries {
        let other = l2.entries.get(t).map_or(0.0, |x| x.exp());
        s += (lp.exp() - other).abs();
    }
    for (t, &lp) in &l2.entries {
        if !l1.entries.contains_key(t) {
            s += lp.exp();
        }
    }
    Ok(TvDistance {
        tv: 0.5 * s,
        bound: 0.5 * (l1.residual() + l2.residual()),
    })
}

/// What to draw in the `sample` command.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SampleFamily {
    Gw,
    Conditioned {
        n: u64,
        a: u64,
    },
    Kesten,
    Poisson {
        theta: f64,
    },
    /// Two-type construction when `two_type` is set, inhomogeneous otherwise.
    Condensation {
        k0: u32,
        two_type: bool,
    },
}

/// Draws `count` trees; tree `i` uses the `i`-th child stream of `seed`, so
/// the output does not depend on the worker count.
pub fn sample_lines(
    params: &OffspringParams,
    family: SampleFamily,
    h: usize,
    count: u64,
    seed: u64,
) -> Result<Vec<String>> {
    let root = Rng::new(seed);
    let lines: Vec<Result<String>> = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = root.child(i);
            let typed = |t: TypedTree| t.to_line();
            Ok(match family {
                SampleFamily::Gw => sample_gw(params, &mut rng, h)?.to_line(),
                SampleFamily::Conditioned { n, a } => {
                    sample_conditioned(params, n, a, &mut rng, h)?.to_line()
                }
                SampleFamily::Kesten => typed(sample_kesten(params, &mut rng, h)?),
                SampleFamily::Poisson { theta } => {
                    typed(sample_poisson_tree(params, theta, &mut rng, h)?)
                }
                SampleFamily::Condensation { k0, two_type } => {
                    let g = if two_type {
                        CondensationGenerator::TwoType
                    } else {
                        CondensationGenerator::Inhomogeneous
                    };
                    let t = sample_condensation(params, &mut rng, h, k0, g)?;
                    if two_type {
                        typed(t)
                    } else {
                        t.tree.to_line()
                    }
                }
            })
        })
        .collect();
    lines.into_iter().collect()
}

/// A named polyline for [`svg_line_chart`].
pub struct Series<'a> {
    pub name: &'a str,
    pub points: Vec<(f64, f64)>,
}

/// Minimal static SVG line chart.
pub fn svg_line_chart(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series],
    log_x: bool,
) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const M: f64 = 60.0;
    const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];
    let tx = |x: f64| if log_x { x.log10() } else { x };
    let pts: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|s| s.points.iter().copied())
        .filter(|(x, y)| x.is_finite() && y.is_finite() && (!log_x || *x > 0.0))
        .collect();
    let (mut x0, mut x1, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64);
    for &(x, y) in &pts {
        x0 = x0.min(tx(x));
        x1 = x1.max(tx(x));
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1) = (0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= 0.0 {
        y1 = 1.0;
    }
    let px = |x: f64| M + (tx(x) - x0) / (x1 - x0) * (W - 2.0 * M);
    let py = |y: f64| H - M - y / y1 * (H - 2.0 * M);
    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n"
    ));
    s.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    s.push_str(&format!(
        "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">{}</text>\n",
        W / 2.0,
        xml_escape(title)
    ));
    s.push_str(&format!(
        "<line x1=\"{M}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n<line x1=\"{M}\" y1=\"{M}\" x2=\"{M}\" y2=\"{}\" stroke=\"black\"/>\n",
        H - M,
        W - M,
        H - M,
        H - M
    ));
    let fmt_tick = |v: f64| {
        if log_x {
            format!("1e{v:.1}")
        } else {
            format!("{v:.3}")
        }
    };
    s.push_str(&format!(
        "<text x=\"{M}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>\n<text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">{}</text>\n",
        H - M + 16.0,
        fmt_tick(x0),
        W - M,
        H - M + 16.0,
        fmt_tick(x1)
    ));
    s.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">{:.3e}</text>\n",
        M - 4.0,
        M + 4.0,
        y1
    ));
    s.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">{}</text>\n",
        W / 2.0,
        H - 20.0,
        xml_escape(x_label)
    ));
    s.push_str(&format!(
        "<text x=\"16\" y=\"{}\" transform=\"rotate(-90 16 {})\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">{}</text>\n",
        H / 2.0,
        H / 2.0,
        xml_escape(y_label)
    ));
    for (i, ser) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let path: Vec<String> = ser
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite() && (!log_x || *x > 0.0))
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        s.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>\n",
            path.join(" ")
        ));
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" fill=\"{color}\">{}</text>\n",
            W - M - 120.0,
            M + 16.0 * (i as f64 + 1.0),
            xml_escape(ser.name)
        ));
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
