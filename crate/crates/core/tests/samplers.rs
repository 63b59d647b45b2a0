use std::collections::BTreeMap;

use geomgw::exactlaw::{
    forest_z_pmf, poisson_law_restricted, poisson_tree_law, z_pmf, LawFamily, TreeLaw,
};
use geomgw::oracle::sampler_gof;
use geomgw::sampler::{
    sample_condensation, sample_conditioned, sample_gw, sample_kesten, sample_poisson_tree,
    CondensationGenerator, Rng, TreeKind, TypedTree,
};
use geomgw::stats::{align_with_law, g_test_gof, tally};
use geomgw::{OffspringParams, OrderedTree};
use statrs::distribution::{Discrete, Poisson};

const DRAWS: u64 = 100_000;
const P_FLOOR: f64 = 1e-3;

fn params(eta: f64, q: f64) -> OffspringParams {
    OffspringParams::new(eta, q).unwrap()
}

fn streams(seed: u64, n: u64) -> impl Iterator<Item = Rng> {
    let root = Rng::new(seed);
    (0..n).map(move |i| root.child(i))
}

fn gof_u64(values: impl IntoIterator<Item = u64>, pmf: impl Fn(u64) -> f64, k_max: u64) -> f64 {
    let counts = tally(values);
    let law: BTreeMap<u64, f64> = (0..=k_max).map(|k| (k, pmf(k))).collect();
    let (obs, probs) = align_with_law(&counts, &law);
    g_test_gof(&obs, &probs).p_value
}

/// Out-degrees of the children of each node at `depth`, in node order.
fn child_ranges(t: &OrderedTree, depth: usize) -> Vec<std::ops::Range<usize>> {
    let mut start = 0usize;
    t.levels()[depth]
        .iter()
        .map(|&k| {
            let r = start..start + k as usize;
            start += k as usize;
            r
        })
        .collect()
}

#[test]
fn gw_root_degree_law() {
    let p = params(0.5, 0.5);
    let degrees =
        streams(1, DRAWS).map(|mut r| sample_gw(&p, &mut r, 1).unwrap().root_degree() as u64);
    assert!(gof_u64(degrees, |k| p.pmf(k).exp(), 20) > P_FLOOR);
}

#[test]
fn gw_critical_mean_generation_one() {
    let p = params(0.5, 0.5);
    let z: Vec<f64> = streams(2, DRAWS)
        .map(|mut r| sample_gw(&p, &mut r, 1).unwrap().generation_size(1) as f64)
        .collect();
    let n = z.len() as f64;
    let mean = z.iter().sum::<f64>() / n;
    let var = z.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    assert!((mean - 1.0).abs() < 3.0 * (var / n).sqrt(), "mean {mean}");
}

#[test]
fn gw_without_leaves() {
    let p = params(1.0, 0.5);
    for mut r in streams(3, 2_000) {
        let t = sample_gw(&p, &mut r, 4).unwrap();
        assert_eq!(t.height(), 4);
        for level in &t.levels()[..4] {
            assert!(level.iter().all(|&k| k >= 1));
        }
    }
}

#[test]
fn conditioned_generation_one_is_pinned() {
    let p = params(0.5, 0.5);
    for mut r in streams(4, 100) {
        assert_eq!(
            sample_conditioned(&p, 1, 3, &mut r, 1).unwrap().to_line(),
            "3,0,0,0"
        );
    }
}

#[test]
fn conditioned_bridge_marginals() {
    let p = params(0.5, 0.5);
    let (n, a) = (4u64, 3u64);
    let trees: Vec<OrderedTree> = streams(5, DRAWS)
        .map(|mut r| sample_conditioned(&p, n, a, &mut r, 2).unwrap())
        .collect();
    let ln_z = z_pmf(&p, n, a).unwrap();
    for m in 1..=2u64 {
        let marginal = |b: u64| {
            (z_pmf(&p, m, b).unwrap() + forest_z_pmf(&p, b, n - m, a).unwrap() - ln_z).exp()
        };
        let zs = trees.iter().map(|t| t.generation_size(m as usize) as u64);
        let pv = gof_u64(zs, marginal, 25);
        assert!(pv > P_FLOOR, "Z_{m}: p = {pv}");
    }
}

#[test]
fn exact_law_gof_off_criticality() {
    for (eta, q) in [(0.4, 0.5), (0.6, 0.5), (1.0, 0.6)] {
        let p = params(eta, q);
        let law = TreeLaw::new(p, LawFamily::Conditioned { n: 4, a: 3 }, 2, None).unwrap();
        let g = sampler_gof(&law, DRAWS, 31, |r| sample_conditioned(&p, 4, 3, r, 2)).unwrap();
        assert!(g.p_value > P_FLOOR, "conditioned {eta},{q}: {g:?}");
        let law = TreeLaw::new(p, LawFamily::Poisson { theta: 1.3 }, 2, None).unwrap();
        let g = sampler_gof(&law, DRAWS, 32, |r| {
            Ok(sample_poisson_tree(&p, 1.3, r, 2)?.tree)
        })
        .unwrap();
        assert!(g.p_value > P_FLOOR, "poisson {eta},{q}: {g:?}");
        if eta < 1.0 {
            let law = TreeLaw::new(p, LawFamily::Kesten, 2, None).unwrap();
            let g = sampler_gof(&law, DRAWS, 33, |r| Ok(sample_kesten(&p, r, 2)?.tree)).unwrap();
            assert!(g.p_value > P_FLOOR, "kesten {eta},{q}: {g:?}");
        }
        for generator in [
            CondensationGenerator::Inhomogeneous,
            CondensationGenerator::TwoType,
        ] {
            let law = TreeLaw::new(p, LawFamily::Condensation, 2, Some(2)).unwrap();
            let g = sampler_gof(&law, DRAWS, 34, |r| {
                Ok(sample_condensation(&p, r, 2, 2, generator)?.tree)
            })
            .unwrap();
            assert!(
                g.p_value > P_FLOOR,
                "condensation {generator:?} {eta},{q}: {g:?}"
            );
        }
    }
}

#[test]
fn kesten_spine_and_extinction_law() {
    let p = params(0.6, 0.3);
    let frak_p = p.extinction_params().frak_p;
    let mut degrees = Vec::new();
    for mut r in streams(6, 20_000) {
        let t = sample_kesten(&p, &mut r, 3).unwrap();
        t.check_invariants(TreeKind::Kesten, 3).unwrap();
        for d in 0..=3 {
            assert_eq!(t.survivor_count(d), 1);
        }
        for d in 0..3 {
            for (j, &k) in t.tree.levels()[d].iter().enumerate() {
                if !t.survivors[d][j] {
                    degrees.push(k as u64);
                }
            }
        }
    }
    assert!(degrees.len() > 10_000);
    assert!(gof_u64(degrees, |k| frak_p.ln_pmf(k).exp(), 30) > P_FLOOR);
}

#[test]
fn poisson_immigration_law() {
    for (eta, q, theta) in [(0.5, 0.5, 0.7), (0.4, 0.5, 1000.0), (0.6, 0.5, 40.0)] {
        let p = params(eta, q);
        let trees: Vec<TypedTree> = streams(7, 20_000)
            .map(|mut r| sample_poisson_tree(&p, theta, &mut r, 3).unwrap())
            .collect();
        for h in 0..3usize {
            let mean = theta * p.zeta(h as u64).unwrap();
            let pois = Poisson::new(mean).unwrap();
            let deltas = trees
                .iter()
                .map(|t| (t.survivor_count(h + 1) - t.survivor_count(h)) as u64);
            let pv = gof_u64(deltas, |k| pois.pmf(k), (mean * 3.0 + 30.0) as u64);
            assert!(pv > P_FLOOR, "({eta},{q}) theta={theta} h={h}: p = {pv}");
        }
    }
}

#[test]
fn poisson_compositions_are_uniform() {
    let p = params(0.5, 0.5);
    let mut splits = Vec::new();
    for mut r in streams(8, 400_000) {
        let t = sample_poisson_tree(&p, 1.0, &mut r, 2).unwrap();
        if t.survivor_count(1) != 2 || t.survivor_count(2) != 4 {
            continue;
        }
        let ranges = child_ranges(&t.tree, 1);
        let survivors_below: Vec<u64> = (0..t.tree.levels()[1].len())
            .filter(|&j| t.survivors[1][j])
            .map(|j| ranges[j].clone().filter(|&c| t.survivors[2][c]).count() as u64)
            .collect();
        splits.push(survivors_below[0]);
    }
    assert!(splits.len() > 5_000, "{} conditioned draws", splits.len());
    assert!(
        gof_u64(
            splits,
            |s| if (1..=3).contains(&s) { 1.0 / 3.0 } else { 0.0 },
            3
        ) > P_FLOOR
    );
}

#[test]
fn poisson_law_monte_carlo() {
    let p = params(0.5, 0.5);
    let draws = 1_000_000u64;
    let t: OrderedTree = "1,3,0,0,0".parse().unwrap();
    let hits = streams(9, draws)
        .map(|mut r| sample_poisson_tree(&p, 0.7, &mut r, 2).unwrap().tree)
        .filter(|s| *s == t)
        .count();
    let freq = hits as f64 / draws as f64;
    let exact = poisson_tree_law(&p, 0.7, 2, &t).unwrap().exp();
    let se = (exact * (1.0 - exact) / draws as f64).sqrt();
    assert!((freq - exact).abs() < 3.0 * se, "{freq} vs {exact}");

    // restricted view r_{1,2} at theta = 1
    let mut counts = [0u64; 3];
    for mut r in streams(10, draws) {
        let k = sample_poisson_tree(&p, 1.0, &mut r, 1)
            .unwrap()
            .tree
            .root_degree()
            .min(2);
        counts[k as usize] += 1;
    }
    for (k, &c) in counts.iter().enumerate() {
        let t = OrderedTree::from_preorder(
            &std::iter::once(k as u32)
                .chain(std::iter::repeat_n(0, k))
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let exact = poisson_law_restricted(&p, 1.0, 1, 2, &t).unwrap().exp();
        let freq = c as f64 / draws as f64;
        let se = (exact * (1.0 - exact) / draws as f64).sqrt();
        assert!(
            (freq - exact).abs() <= 3.0 * se,
            "root degree {k}: {freq} vs {exact}"
        );
    }
}

#[test]
fn condensation_generator_a_shape_and_depth_one_law() {
    let p = params(0.5, 0.5);
    let mut depth_one = Vec::new();
    for mut r in streams(11, 40_000) {
        let t = sample_condensation(&p, &mut r, 2, 3, CondensationGenerator::Inhomogeneous)
            .unwrap()
            .tree;
        assert_eq!(t.root_degree(), 3);
        depth_one.extend(t.levels()[1].iter().map(|&k| k as u64));
    }
    assert!((p.condensation_offspring(1, 0).unwrap().exp() - 0.25).abs() < 1e-15);
    let pv = gof_u64(
        depth_one,
        |k| p.condensation_offspring(1, k).unwrap().exp(),
        30,
    );
    assert!(pv > P_FLOOR);
}

#[test]
fn typed_trees_satisfy_invariants() {
    for (eta, q) in [(0.4, 0.5), (0.5, 0.5), (0.6, 0.5), (1.0, 0.5)] {
        let p = params(eta, q);
        for mut r in streams(12, 2_000) {
            sample_poisson_tree(&p, 2.0, &mut r, 3)
                .unwrap()
                .check_invariants(TreeKind::Poisson, 3)
                .unwrap();
            sample_condensation(&p, &mut r, 3, 2, CondensationGenerator::TwoType)
                .unwrap()
                .check_invariants(TreeKind::Condensation, 3)
                .unwrap();
        }
    }
}

#[test]
fn same_seed_same_trees() {
    let p = params(0.5, 0.5);
    let run = || -> Vec<String> {
        streams(13, 500)
            .map(|mut r| {
                let a = sample_poisson_tree(&p, 0.9, &mut r, 3).unwrap().to_line();
                let b = sample_conditioned(&p, 6, 4, &mut r, 3).unwrap().to_line();
                format!("{a}\n{b}")
            })
            .collect()
    };
    assert_eq!(run(), run());
}
