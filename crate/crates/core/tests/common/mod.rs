//! Straight-line reference implementations used as test oracles, plus
//! random input generators. Nothing here calls into the library's
//! algorithms.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use fewshot_core::catalog::{DatasetKind, Split};
use fewshot_core::learners::{AlphabetDatasetSpec, FlatDatasetSpec, SyntheticFamilyConfig, SyntheticTaskFamily, TreeDatasetSpec};
use fewshot_core::rng::SeedStream;
use fewshot_core::sampler::{EpisodeSampler, EpisodeSpec, SamplerConfig};

// ---- sampling formulas ----

pub fn oracle_query_size(sizes: &[usize]) -> usize {
    let mut smallest_half = usize::MAX;
    for &s in sizes {
        if s / 2 < smallest_half {
            smallest_half = s / 2;
        }
    }
    if smallest_half < 10 {
        smallest_half
    } else {
        10
    }
}

pub fn oracle_support_size(beta: f64, sizes: &[usize], q: usize) -> usize {
    let mut total = 0usize;
    for &s in sizes {
        let avail = if s - q < 100 { s - q } else { 100 };
        total += (beta * avail as f64).ceil() as usize;
    }
    if total < 500 {
        total
    } else {
        500
    }
}

pub fn oracle_proportions(alphas: &[f64], sizes: &[usize]) -> Vec<f64> {
    let mut denom = 0.0;
    for i in 0..sizes.len() {
        denom += alphas[i].exp() * sizes[i] as f64;
    }
    let mut out = Vec::new();
    for i in 0..sizes.len() {
        out.push(alphas[i].exp() * sizes[i] as f64 / denom);
    }
    out
}

pub fn oracle_shots(alphas: &[f64], sizes: &[usize], support: usize, q: usize) -> Vec<usize> {
    let r = oracle_proportions(alphas, sizes);
    let spare = (support - sizes.len()) as f64;
    let mut out = Vec::new();
    for i in 0..sizes.len() {
        let k = (r[i] * spare).floor() as usize + 1;
        let cap = sizes[i] - q;
        out.push(if k < cap { k } else { cap });
    }
    out
}

/// Random `(beta, alphas, sizes)` with sizes at least 2.
pub fn random_formula_inputs(rng: &mut SeedStream) -> (f64, Vec<f64>, Vec<usize>) {
    let n = rng.range_inclusive(5, 50);
    let beta = rng.unit_open_closed();
    let lo = 0.5f64.ln();
    let hi = 2f64.ln();
    let alphas = (0..n).map(|_| rng.uniform(lo, hi)).collect();
    let sizes = (0..n)
        .map(|_| {
            if rng.index(4) == 0 {
                rng.range_inclusive(2, 12)
            } else {
                rng.range_inclusive(2, 1500)
            }
        })
        .collect();
    (beta, alphas, sizes)
}

// ---- DAGs ----

/// A raw DAG as parent -> children adjacency over string ids.
#[derive(Debug, Clone)]
pub struct RawDag {
    pub nodes: Vec<String>,
    pub edges: Vec<(String, String)>,
}

impl RawDag {
    pub fn children(&self) -> BTreeMap<&str, Vec<&str>> {
        let mut m: BTreeMap<&str, Vec<&str>> = self.nodes.iter().map(|n| (n.as_str(), vec![])).collect();
        for (p, c) in &self.edges {
            m.get_mut(p.as_str()).unwrap().push(c.as_str());
        }
        m
    }

    pub fn leaves(&self) -> BTreeSet<&str> {
        self.children()
            .into_iter()
            .filter(|(_, c)| c.is_empty())
            .map(|(n, _)| n)
            .collect()
    }

    pub fn edge_refs(&self) -> Vec<(&str, &str)> {
        self.edges.iter().map(|(p, c)| (p.as_str(), c.as_str())).collect()
    }
}

/// Random DAG on `n` nodes where node `i` may only point at nodes with a
/// larger index. Every node takes part in at least one edge.
pub fn random_dag(rng: &mut SeedStream, max_nodes: usize) -> RawDag {
    let n = rng.range_inclusive(2, max_nodes);
    let nodes: Vec<String> = (0..n).map(|i| format!("v{i:02}")).collect();
    let density = 0.05 + 0.25 * rng.unit();
    let mut edges = BTreeSet::new();
    for c in 1..n {
        // Guarantee a parent so the node is connected.
        let p = rng.index(c);
        edges.insert((p, c));
        for p in 0..c {
            if rng.unit() < density / (1.0 + (c - p) as f64 / 8.0) {
                edges.insert((p, c));
            }
        }
    }
    RawDag {
        edges: edges.into_iter().map(|(p, c)| (nodes[p].clone(), nodes[c].clone())).collect(),
        nodes,
    }
}

/// Leaves reachable from every node, by depth-first search.
pub fn oracle_spans(dag: &RawDag) -> BTreeMap<String, BTreeSet<String>> {
    let ch = dag.children();
    let leaves = dag.leaves();
    let mut out = BTreeMap::new();
    for n in &dag.nodes {
        let mut seen = BTreeSet::new();
        let mut stack = vec![n.as_str()];
        let mut found = BTreeSet::new();
        while let Some(v) = stack.pop() {
            if !seen.insert(v) {
                continue;
            }
            if leaves.contains(v) {
                found.insert(v.to_string());
            }
            stack.extend(ch[v].iter().copied());
        }
        out.insert(n.clone(), found);
    }
    out
}

pub fn oracle_eligible(dag: &RawDag, min: usize, max: usize) -> BTreeSet<String> {
    let leaves = dag.leaves();
    oracle_spans(dag)
        .into_iter()
        .filter(|(n, s)| !leaves.contains(n.as_str()) && s.len() >= min && s.len() <= max)
        .map(|(n, _)| n)
        .collect()
}

/// Scans caps upward until the eligible spans cover every leaf.
pub fn oracle_cover_cap(dag: &RawDag, min: usize) -> Option<usize> {
    let all: BTreeSet<String> = dag.leaves().iter().map(|s| s.to_string()).collect();
    let spans = oracle_spans(dag);
    for cap in min..=all.len().max(min) {
        let mut covered = BTreeSet::new();
        for n in oracle_eligible(dag, min, cap) {
            covered.extend(spans[&n].iter().cloned());
        }
        if covered == all {
            return Some(cap);
        }
    }
    None
}

/// Longest path length between every ordered pair, by repeated relaxation.
pub fn oracle_longest_paths(dag: &RawDag) -> BTreeMap<(String, String), usize> {
    let mut d: BTreeMap<(String, String), usize> = dag.nodes.iter().map(|n| ((n.clone(), n.clone()), 0)).collect();
    for _ in 0..dag.nodes.len() {
        let mut changed = false;
        for (p, c) in &dag.edges {
            let from_c: Vec<(String, usize)> = d
                .iter()
                .filter(|((a, _), _)| a == c)
                .map(|((_, b), &l)| (b.clone(), l))
                .collect();
            for (b, l) in from_c {
                let e = d.entry((p.clone(), b)).or_insert(0);
                if l + 1 > *e {
                    *e = l + 1;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    d
}

pub fn oracle_lca_height(paths: &BTreeMap<(String, String), usize>, nodes: &[String], a: &str, b: &str) -> Option<usize> {
    nodes
        .iter()
        .filter_map(|v| {
            let da = paths.get(&(v.clone(), a.to_string()))?;
            let db = paths.get(&(v.clone(), b.to_string()))?;
            Some(*da.max(db))
        })
        .min()
}

// ---- rank statistics ----

/// Random `(mean, halfwidth)` cells for `m` methods, with deliberate
/// near-ties.
pub fn random_cells(rng: &mut SeedStream, m: usize) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = Vec::new();
    for _ in 0..m {
        let mean = if !out.is_empty() && rng.index(3) == 0 {
            out[rng.index(out.len())].0 + rng.uniform(-1.5, 1.5)
        } else {
            rng.uniform(20.0, 95.0)
        };
        out.push(((mean * 100.0).round() / 100.0, (rng.uniform(0.2, 2.0) * 100.0).round() / 100.0));
    }
    out
}

// ---- synthetic catalogs ----

/// Random family mixing flat, tree and alphabet datasets.
pub fn random_family(rng: &mut SeedStream) -> SyntheticTaskFamily {
    let min_examples = rng.range_inclusive(2, 30);
    let max_examples = min_examples + rng.range_inclusive(0, 1200);
    let flat = (0..rng.range_inclusive(1, 3))
        .map(|i| FlatDatasetSpec {
            id: format!("flat{i}"),
            classes: rng.range_inclusive(if i == 0 { 20 } else { 3 }, 150),
            reserved: i > 0 && rng.index(3) == 0,
        })
        .collect();
    let tree = (rng.index(2) == 0).then(|| TreeDatasetSpec {
        id: "tree".into(),
        branching: rng.range_inclusive(3, 4),
        depth: rng.range_inclusive(2, 4),
    });
    let alphabets = (rng.index(2) == 0).then(|| AlphabetDatasetSpec {
        id: "glyphs".into(),
        alphabets: rng.range_inclusive(7, 14),
        characters: rng.range_inclusive(3, 25),
        evaluation_alphabets: 1,
    });
    SyntheticTaskFamily::new(SyntheticFamilyConfig {
        dim: 2,
        seed: rng.next_u64(),
        min_examples,
        max_examples,
        flat,
        tree,
        alphabets,
        proxy: "flat0".into(),
        ..SyntheticFamilyConfig::default()
    })
    .expect("random family is valid")
}

pub fn checked_samplers(family: &SyntheticTaskFamily) -> Vec<EpisodeSampler<'_>> {
    Split::ASSIGNED
        .iter()
        .filter_map(|&s| EpisodeSampler::new(&family.catalog, SamplerConfig::default(), s).ok())
        .collect()
}

pub fn structure_violations(spec: &EpisodeSpec, sampler: &EpisodeSampler<'_>) -> Vec<String> {
    let cat = sampler.catalog();
    let mut v = Vec::new();
    let ds = cat.dataset(&spec.dataset).unwrap();
    if ds.reserved_for_eval && sampler.split() != Split::Test {
        v.push(format!("reserved dataset {} in split {}", ds.dataset_id, sampler.split()));
    }
    match ds.kind {
        DatasetKind::Flat => {}
        DatasetKind::OmniglotAlphabets => {
            let alphabets: BTreeSet<_> =
                spec.classes.iter().map(|c| cat.class(&spec.dataset, c).unwrap().alphabet_id.clone()).collect();
            if alphabets.len() != 1 {
                v.push(format!("episode mixes {} alphabets", alphabets.len()));
            }
        }
        DatasetKind::ImagenetDag => {
            // The classes must be an eligible node's span, or a max-way
            // subset of one.
            let dag = sampler.split_dag(&spec.dataset).unwrap();
            let cfg = sampler.config();
            let classes: BTreeSet<&str> = spec.classes.iter().map(String::as_str).collect();
            let ok = dag.eligible_internal_nodes(cfg.bounds).into_iter().any(|n| {
                let span: BTreeSet<&str> = dag.leaves_spanned(n).unwrap().into_iter().collect();
                if span.len() <= cfg.max_ways {
                    span == classes
                } else {
                    classes.len() == cfg.max_ways && classes.is_subset(&span)
                }
            });
            if !ok {
                v.push("class set is not drawn from an eligible node".into());
            }
        }
    }
    v
}
