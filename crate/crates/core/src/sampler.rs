//! Episode generation.
//!
//! An episode is drawn in three stages: pick a dataset uniformly among those
//! able to form an episode in the requested split, pick its class set with
//! the procedure matching the dataset kind, then size and fill the support
//! and query sets.
//!
//! Draw order within an episode is fixed: dataset, classes, beta, alphas,
//! query ids, support ids. Each stage reads its own stream derived from
//! `(base_seed, episode_index, stage tag)`, so an episode is a pure function
//! of the catalog, the config, the split and its [`SeedContext`].
//!
//! Sizing, with `|Im(c)|` the example count of class `c`:
//!
//! ```text
//! q    = min(10, min_c floor(|Im(c)| / 2))
//! |S|  = min(500, sum_c ceil(beta * min(100, |Im(c)| - q)))      beta ~ U(0, 1]
//! R_c  = exp(a_c) |Im(c)| / sum_c' exp(a_c') |Im(c')|            a_c ~ U[log 1/2, log 2)
//! k_c  = min(floor(R_c (|S| - |C|)) + 1, |Im(c)| - q)
//! ```

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{Catalog, DatasetKind, Split};
use crate::hierarchy::{ClassDag, EligibilityBounds, NodeIx};
use crate::rng::{tag, SeedContext, SeedStream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub min_ways: usize,
    /// Upper bound on the way of an episode.
    pub max_ways: usize,
    pub max_support_total: usize,
    pub max_support_per_class: usize,
    pub max_query_per_class: usize,
    /// `(lo, hi]`; beta is drawn uniformly from it.
    pub beta_interval: (f64, f64),
    /// `[lo, hi)`; each alpha is drawn uniformly from it.
    pub alpha_log_interval: (f64, f64),
    pub bounds: EligibilityBounds,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            min_ways: 5,
            max_ways: 50,
            max_support_total: 500,
            max_support_per_class: 100,
            max_query_per_class: 10,
            beta_interval: (0.0, 1.0),
            alpha_log_interval: (0.5f64.ln(), 2f64.ln()),
            bounds: EligibilityBounds::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SamplerError {
    #[error("invalid sampler config: {0}")]
    Config(String),
    #[error("no dataset can form an episode in split {0}")]
    NoEligibleDataset(Split),
    #[error("unknown dataset {0:?}")]
    UnknownDataset(String),
    #[error("dataset {dataset:?} has {available} classes in split {split}, {needed} are required")]
    NotEnoughClasses {
        dataset: String,
        split: Split,
        available: usize,
        needed: usize,
    },
    #[error("dataset {0:?} has no eligible hierarchy node in the requested split")]
    NoEligibleNode(String),
    #[error("dataset {0:?} has no alphabet with enough characters in the requested split")]
    AlphabetTooSmall(String),
    #[error("dataset {0:?} is hierarchical but its hierarchy is missing or invalid")]
    MissingHierarchy(String),
    #[error("class {class:?} has {available} examples, {needed} are required")]
    NotEnoughExamples {
        class: String,
        available: usize,
        needed: usize,
    },
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        let bad = |m: &str| Err(SamplerError::Config(m.to_string()));
        if self.min_ways < 2 {
            return bad("min_ways must be at least 2");
        }
        if self.max_ways < self.min_ways {
            return bad("max_ways must be at least min_ways");
        }
        if self.max_support_total == 0 || self.max_support_per_class == 0 || self.max_query_per_class == 0 {
            return bad("all caps must be positive");
        }
        if self.max_support_total < self.max_ways {
            return bad("max_support_total must allow one support example per class");
        }
        let (blo, bhi) = self.beta_interval;
        if !(blo >= 0.0 && blo < bhi && bhi <= 1.0) {
            return bad("beta interval must satisfy 0 <= lo < hi <= 1");
        }
        let (alo, ahi) = self.alpha_log_interval;
        if !(alo.is_finite() && ahi.is_finite() && alo < ahi) {
            return bad("alpha interval must be finite and nonempty");
        }
        if self.bounds.min_span < 1 || self.bounds.min_span > self.bounds.max_span {
            return bad("eligibility bounds must satisfy 1 <= min <= max");
        }
        Ok(())
    }

    /// Per-class query size.
    pub fn query_size(&self, class_sizes: &[usize]) -> usize {
        let half = class_sizes.iter().map(|&n| n / 2).min().unwrap_or(0);
        half.min(self.max_query_per_class)
    }

    /// Total support budget for a given beta.
    pub fn support_size(&self, beta: f64, class_sizes: &[usize], q: usize) -> usize {
        let total: usize = class_sizes
            .iter()
            .map(|&n| (beta * (n - q).min(self.max_support_per_class) as f64).ceil() as usize)
            .sum();
        total.min(self.max_support_total)
    }

    /// Share `R_c` of the support set each class is entitled to.
    pub fn proportions(&self, alphas: &[f64], class_sizes: &[usize]) -> Vec<f64> {
        debug_assert_eq!(alphas.len(), class_sizes.len());
        let weights: Vec<f64> = alphas
            .iter()
            .zip(class_sizes)
            .map(|(a, &n)| a.exp() * n as f64)
            .collect();
        let total: f64 = weights.iter().sum();
        weights.iter().map(|w| w / total).collect()
    }

    /// Shot of every class: one guaranteed example plus its share of the
    /// remaining budget, capped by what is left after the query draw.
    pub fn shots(&self, alphas: &[f64], class_sizes: &[usize], support_size: usize, q: usize) -> Vec<usize> {
        let spare = support_size.saturating_sub(class_sizes.len()) as f64;
        self.proportions(alphas, class_sizes)
            .iter()
            .zip(class_sizes)
            .map(|(r, &n)| ((r * spare).floor() as usize + 1).min(n - q))
            .collect()
    }
}

/// Query size under the default caps.
pub fn compute_query_size(class_sizes: &[usize]) -> usize {
    SamplerConfig::default().query_size(class_sizes)
}

/// Support budget under the default caps.
pub fn compute_support_size(beta: f64, class_sizes: &[usize], q: usize) -> usize {
    SamplerConfig::default().support_size(beta, class_sizes, q)
}

/// Per-class shots.
pub fn compute_shots(alphas: &[f64], class_sizes: &[usize], support_size: usize, q: usize) -> Vec<usize> {
    SamplerConfig::default().shots(alphas, class_sizes, support_size, q)
}

/// One sampled task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub dataset: String,
    pub classes: Vec<String>,
    pub shots: Vec<usize>,
    #[serde(rename = "q")]
    pub query_per_class: usize,
    /// `(class index, example id)`, grouped by class.
    pub support: Vec<(usize, String)>,
    pub query: Vec<(usize, String)>,
}

impl EpisodeSpec {
    pub fn way(&self) -> usize {
        self.classes.len()
    }

    pub fn support_total(&self) -> usize {
        self.shots.iter().sum()
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("episode serializes")
    }

    pub fn from_json_line(line: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(line)
    }
}

enum ClassSource {
    /// Class positions (into `Catalog::classes`) in the split.
    Flat(Vec<usize>),
    Hierarchy {
        dag: ClassDag,
        eligible: Vec<NodeIx>,
        /// Leaf ordinal of the split DAG to class position.
        leaf_class: Vec<usize>,
    },
    /// Alphabets with at least `min_ways` characters in the split, by id.
    Alphabets(Vec<(String, Vec<usize>)>),
}

struct Source {
    dataset_id: String,
    classes: ClassSource,
    /// Every class of the dataset in the split, in catalog order.
    all_classes: Vec<usize>,
}

/// Precomputed per-split state for repeated episode draws.
pub struct EpisodeSampler<'a> {
    catalog: &'a Catalog,
    config: SamplerConfig,
    split: Split,
    sources: Vec<Source>,
}

impl<'a> EpisodeSampler<'a> {
    /// Indexes every dataset able to form an episode in `split`. Reserved
    /// datasets are excluded from train and valid.
    pub fn new(catalog: &'a Catalog, config: SamplerConfig, split: Split) -> Result<Self, SamplerError> {
        config.validate()?;
        let mut sources = Vec::new();
        for d in &catalog.datasets {
            if d.reserved_for_eval && split != Split::Test {
                continue;
            }
            if let Some(source) = build_source(catalog, &config, &d.dataset_id, d.kind, split)? {
                sources.push(source);
            }
        }
        if sources.is_empty() {
            return Err(SamplerError::NoEligibleDataset(split));
        }
        Ok(Self {
            catalog,
            config,
            split,
            sources,
        })
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.config
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn catalog(&self) -> &'a Catalog {
        self.catalog
    }

    /// Ids of the datasets episodes may be drawn from.
    pub fn dataset_ids(&self) -> Vec<&str> {
        self.sources.iter().map(|s| s.dataset_id.as_str()).collect()
    }

    fn source(&self, dataset_id: &str) -> Result<&Source, SamplerError> {
        self.sources
            .iter()
            .find(|s| s.dataset_id == dataset_id)
            .ok_or_else(|| SamplerError::UnknownDataset(dataset_id.to_string()))
    }

    /// Dataset choice, uniform over the eligible datasets.
    pub fn sample_dataset(&self, ctx: SeedContext) -> &str {
        let mut rng = ctx.stream(tag::DATASET);
        &self.sources[rng.index(self.sources.len())].dataset_id
    }

    /// Class set of one dataset, as positions into `Catalog::classes`.
    pub fn sample_class_positions(&self, dataset_id: &str, ctx: SeedContext) -> Result<Vec<usize>, SamplerError> {
        let source = self.source(dataset_id)?;
        let mut rng = ctx.stream(tag::CLASSES);
        let cfg = &self.config;
        Ok(match &source.classes {
            ClassSource::Flat(pool) => {
                let way = rng.range_inclusive(cfg.min_ways, cfg.max_ways.min(pool.len()));
                rng.choose_indices(pool.len(), way).into_iter().map(|i| pool[i]).collect()
            }
            ClassSource::Hierarchy {
                dag,
                eligible,
                leaf_class,
            } => {
                let node = eligible[rng.index(eligible.len())];
                let span = dag.span(node);
                let picked: Vec<u32> = if span.len() > cfg.max_ways {
                    rng.choose_indices(span.len(), cfg.max_ways)
                        .into_iter()
                        .map(|i| span[i])
                        .collect()
                } else {
                    span.to_vec()
                };
                picked.into_iter().map(|k| leaf_class[k as usize]).collect()
            }
            ClassSource::Alphabets(alphabets) => {
                let (_, chars) = &alphabets[rng.index(alphabets.len())];
                let way = rng.range_inclusive(cfg.min_ways, cfg.max_ways.min(chars.len()));
                rng.choose_indices(chars.len(), way).into_iter().map(|i| chars[i]).collect()
            }
        })
    }

    /// Ordered class ids of one dataset's class set.
    pub fn sample_class_set(&self, dataset_id: &str, ctx: SeedContext) -> Result<Vec<String>, SamplerError> {
        Ok(self
            .sample_class_positions(dataset_id, ctx)?
            .into_iter()
            .map(|i| self.catalog.classes[i].class_id.clone())
            .collect())
    }

    /// A full episode.
    pub fn sample(&self, ctx: SeedContext) -> Result<EpisodeSpec, SamplerError> {
        let dataset = self.sample_dataset(ctx).to_string();
        let classes = self.sample_class_positions(&dataset, ctx)?;
        Ok(self.fill_examples(&dataset, &classes, ctx))
    }

    /// Support and query for a given class set, sized by the imbalanced
    /// formulas.
    pub fn fill_examples(&self, dataset: &str, class_positions: &[usize], ctx: SeedContext) -> EpisodeSpec {
        let cfg = &self.config;
        let records: Vec<_> = class_positions.iter().map(|&i| &self.catalog.classes[i]).collect();
        let sizes: Vec<usize> = records.iter().map(|c| c.example_count).collect();

        let q = cfg.query_size(&sizes);
        let (blo, bhi) = cfg.beta_interval;
        let beta = blo + (bhi - blo) * ctx.stream(tag::BETA).unit_open_closed();
        let support_size = cfg.support_size(beta, &sizes, q);
        let mut alpha_rng = ctx.stream(tag::ALPHAS);
        let (alo, ahi) = cfg.alpha_log_interval;
        let alphas: Vec<f64> = sizes.iter().map(|_| alpha_rng.uniform(alo, ahi)).collect();
        let shots = cfg.shots(&alphas, &sizes, support_size, q);

        self.draw_examples(dataset, &records, shots, q, ctx)
    }

    fn draw_examples(
        &self,
        dataset: &str,
        records: &[&crate::catalog::ClassRecord],
        shots: Vec<usize>,
        q: usize,
        ctx: SeedContext,
    ) -> EpisodeSpec {
        let mut perms: Vec<Vec<usize>> = records.iter().map(|c| (0..c.example_count).collect()).collect();
        let mut query_rng = ctx.stream(tag::QUERY);
        let mut query = Vec::with_capacity(q * records.len());
        for (ci, perm) in perms.iter_mut().enumerate() {
            query_rng.partial_shuffle(perm, 0, q);
            query.extend(perm[..q].iter().map(|&e| (ci, records[ci].example_id(e))));
        }
        let mut support_rng = ctx.stream(tag::SUPPORT);
        let mut support = Vec::with_capacity(shots.iter().sum());
        for (ci, perm) in perms.iter_mut().enumerate() {
            let k = shots[ci];
            support_rng.partial_shuffle(perm, q, k);
            support.extend(perm[q..q + k].iter().map(|&e| (ci, records[ci].example_id(e))));
        }
        EpisodeSpec {
            dataset: dataset.to_string(),
            classes: records.iter().map(|c| c.class_id.clone()).collect(),
            shots,
            query_per_class: q,
            support,
            query,
        }
    }

    /// Balanced `way`-way `shot`-shot episode with `query` items per class,
    /// classes drawn uniformly from those with at least `shot + query`
    /// examples. Used for fixed-shape validation.
    pub fn sample_fixed(&self, shape: FixedShape, ctx: SeedContext) -> Result<EpisodeSpec, SamplerError> {
        let dataset = self.sample_dataset(ctx).to_string();
        self.sample_fixed_from(&dataset, shape, ctx)
    }

    pub fn sample_fixed_from(&self, dataset: &str, shape: FixedShape, ctx: SeedContext) -> Result<EpisodeSpec, SamplerError> {
        let source = self.source(dataset)?;
        let pool: Vec<usize> = source
            .all_classes
            .iter()
            .copied()
            .filter(|&i| self.catalog.classes[i].example_count >= shape.shot + shape.query)
            .collect();
        if pool.len() < shape.way {
            return Err(SamplerError::NotEnoughClasses {
                dataset: dataset.to_string(),
                split: self.split,
                available: pool.len(),
                needed: shape.way,
            });
        }
        let mut rng = ctx.stream(tag::CLASSES);
        let picked: Vec<_> = rng
            .choose_indices(pool.len(), shape.way)
            .into_iter()
            .map(|i| &self.catalog.classes[pool[i]])
            .collect();
        Ok(self.draw_examples(dataset, &picked, vec![shape.shot; shape.way], shape.query, ctx))
    }

    /// Two-way episode over two leaves chosen uniformly from a hierarchical
    /// dataset's split DAG, with the imbalanced sizing rules. Returns the
    /// episode and the LCA height of its two classes in the split DAG.
    pub fn sample_leaf_pair(&self, dataset: &str, ctx: SeedContext) -> Result<(EpisodeSpec, usize), SamplerError> {
        let source = self.source(dataset)?;
        let ClassSource::Hierarchy { dag, leaf_class, .. } = &source.classes else {
            return Err(SamplerError::MissingHierarchy(dataset.to_string()));
        };
        if leaf_class.len() < 2 {
            return Err(SamplerError::NotEnoughClasses {
                dataset: dataset.to_string(),
                split: self.split,
                available: leaf_class.len(),
                needed: 2,
            });
        }
        let mut rng = ctx.stream(tag::CLASSES);
        let picked = rng.choose_indices(leaf_class.len(), 2);
        let a = dag.leaf_by_ordinal(picked[0] as u32);
        let b = dag.leaf_by_ordinal(picked[1] as u32);
        let height = dag
            .lca_height(a, b)
            .map_err(|_| SamplerError::MissingHierarchy(dataset.to_string()))?;
        let classes = [leaf_class[picked[0]], leaf_class[picked[1]]];
        Ok((self.fill_examples(dataset, &classes, ctx), height))
    }

    /// The split sub-DAG of a hierarchical dataset.
    pub fn split_dag(&self, dataset: &str) -> Option<&ClassDag> {
        match &self.source(dataset).ok()?.classes {
            ClassSource::Hierarchy { dag, .. } => Some(dag),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedShape {
    pub way: usize,
    pub shot: usize,
    pub query: usize,
}

fn build_source(
    catalog: &Catalog,
    cfg: &SamplerConfig,
    dataset_id: &str,
    kind: DatasetKind,
    split: Split,
) -> Result<Option<Source>, SamplerError> {
    let in_split: Vec<usize> = catalog
        .classes
        .iter()
        .enumerate()
        .filter(|(_, c)| c.dataset_id == dataset_id && c.split == split)
        .map(|(i, _)| i)
        .collect();
    let classes = match kind {
        DatasetKind::Flat => {
            if in_split.len() < cfg.min_ways {
                return Ok(None);
            }
            ClassSource::Flat(in_split.clone())
        }
        DatasetKind::ImagenetDag => {
            if in_split.is_empty() {
                return Ok(None);
            }
            let full = catalog
                .dag(dataset_id)
                .ok_or_else(|| SamplerError::MissingHierarchy(dataset_id.to_string()))?;
            let dag = full.induce(in_split.iter().map(|&i| catalog.classes[i].class_id.as_str()));
            let eligible = dag.eligible_nodes(cfg.bounds);
            let position: BTreeMap<&str, usize> = in_split
                .iter()
                .map(|&i| (catalog.classes[i].class_id.as_str(), i))
                .collect();
            let mut leaf_class = Vec::with_capacity(dag.leaf_count());
            for leaf in dag.leaf_ids() {
                match position.get(leaf) {
                    Some(&i) => leaf_class.push(i),
                    None => return Err(SamplerError::MissingHierarchy(dataset_id.to_string())),
                }
            }
            if eligible.is_empty() {
                return Ok(None);
            }
            ClassSource::Hierarchy {
                dag,
                eligible,
                leaf_class,
            }
        }
        DatasetKind::OmniglotAlphabets => {
            let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
            for &i in &in_split {
                let alphabet = catalog.classes[i].alphabet_id.clone().unwrap_or_default();
                groups.entry(alphabet).or_default().push(i);
            }
            let eligible: Vec<(String, Vec<usize>)> = groups
                .into_iter()
                .filter(|(_, chars)| chars.len() >= cfg.min_ways)
                .collect();
            if eligible.is_empty() {
                return Ok(None);
            }
            ClassSource::Alphabets(eligible)
        }
    };
    Ok(Some(Source {
        dataset_id: dataset_id.to_string(),
        classes,
        all_classes: in_split,
    }))
}

/// Samples one episode without keeping the per-split index around.
pub fn sample_episode(
    catalog: &Catalog,
    config: &SamplerConfig,
    split: Split,
    ctx: SeedContext,
) -> Result<EpisodeSpec, SamplerError> {
    EpisodeSampler::new(catalog, config.clone(), split)?.sample(ctx)
}

/// Checks every structural invariant of an episode against its catalog.
/// Returns human-readable violations; empty means the episode is well formed.
///
/// `check_way` is false for fixed-shape and leaf-pair episodes, whose way is
/// chosen outside the configured range.
pub fn check_episode(spec: &EpisodeSpec, catalog: &Catalog, cfg: &SamplerConfig, split: Split, check_way: bool) -> Vec<String> {
    let mut v = Vec::new();
    let n = spec.classes.len();
    if check_way && !(cfg.min_ways..=cfg.max_ways).contains(&n) {
        v.push(format!("way {n} outside [{}, {}]", cfg.min_ways, cfg.max_ways));
    }
    if spec.shots.len() != n {
        v.push(format!("{} shots for {n} classes", spec.shots.len()));
        return v;
    }
    let total = spec.support_total();
    if total > cfg.max_support_total {
        v.push(format!("support total {total} > {}", cfg.max_support_total));
    }
    let q = spec.query_per_class;
    if q == 0 || q > cfg.max_query_per_class {
        v.push(format!("query per class {q} outside [1, {}]", cfg.max_query_per_class));
    }
    let mut distinct = HashSet::new();
    for (ci, class_id) in spec.classes.iter().enumerate() {
        if !distinct.insert(class_id) {
            v.push(format!("class {class_id} repeated"));
        }
        let Some(record) = catalog.class(&spec.dataset, class_id) else {
            v.push(format!("class {class_id} not in dataset {}", spec.dataset));
            continue;
        };
        if record.split != split {
            v.push(format!("class {class_id} is in split {}, not {split}", record.split));
        }
        let k = spec.shots[ci];
        if k == 0 {
            v.push(format!("class {class_id} has zero shots"));
        }
        if k + q > record.example_count {
            v.push(format!(
                "class {class_id}: {k} shots + {q} queries exceed {} examples",
                record.example_count
            ));
        }
        let mut seen = HashSet::new();
        let support: Vec<&String> = spec.support.iter().filter(|(c, _)| *c == ci).map(|(_, e)| e).collect();
        let query: Vec<&String> = spec.query.iter().filter(|(c, _)| *c == ci).map(|(_, e)| e).collect();
        if support.len() != k {
            v.push(format!("class {class_id}: {} support items, shot is {k}", support.len()));
        }
        if query.len() != q {
            v.push(format!("class {class_id}: {} query items, q is {q}", query.len()));
        }
        for e in support.iter().chain(&query) {
            if record.example_index(e).is_none() {
                v.push(format!("example {e} does not belong to class {class_id}"));
            }
            if !seen.insert(*e) {
                v.push(format!("example {e} used twice"));
            }
        }
    }
    if spec.support.iter().chain(&spec.query).any(|(c, _)| *c >= n) {
        v.push("class index out of range".to_string());
    }
    v
}

/// Convenience for callers that only need a raw stream tied to an episode.
pub fn episode_stream(ctx: SeedContext, step_tag: u64) -> SeedStream {
    ctx.stream(step_tag)
}
