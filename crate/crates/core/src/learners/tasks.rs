//! Turning episode specs into numeric batches, and a seeded Gaussian task
//! family that stands in for image features.

use std::collections::{BTreeSet, HashMap};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::LearnerError;
use crate::catalog::{
    assign_omniglot_splits, Catalog, ClassRecord, DatasetKind, DatasetRecord, HierarchyEdge, Split,
};
use crate::rng::{derive_seed, hash_str, tag, SeedStream};
use crate::sampler::EpisodeSpec;

/// Source of input vectors for catalog examples.
pub trait FeatureProvider: Sync {
    fn dim(&self) -> usize;
    fn features(&self, dataset: &str, class_id: &str, example_id: &str) -> Option<Vec<f64>>;
}

/// Support and query inputs of one episode, labels in `0..way`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeBatch {
    pub way: usize,
    pub support_x: Array2<f64>,
    pub support_y: Vec<usize>,
    pub query_x: Array2<f64>,
    pub query_y: Vec<usize>,
}

fn stack(
    items: &[(usize, String)],
    spec: &EpisodeSpec,
    provider: &dyn FeatureProvider,
) -> Result<(Array2<f64>, Vec<usize>), LearnerError> {
    let dim = provider.dim();
    let mut x = Array2::zeros((items.len(), dim));
    let mut y = Vec::with_capacity(items.len());
    for (row, (k, ex)) in items.iter().enumerate() {
        let class = spec
            .classes
            .get(*k)
            .ok_or_else(|| LearnerError::Shape(format!("class index {k} outside way {}", spec.way())))?;
        let v = provider
            .features(&spec.dataset, class, ex)
            .ok_or_else(|| LearnerError::MissingFeatures {
                dataset: spec.dataset.clone(),
                example: ex.clone(),
            })?;
        if v.len() != dim {
            return Err(LearnerError::Shape(format!("feature length {} != {dim}", v.len())));
        }
        x.row_mut(row).assign(&ndarray::ArrayView1::from(&v[..]));
        y.push(*k);
    }
    Ok((x, y))
}

impl EpisodeBatch {
    pub fn from_spec(spec: &EpisodeSpec, provider: &dyn FeatureProvider) -> Result<Self, LearnerError> {
        let (support_x, support_y) = stack(&spec.support, spec, provider)?;
        let (query_x, query_y) = stack(&spec.query, spec, provider)?;
        Ok(Self {
            way: spec.way(),
            support_x,
            support_y,
            query_x,
            query_y,
        })
    }
}

/// Stored feature vectors keyed by dataset and example id.
///
/// Text form, one example per line: `dataset<TAB>example_id<TAB>v1,v2,...`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureTable {
    dim: usize,
    rows: HashMap<(String, String), Vec<f64>>,
}

impl FeatureTable {
    pub fn new(dim: usize) -> Self {
        Self { dim, rows: HashMap::new() }
    }

    pub fn insert(&mut self, dataset: &str, example_id: &str, v: Vec<f64>) -> Result<(), LearnerError> {
        if v.len() != self.dim {
            return Err(LearnerError::Shape(format!("feature length {} != {}", v.len(), self.dim)));
        }
        self.rows.insert((dataset.to_string(), example_id.to_string()), v);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn parse(text: &str) -> Result<Self, LearnerError> {
        let mut table: Option<FeatureTable> = None;
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |what: &str| LearnerError::Shape(format!("feature table line {}: {what}", n + 1));
            let mut parts = line.split('\t');
            let (Some(ds), Some(ex), Some(vals), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
                return Err(bad("expected three tab-separated fields"));
            };
            let v = vals
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| bad(&e.to_string()))?;
            let t = table.get_or_insert_with(|| FeatureTable::new(v.len()));
            t.insert(ds, ex, v).map_err(|e| bad(&e.to_string()))?;
        }
        Ok(table.unwrap_or_default())
    }

    pub fn to_text(&self) -> String {
        let mut keys: Vec<_> = self.rows.keys().collect();
        keys.sort();
        let mut out = String::new();
        for k in keys {
            let vals: Vec<String> = self.rows[k].iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&format!("{}\t{}\t{}\n", k.0, k.1, vals.join(",")));
        }
        out
    }
}

impl FeatureProvider for FeatureTable {
    fn dim(&self) -> usize {
        self.dim
    }

    fn features(&self, dataset: &str, _class_id: &str, example_id: &str) -> Option<Vec<f64>> {
        self.rows.get(&(dataset.to_string(), example_id.to_string())).cloned()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatDatasetSpec {
    pub id: String,
    pub classes: usize,
    pub reserved: bool,
}

/// Balanced tree; leaves are the classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeDatasetSpec {
    pub id: String,
    pub branching: usize,
    pub depth: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphabetDatasetSpec {
    pub id: String,
    pub alphabets: usize,
    pub characters: usize,
    /// Alphabets at the end of the list held out for test.
    pub evaluation_alphabets: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticFamilyConfig {
    pub dim: usize,
    pub noise: f64,
    pub seed: u64,
    pub min_examples: usize,
    pub max_examples: usize,
    pub flat: Vec<FlatDatasetSpec>,
    pub tree: Option<TreeDatasetSpec>,
    pub alphabets: Option<AlphabetDatasetSpec>,
    /// Dataset whose validation split drives checkpoint selection.
    pub proxy: String,
}

impl Default for SyntheticFamilyConfig {
    fn default() -> Self {
        Self {
            dim: 16,
            noise: 0.2,
            seed: 0,
            min_examples: 20,
            max_examples: 40,
            flat: vec![
                FlatDatasetSpec { id: "gauss_a".into(), classes: 60, reserved: false },
                FlatDatasetSpec { id: "gauss_b".into(), classes: 40, reserved: false },
                FlatDatasetSpec { id: "gauss_heldout".into(), classes: 30, reserved: true },
            ],
            tree: Some(TreeDatasetSpec { id: "tree".into(), branching: 3, depth: 4 }),
            alphabets: Some(AlphabetDatasetSpec {
                id: "glyphs".into(),
                alphabets: 12,
                characters: 8,
                evaluation_alphabets: 3,
            }),
            proxy: "gauss_a".into(),
        }
    }
}

impl SyntheticFamilyConfig {
    /// Only flat, non-reserved datasets.
    pub fn flat_only(dim: usize, noise: f64, seed: u64) -> Self {
        Self {
            dim,
            noise,
            seed,
            flat: vec![
                FlatDatasetSpec { id: "gauss_a".into(), classes: 60, reserved: false },
                FlatDatasetSpec { id: "gauss_b".into(), classes: 40, reserved: false },
            ],
            tree: None,
            alphabets: None,
            ..Self::default()
        }
    }
}

/// Gaussian clusters: every class has a mean in R^D and its examples are the
/// mean plus `noise` times standard normal noise. Everything is a pure
/// function of the configured seed.
#[derive(Debug, Clone)]
pub struct SyntheticTaskFamily {
    pub config: SyntheticFamilyConfig,
    pub catalog: Catalog,
    means: HashMap<(String, String), Vec<f64>>,
}

fn gaussian(seed: u64, key: &str, index: u64, dim: usize, scale: f64) -> Vec<f64> {
    let mut rng = SeedStream::new(derive_seed(seed, hash_str(key) ^ index, tag::FAMILY));
    (0..dim).map(|_| scale * rng.normal()).collect()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

impl SyntheticTaskFamily {
    pub fn new(config: SyntheticFamilyConfig) -> Result<Self, LearnerError> {
        if config.dim == 0 || !(config.noise.is_finite() && config.noise >= 0.0) {
            return Err(LearnerError::Config("family needs dim > 0 and noise >= 0".into()));
        }
        if config.min_examples < 2 || config.max_examples < config.min_examples {
            return Err(LearnerError::Config("bad example count range".into()));
        }
        let seed = config.seed;
        let dim = config.dim;
        let mut catalog = Catalog::default();
        let mut means = HashMap::new();
        let mut counts = SeedStream::new(derive_seed(seed, 0, tag::FAMILY));
        let mut count = || counts.range_inclusive(config.min_examples, config.max_examples);
        let class = |ds: &str, id: &str, n: usize, split: Split, alphabet: Option<String>| ClassRecord {
            dataset_id: ds.to_string(),
            class_id: id.to_string(),
            split,
            example_count: n,
            alphabet_id: alphabet,
            example_ids: None,
        };

        for f in &config.flat {
            catalog.datasets.push(DatasetRecord {
                dataset_id: f.id.clone(),
                display_name: f.id.clone(),
                kind: DatasetKind::Flat,
                reserved_for_eval: f.reserved,
            });
            for c in 0..f.classes {
                let id = format!("c{c:03}");
                means.insert((f.id.clone(), id.clone()), gaussian(seed, &f.id, c as u64, dim, 1.0));
                catalog.classes.push(class(&f.id, &id, count(), Split::Unassigned, None));
            }
        }

        if let Some(t) = &config.tree {
            if t.branching < 3 || t.depth < 2 {
                return Err(LearnerError::Config("tree needs branching >= 3 and depth >= 2".into()));
            }
            catalog.datasets.push(DatasetRecord {
                dataset_id: t.id.clone(),
                display_name: t.id.clone(),
                kind: DatasetKind::ImagenetDag,
                reserved_for_eval: false,
            });
            // Each level adds an independent offset; summed over the path the
            // leaf mean has unit variance per coordinate.
            let scale = (1.0 / t.depth as f64).sqrt();
            let mut frontier = vec![("n".to_string(), vec![0.0; dim])];
            for _ in 0..t.depth {
                let mut next = Vec::new();
                for (node, mean) in &frontier {
                    for b in 0..t.branching {
                        let child = format!("{node}{b}");
                        let m = add(mean, &gaussian(seed, &format!("{}/{child}", t.id), 0, dim, scale));
                        catalog.hierarchy_edges.push(HierarchyEdge {
                            dataset_id: t.id.clone(),
                            parent: node.clone(),
                            child: child.clone(),
                        });
                        next.push((child, m));
                    }
                }
                frontier = next;
            }
            // Subtree n1 validates, n2 tests, every other root child trains.
            let dag = crate::hierarchy::ClassDag::from_edges(
                catalog
                    .hierarchy_edges
                    .iter()
                    .filter(|e| e.dataset_id == t.id)
                    .map(|e| (e.parent.as_str(), e.child.as_str())),
            )
            .map_err(|e| LearnerError::Config(e.to_string()))?;
            let splits = dag
                .cut_splits("n1", "n2")
                .map_err(|e| LearnerError::Config(e.to_string()))?;
            for (leaf, mean) in frontier {
                means.insert((t.id.clone(), leaf.clone()), mean);
                catalog.classes.push(class(&t.id, &leaf, count(), splits[&leaf], None));
            }
        }

        if let Some(a) = &config.alphabets {
            catalog.datasets.push(DatasetRecord {
                dataset_id: a.id.clone(),
                display_name: a.id.clone(),
                kind: DatasetKind::OmniglotAlphabets,
                reserved_for_eval: false,
            });
            let half = 0.5f64.sqrt();
            let mut records = Vec::new();
            for al in 0..a.alphabets {
                let alphabet = format!("alph{al:02}");
                let center = gaussian(seed, &format!("{}/{alphabet}", a.id), 0, dim, half);
                for ch in 0..a.characters {
                    let id = format!("{alphabet}_ch{ch:02}");
                    let m = add(&center, &gaussian(seed, &format!("{}/{id}", a.id), 0, dim, half));
                    means.insert((a.id.clone(), id.clone()), m);
                    records.push(class(&a.id, &id, count(), Split::Unassigned, Some(alphabet.clone())));
                }
            }
            let n_eval = a.evaluation_alphabets.min(a.alphabets);
            let names: Vec<String> = (0..a.alphabets).map(|i| format!("alph{i:02}")).collect();
            let background: BTreeSet<String> = names[..a.alphabets - n_eval].iter().cloned().collect();
            let evaluation: BTreeSet<String> = names[a.alphabets - n_eval..].iter().cloned().collect();
            let splits = assign_omniglot_splits(&records, &background, &evaluation)
                .map_err(|e| LearnerError::Config(e.to_string()))?;
            for (r, s) in records.iter_mut().zip(splits) {
                r.split = s;
            }
            catalog.classes.extend(records);
        }

        catalog
            .assign_missing_splits(seed)
            .map_err(|e| LearnerError::Config(e.to_string()))?;
        catalog.validate().map_err(|e| LearnerError::Config(e.to_string()))?;
        if catalog.dataset(&config.proxy).is_none() {
            return Err(LearnerError::Config(format!("proxy dataset `{}` is not in the family", config.proxy)));
        }
        Ok(Self { config, catalog, means })
    }

    pub fn class_mean(&self, dataset: &str, class_id: &str) -> Option<&[f64]> {
        self.means.get(&(dataset.to_string(), class_id.to_string())).map(|v| &v[..])
    }

    pub fn proxy(&self) -> &str {
        &self.config.proxy
    }

    /// Every train-split class across non-reserved datasets, as
    /// `(dataset, class record)`.
    pub fn train_classes(&self) -> Vec<&ClassRecord> {
        train_classes(&self.catalog)
    }
}

/// Train-split classes of all non-reserved datasets, in catalog order.
pub fn train_classes(catalog: &Catalog) -> Vec<&ClassRecord> {
    catalog
        .classes
        .iter()
        .filter(|c| c.split == Split::Train)
        .filter(|c| catalog.dataset(&c.dataset_id).is_some_and(|d| !d.reserved_for_eval))
        .collect()
}

impl FeatureProvider for SyntheticTaskFamily {
    fn dim(&self) -> usize {
        self.config.dim
    }

    fn features(&self, dataset: &str, class_id: &str, example_id: &str) -> Option<Vec<f64>> {
        let mean = self.class_mean(dataset, class_id)?;
        let key = format!("{dataset}\u{0}{class_id}\u{0}{example_id}");
        let mut rng = SeedStream::new(derive_seed(self.config.seed, hash_str(&key), tag::FEATURES));
        Some(mean.iter().map(|m| m + self.config.noise * rng.normal()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedContext;
    use crate::sampler::{EpisodeSampler, SamplerConfig};

    #[test]
    fn family_is_deterministic_and_valid() {
        let a = SyntheticTaskFamily::new(SyntheticFamilyConfig::default()).unwrap();
        let b = SyntheticTaskFamily::new(SyntheticFamilyConfig::default()).unwrap();
        assert_eq!(a.catalog, b.catalog);
        assert_eq!(a.features("tree", "n0000", "n0000/003"), b.features("tree", "n0000", "n0000/003"));
        assert_ne!(a.features("tree", "n0000", "n0000/003"), a.features("tree", "n0000", "n0000/004"));
    }

    #[test]
    fn split_pools_are_disjoint_and_nonempty() {
        let fam = SyntheticTaskFamily::new(SyntheticFamilyConfig::default()).unwrap();
        for ds in &fam.catalog.datasets {
            let mut seen = std::collections::HashSet::new();
            for c in fam.catalog.classes_of(&ds.dataset_id) {
                assert!(seen.insert(c.class_id.clone()));
                assert_ne!(c.split, Split::Unassigned);
                if ds.reserved_for_eval {
                    assert_eq!(c.split, Split::Test);
                }
            }
        }
        for split in Split::ASSIGNED {
            assert!(fam.catalog.classes.iter().any(|c| c.split == split));
        }
    }

    #[test]
    fn every_split_samples_episodes() {
        let fam = SyntheticTaskFamily::new(SyntheticFamilyConfig::default()).unwrap();
        for split in Split::ASSIGNED {
            let sampler = EpisodeSampler::new(&fam.catalog, SamplerConfig::default(), split).unwrap();
            for i in 0..20 {
                let spec = sampler.sample(SeedContext::new(9, i)).unwrap();
                let batch = EpisodeBatch::from_spec(&spec, &fam).unwrap();
                assert_eq!(batch.support_x.nrows(), spec.support_total());
                assert_eq!(batch.query_x.nrows(), spec.way() * spec.query_per_class);
                assert!(batch.support_y.iter().chain(&batch.query_y).all(|&y| y < batch.way));
            }
        }
    }

    #[test]
    fn noise_scale_is_respected() {
        let fam = SyntheticTaskFamily::new(SyntheticFamilyConfig::flat_only(8, 0.2, 1)).unwrap();
        let mean = fam.class_mean("gauss_a", "c000").unwrap().to_vec();
        let mut sq = 0.0;
        let n = 400;
        for i in 0..n {
            let v = fam.features("gauss_a", "c000", &format!("c000/{i:03}")).unwrap();
            sq += v.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
        let sd = (sq / (n * 8) as f64).sqrt();
        assert!((sd - 0.2).abs() < 0.02, "{sd}");
    }

    #[test]
    fn feature_table_round_trip() {
        let mut t = FeatureTable::new(2);
        t.insert("d", "a/000", vec![1.5, -0.25]).unwrap();
        t.insert("d", "a/001", vec![0.1, 3.0]).unwrap();
        let back = FeatureTable::parse(&t.to_text()).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.features("d", "a", "a/001"), Some(vec![0.1, 3.0]));
        assert!(FeatureTable::parse("d\tx\t1,2\nd\ty\t1\n").is_err());
        assert!(t.insert("d", "z", vec![1.0]).is_err());
    }

    #[test]
    fn missing_features_are_reported() {
        let t = FeatureTable::new(2);
        let spec = EpisodeSpec {
            dataset: "d".into(),
            classes: vec!["a".into()],
            shots: vec![1],
            query_per_class: 0,
            support: vec![(0, "a/000".into())],
            query: vec![],
        };
        assert!(matches!(
            EpisodeBatch::from_spec(&spec, &t),
            Err(LearnerError::MissingFeatures { .. })
        ));
    }
}
