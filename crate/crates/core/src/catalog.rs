//! Dataset and class manifest: parsing, validation and split assignment.
//!
//! The manifest is a line-oriented UTF-8 text format with tab-separated
//! fields. Blank lines and lines starting with `#` are ignored.
//!
//! ```text
//! D  dataset_id  name  kind  reserved{0|1}
//! C  dataset_id  class_id  example_count  split{train|valid|test|-}  alphabet_id_or_-
//! E  dataset_id  parent_node_id  child_node_id
//! ```

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hierarchy::ClassDag;
use crate::rng::SeedStream;

/// Smallest example count a class may declare; one example leaves no room
/// for a query item.
pub const MIN_EXAMPLES_PER_CLASS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Flat,
    ImagenetDag,
    OmniglotAlphabets,
}

impl DatasetKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            DatasetKind::Flat => "flat",
            DatasetKind::ImagenetDag => "imagenet_dag",
            DatasetKind::OmniglotAlphabets => "omniglot_alphabets",
        }
    }
}

impl FromStr for DatasetKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "flat" => Ok(DatasetKind::Flat),
            "imagenet_dag" => Ok(DatasetKind::ImagenetDag),
            "omniglot_alphabets" => Ok(DatasetKind::OmniglotAlphabets),
            other => Err(format!("unknown dataset kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Valid,
    Test,
    Unassigned,
}

impl Split {
    pub const ASSIGNED: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
            Split::Unassigned => "-",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            "-" => Ok(Split::Unassigned),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub dataset_id: String,
    pub display_name: String,
    pub kind: DatasetKind,
    /// Classes of a reserved dataset only ever appear in the test split.
    pub reserved_for_eval: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassRecord {
    pub dataset_id: String,
    pub class_id: String,
    pub split: Split,
    pub example_count: usize,
    pub alphabet_id: Option<String>,
    /// Explicit example identifiers; when absent they are synthesized as
    /// `class_id/000`, `class_id/001`, ...
    pub example_ids: Option<Vec<String>>,
}

impl ClassRecord {
    pub fn example_id(&self, index: usize) -> String {
        match &self.example_ids {
            Some(ids) => ids[index].clone(),
            None => format!("{}/{:03}", self.class_id, index),
        }
    }

    /// Inverse of [`ClassRecord::example_id`].
    pub fn example_index(&self, id: &str) -> Option<usize> {
        match &self.example_ids {
            Some(ids) => ids.iter().position(|x| x == id),
            None => {
                let i: usize = id.strip_prefix(self.class_id.as_str())?.strip_prefix('/')?.parse().ok()?;
                (i < self.example_count && self.example_id(i) == id).then_some(i)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HierarchyEdge {
    pub dataset_id: String,
    pub parent: String,
    pub child: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Catalog {
    pub datasets: Vec<DatasetRecord>,
    pub classes: Vec<ClassRecord>,
    pub hierarchy_edges: Vec<HierarchyEdge>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CatalogErrorKind {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("duplicate dataset id {0:?}")]
    DuplicateDataset(String),
    #[error("duplicate class id {class:?} in dataset {dataset:?}")]
    DuplicateClass { dataset: String, class: String },
    #[error("reference to undeclared dataset {0:?}")]
    UnknownDataset(String),
    #[error("hierarchy edge in dataset {dataset:?} of kind {kind}, only imagenet_dag datasets carry edges")]
    EdgeOnNonDag { dataset: String, kind: &'static str },
    #[error("dangling hierarchy leaf {node:?} in dataset {dataset:?} is not a declared class")]
    DanglingLeaf { dataset: String, node: String },
    #[error("class {class:?} of dag dataset {dataset:?} is not a leaf of its hierarchy")]
    ClassNotLeaf { dataset: String, class: String },
    #[error("hierarchy of dataset {0:?} contains a cycle")]
    Cycle(String),
    #[error("class {class:?} in dataset {dataset:?} has {count} examples, at least 2 are required")]
    TooFewExamples {
        dataset: String,
        class: String,
        count: usize,
    },
    #[error("class {class:?} in dataset {dataset:?}: alphabet id must be given iff the dataset is omniglot_alphabets")]
    AlphabetMismatch { dataset: String, class: String },
    #[error("class {class:?} of reserved dataset {dataset:?} is assigned to {split}")]
    ReservedNotTest {
        dataset: String,
        class: String,
        split: Split,
    },
    #[error("class {class:?} in dataset {dataset:?} has {ids} example ids but example_count {count}")]
    ExampleIdCount {
        dataset: String,
        class: String,
        ids: usize,
        count: usize,
    },
}

/// A catalog error with the manifest line it was found on, when known.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct CatalogError {
    pub line: Option<usize>,
    pub kind: CatalogErrorKind,
}

impl fmt::Display for CatalogError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}: {}", self.kind),
            None => write!(f, "{}", self.kind),
        }
    }
}

impl CatalogError {
    fn at(line: usize, kind: CatalogErrorKind) -> Self {
        Self {
            line: Some(line),
            kind,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SplitError {
    #[error("class {0:?} already has a split")]
    AlreadyAssigned(String),
    #[error("need at least 3 classes to split, got {0}")]
    TooFewClasses(usize),
    #[error("split fractions must be nonnegative and sum to 1")]
    BadFractions,
    #[error("need at least 6 background alphabets, got {0}")]
    TooFewBackgroundAlphabets(usize),
    #[error("alphabet {0:?} is both background and evaluation")]
    AlphabetOverlap(String),
    #[error("alphabet {0:?} is neither background nor evaluation")]
    UnlabeledAlphabet(String),
    #[error("class {0:?} has no alphabet id")]
    MissingAlphabet(String),
}

/// Line numbers of each record, kept alongside the catalog so that late
/// validation errors can point at the offending line.
#[derive(Debug, Default)]
struct LineIndex {
    datasets: HashMap<String, usize>,
    classes: HashMap<(String, String), usize>,
    edges: Vec<usize>,
}

fn split_fields(line: &str) -> Vec<&str> {
    line.split('\t').collect()
}

fn syntax(line: usize, msg: impl Into<String>) -> CatalogError {
    CatalogError::at(line, CatalogErrorKind::Syntax(msg.into()))
}

fn expect_fields(line: usize, fields: &[&str], n: usize, tag: &str) -> Result<(), CatalogError> {
    if fields.len() != n {
        return Err(syntax(
            line,
            format!("{tag} record needs {n} tab-separated fields, found {}", fields.len()),
        ));
    }
    if let Some(empty) = fields.iter().position(|f| f.is_empty()) {
        return Err(syntax(line, format!("field {} is empty", empty + 1)));
    }
    Ok(())
}

/// Parses and validates a manifest document.
pub fn parse_catalog(text: &str) -> Result<Catalog, CatalogError> {
    let (catalog, lines) = parse_records(text)?;
    validate_with_lines(&catalog, &lines)?;
    Ok(catalog)
}

/// Parses a manifest and lists every invariant violation, each with its
/// line. A syntax error stops parsing and is the only error returned.
pub fn check_manifest(text: &str) -> Result<Catalog, Vec<CatalogError>> {
    let (catalog, lines) = parse_records(text).map_err(|e| vec![e])?;
    let errors = collect_errors(&catalog, &lines);
    if errors.is_empty() {
        Ok(catalog)
    } else {
        Err(errors)
    }
}

fn parse_records(text: &str) -> Result<(Catalog, LineIndex), CatalogError> {
    let mut catalog = Catalog::default();
    let mut lines = LineIndex::default();

    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields = split_fields(line);
        match fields[0] {
            "D" => {
                expect_fields(lineno, &fields, 5, "D")?;
                let kind = fields[3].parse().map_err(|e: String| syntax(lineno, e))?;
                let reserved = match fields[4] {
                    "0" => false,
                    "1" => true,
                    other => return Err(syntax(lineno, format!("reserved flag must be 0 or 1, got {other:?}"))),
                };
                if lines.datasets.insert(fields[1].to_string(), lineno).is_some() {
                    return Err(CatalogError::at(
                        lineno,
                        CatalogErrorKind::DuplicateDataset(fields[1].to_string()),
                    ));
                }
                catalog.datasets.push(DatasetRecord {
                    dataset_id: fields[1].to_string(),
                    display_name: fields[2].to_string(),
                    kind,
                    reserved_for_eval: reserved,
                });
            }
            "C" => {
                expect_fields(lineno, &fields, 6, "C")?;
                let count: usize = fields[3]
                    .parse()
                    .map_err(|_| syntax(lineno, format!("example count {:?} is not a nonnegative integer", fields[3])))?;
                let split = fields[4].parse().map_err(|e: String| syntax(lineno, e))?;
                let alphabet = (fields[5] != "-").then(|| fields[5].to_string());
                let key = (fields[1].to_string(), fields[2].to_string());
                if lines.classes.insert(key, lineno).is_some() {
                    return Err(CatalogError::at(
                        lineno,
                        CatalogErrorKind::DuplicateClass {
                            dataset: fields[1].to_string(),
                            class: fields[2].to_string(),
                        },
                    ));
                }
                catalog.classes.push(ClassRecord {
                    dataset_id: fields[1].to_string(),
                    class_id: fields[2].to_string(),
                    split,
                    example_count: count,
                    alphabet_id: alphabet,
                    example_ids: None,
                });
            }
            "E" => {
                expect_fields(lineno, &fields, 4, "E")?;
                lines.edges.push(lineno);
                catalog.hierarchy_edges.push(HierarchyEdge {
                    dataset_id: fields[1].to_string(),
                    parent: fields[2].to_string(),
                    child: fields[3].to_string(),
                });
            }
            other => {
                return Err(syntax(lineno, format!("unknown record type {other:?}")));
            }
        }
    }

    Ok((catalog, lines))
}

/// Renders a catalog in manifest form. `parse_catalog(&serialize_catalog(c))`
/// reproduces `c` for any catalog without explicit example ids.
pub fn serialize_catalog(catalog: &Catalog) -> String {
    let mut out = String::new();
    for d in &catalog.datasets {
        out.push_str(&format!(
            "D\t{}\t{}\t{}\t{}\n",
            d.dataset_id,
            d.display_name,
            d.kind.as_str(),
            u8::from(d.reserved_for_eval)
        ));
    }
    for c in &catalog.classes {
        out.push_str(&format!(
            "C\t{}\t{}\t{}\t{}\t{}\n",
            c.dataset_id,
            c.class_id,
            c.example_count,
            c.split,
            c.alphabet_id.as_deref().unwrap_or("-")
        ));
    }
    for e in &catalog.hierarchy_edges {
        out.push_str(&format!("E\t{}\t{}\t{}\n", e.dataset_id, e.parent, e.child));
    }
    out
}

impl Catalog {
    /// Runs every catalog invariant.
    pub fn validate(&self) -> Result<(), CatalogError> {
        validate_with_lines(self, &LineIndex::default())
    }

    /// Runs every catalog invariant and returns all failures rather than the
    /// first one.
    pub fn validate_all(&self) -> Vec<CatalogError> {
        collect_errors(self, &LineIndex::default())
    }

    pub fn dataset(&self, dataset_id: &str) -> Option<&DatasetRecord> {
        self.datasets.iter().find(|d| d.dataset_id == dataset_id)
    }

    pub fn classes_of<'a>(&'a self, dataset_id: &'a str) -> impl Iterator<Item = &'a ClassRecord> + 'a {
        self.classes.iter().filter(move |c| c.dataset_id == dataset_id)
    }

    pub fn class(&self, dataset_id: &str, class_id: &str) -> Option<&ClassRecord> {
        self.classes
            .iter()
            .find(|c| c.dataset_id == dataset_id && c.class_id == class_id)
    }

    /// Builds the class hierarchy of a dag-kind dataset.
    pub fn dag(&self, dataset_id: &str) -> Option<ClassDag> {
        let edges: Vec<(&str, &str)> = self
            .hierarchy_edges
            .iter()
            .filter(|e| e.dataset_id == dataset_id)
            .map(|e| (e.parent.as_str(), e.child.as_str()))
            .collect();
        ClassDag::from_edges(edges).ok()
    }

    /// Assigns splits to datasets whose classes are all unassigned.
    ///
    /// Reserved datasets send every class to test. Flat datasets get the
    /// seeded 70/15/15 split. Hierarchical and alphabet datasets must carry
    /// explicit splits (see [`crate::hierarchy::ClassDag::cut_splits`] and
    /// [`assign_omniglot_splits`]); they are left untouched here.
    pub fn assign_missing_splits(&mut self, seed: u64) -> Result<(), SplitError> {
        let ids: Vec<(String, DatasetKind, bool)> = self
            .datasets
            .iter()
            .map(|d| (d.dataset_id.clone(), d.kind, d.reserved_for_eval))
            .collect();
        for (ds_index, (id, kind, reserved)) in ids.into_iter().enumerate() {
            let positions: Vec<usize> = self
                .classes
                .iter()
                .enumerate()
                .filter(|(_, c)| c.dataset_id == id)
                .map(|(i, _)| i)
                .collect();
            if positions.is_empty()
                || !positions.iter().all(|&i| self.classes[i].split == Split::Unassigned)
            {
                continue;
            }
            if reserved {
                for &i in &positions {
                    self.classes[i].split = Split::Test;
                }
            } else if kind == DatasetKind::Flat {
                let subset: Vec<ClassRecord> = positions.iter().map(|&i| self.classes[i].clone()).collect();
                let seed = crate::rng::derive_seed(seed, ds_index as u64, crate::rng::tag::SPLITS);
                let splits = assign_flat_splits(&subset, DEFAULT_FLAT_FRACTIONS, seed)?;
                for (&i, s) in positions.iter().zip(splits) {
                    self.classes[i].split = s;
                }
            }
        }
        Ok(())
    }

    /// Hash of the manifest rendering, used in run manifests.
    pub fn content_hash(&self) -> String {
        crate::sha256_hex(serialize_catalog(self).as_bytes())
    }
}

fn collect_errors(catalog: &Catalog, lines: &LineIndex) -> Vec<CatalogError> {
    let mut errors = Vec::new();
    let class_line = |c: &ClassRecord| {
        lines
            .classes
            .get(&(c.dataset_id.clone(), c.class_id.clone()))
            .copied()
    };

    let mut kinds: HashMap<&str, &DatasetRecord> = HashMap::new();
    for d in &catalog.datasets {
        if kinds.insert(d.dataset_id.as_str(), d).is_some() {
            errors.push(CatalogError {
                line: lines.datasets.get(&d.dataset_id).copied(),
                kind: CatalogErrorKind::DuplicateDataset(d.dataset_id.clone()),
            });
        }
    }

    let mut seen: HashSet<(&str, &str)> = HashSet::new();
    for c in &catalog.classes {
        let line = class_line(c);
        let err = |kind| CatalogError { line, kind };
        if !seen.insert((c.dataset_id.as_str(), c.class_id.as_str())) {
            errors.push(err(CatalogErrorKind::DuplicateClass {
                dataset: c.dataset_id.clone(),
                class: c.class_id.clone(),
            }));
        }
        let Some(d) = kinds.get(c.dataset_id.as_str()) else {
            errors.push(err(CatalogErrorKind::UnknownDataset(c.dataset_id.clone())));
            continue;
        };
        if c.example_count < MIN_EXAMPLES_PER_CLASS {
            errors.push(err(CatalogErrorKind::TooFewExamples {
                dataset: c.dataset_id.clone(),
                class: c.class_id.clone(),
                count: c.example_count,
            }));
        }
        if c.alphabet_id.is_some() != (d.kind == DatasetKind::OmniglotAlphabets) {
            errors.push(err(CatalogErrorKind::AlphabetMismatch {
                dataset: c.dataset_id.clone(),
                class: c.class_id.clone(),
            }));
        }
        if d.reserved_for_eval && matches!(c.split, Split::Train | Split::Valid) {
            errors.push(err(CatalogErrorKind::ReservedNotTest {
                dataset: c.dataset_id.clone(),
                class: c.class_id.clone(),
                split: c.split,
            }));
        }
        if let Some(ids) = &c.example_ids {
            if ids.len() != c.example_count {
                errors.push(err(CatalogErrorKind::ExampleIdCount {
                    dataset: c.dataset_id.clone(),
                    class: c.class_id.clone(),
                    ids: ids.len(),
                    count: c.example_count,
                }));
            }
        }
    }

    // Group edges per dataset, remembering the first line of each dataset's
    // edges for error positions.
    let mut edges: BTreeMap<&str, Vec<(&str, &str)>> = BTreeMap::new();
    let mut first_edge_line: HashMap<&str, usize> = HashMap::new();
    for (i, e) in catalog.hierarchy_edges.iter().enumerate() {
        let line = lines.edges.get(i).copied();
        match kinds.get(e.dataset_id.as_str()) {
            None => {
                errors.push(CatalogError {
                    line,
                    kind: CatalogErrorKind::UnknownDataset(e.dataset_id.clone()),
                });
                continue;
            }
            Some(d) if d.kind != DatasetKind::ImagenetDag => {
                errors.push(CatalogError {
                    line,
                    kind: CatalogErrorKind::EdgeOnNonDag {
                        dataset: e.dataset_id.clone(),
                        kind: d.kind.as_str(),
                    },
                });
                continue;
            }
            Some(_) => {}
        }
        if let Some(l) = line {
            first_edge_line.entry(e.dataset_id.as_str()).or_insert(l);
        }
        edges
            .entry(e.dataset_id.as_str())
            .or_default()
            .push((e.parent.as_str(), e.child.as_str()));
    }

    for d in catalog.datasets.iter().filter(|d| d.kind == DatasetKind::ImagenetDag) {
        let ds = d.dataset_id.as_str();
        let class_ids: BTreeSet<&str> = catalog.classes_of(ds).map(|c| c.class_id.as_str()).collect();
        let dag = match ClassDag::from_edges(edges.get(ds).cloned().unwrap_or_default()) {
            Ok(dag) => dag,
            Err(_) => {
                errors.push(CatalogError {
                    line: first_edge_line.get(ds).copied(),
                    kind: CatalogErrorKind::Cycle(ds.to_string()),
                });
                continue;
            }
        };
        for leaf in dag.leaf_ids() {
            if !class_ids.contains(leaf) {
                errors.push(CatalogError {
                    line: first_edge_line.get(ds).copied(),
                    kind: CatalogErrorKind::DanglingLeaf {
                        dataset: ds.to_string(),
                        node: leaf.to_string(),
                    },
                });
            }
        }
        for c in catalog.classes_of(ds) {
            if !dag.is_leaf_id(&c.class_id) {
                errors.push(CatalogError {
                    line: class_line(c),
                    kind: CatalogErrorKind::ClassNotLeaf {
                        dataset: ds.to_string(),
                        class: c.class_id.clone(),
                    },
                });
            }
        }
    }

    errors.sort_by_key(|e| e.line.unwrap_or(usize::MAX));
    errors
}

fn validate_with_lines(catalog: &Catalog, lines: &LineIndex) -> Result<(), CatalogError> {
    match collect_errors(catalog, lines).into_iter().next() {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

pub const DEFAULT_FLAT_FRACTIONS: (f64, f64, f64) = (0.70, 0.15, 0.15);

fn round_half_up(x: f64) -> usize {
    // The epsilon absorbs representation error such as 0.7 * 5 = 3.4999...
    (x + 0.5 + 1e-9).floor() as usize
}

/// Seeded class-count split for datasets without structure.
///
/// Classes are shuffled, then cut into contiguous train/valid/test runs of
/// `round(f_train * n)`, `round(f_valid * n)` and the remainder. The returned
/// vector is aligned with `classes`.
pub fn assign_flat_splits(
    classes: &[ClassRecord],
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<Vec<Split>, SplitError> {
    let (ft, fv, fe) = fractions;
    if ft < 0.0 || fv < 0.0 || fe < 0.0 || (ft + fv + fe - 1.0).abs() > 1e-9 {
        return Err(SplitError::BadFractions);
    }
    if let Some(c) = classes.iter().find(|c| c.split != Split::Unassigned) {
        return Err(SplitError::AlreadyAssigned(c.class_id.clone()));
    }
    let n = classes.len();
    if n < 3 {
        return Err(SplitError::TooFewClasses(n));
    }
    let n_train = round_half_up(ft * n as f64).min(n);
    let n_valid = round_half_up(fv * n as f64).min(n - n_train);

    let mut order: Vec<usize> = (0..n).collect();
    SeedStream::new(seed).shuffle(&mut order);
    let mut out = vec![Split::Test; n];
    for (pos, &i) in order.iter().enumerate() {
        out[i] = if pos < n_train {
            Split::Train
        } else if pos < n_train + n_valid {
            Split::Valid
        } else {
            Split::Test
        };
    }
    Ok(out)
}

/// Alphabet-level split: evaluation alphabets go to test, the five smallest
/// background alphabets (by character count, ties by id) to valid, the other
/// background alphabets to train. The result is aligned with `classes`.
pub fn assign_omniglot_splits(
    classes: &[ClassRecord],
    background: &BTreeSet<String>,
    evaluation: &BTreeSet<String>,
) -> Result<Vec<Split>, SplitError> {
    if let Some(a) = background.intersection(evaluation).next() {
        return Err(SplitError::AlphabetOverlap(a.clone()));
    }
    let mut sizes: BTreeMap<&str, usize> = BTreeMap::new();
    for c in classes {
        let a = c
            .alphabet_id
            .as_deref()
            .ok_or_else(|| SplitError::MissingAlphabet(c.class_id.clone()))?;
        if !background.contains(a) && !evaluation.contains(a) {
            return Err(SplitError::UnlabeledAlphabet(a.to_string()));
        }
        *sizes.entry(a).or_default() += 1;
    }
    if background.len() < 6 {
        return Err(SplitError::TooFewBackgroundAlphabets(background.len()));
    }
    let mut bg: Vec<(usize, &str)> = background
        .iter()
        .map(|a| (sizes.get(a.as_str()).copied().unwrap_or(0), a.as_str()))
        .collect();
    bg.sort();
    let valid: HashSet<&str> = bg.iter().take(5).map(|(_, a)| *a).collect();

    Ok(classes
        .iter()
        .map(|c| {
            let a = c.alphabet_id.as_deref().unwrap_or_default();
            if evaluation.contains(a) {
                Split::Test
            } else if valid.contains(a) {
                Split::Valid
            } else {
                Split::Train
            }
        })
        .collect())
}
