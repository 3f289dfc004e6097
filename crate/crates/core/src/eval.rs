//! Reporting statistics: accuracy with 95% confidence intervals, tie-aware
//! per-dataset ranks, average ranks, and binned curves over way, shot and
//! LCA height.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Normal-approximation multiplier for a 95% interval.
pub const CI95_Z: f64 = 1.96;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("at least 2 episodes are needed for a confidence interval, got {0}")]
    TooFewEpisodes(usize),
    #[error("no cell for method {method:?} on dataset {dataset:?}")]
    MissingCell { method: String, dataset: String },
    #[error("unknown binning axis {0:?} (expected way, shot or lca_height)")]
    UnknownAxis(String),
    #[error("episode result lacks the {0} attribute")]
    MissingAttribute(&'static str),
    #[error("invalid episode result: {0}")]
    InvalidResult(String),
    #[error("nothing to rank")]
    Empty,
}

/// Outcome of one evaluation episode, one JSON object per line on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    pub dataset: String,
    pub way: usize,
    pub shots: Vec<usize>,
    /// One 0/1 entry per query item.
    pub correct: Vec<u8>,
    pub per_class_precision: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lca_height: Option<usize>,
}

impl EpisodeResult {
    /// Builds a result from true and predicted labels of the query items.
    /// A class that is never predicted gets precision 0.
    pub fn from_predictions(dataset: &str, shots: Vec<usize>, truth: &[usize], predicted: &[usize]) -> Self {
        let way = shots.len();
        let mut predicted_as = vec![0usize; way];
        let mut true_pos = vec![0usize; way];
        let correct: Vec<u8> = truth
            .iter()
            .zip(predicted)
            .map(|(&t, &p)| {
                predicted_as[p] += 1;
                if t == p {
                    true_pos[p] += 1;
                }
                u8::from(t == p)
            })
            .collect();
        let per_class_precision = (0..way)
            .map(|k| {
                if predicted_as[k] == 0 {
                    0.0
                } else {
                    true_pos[k] as f64 / predicted_as[k] as f64
                }
            })
            .collect();
        Self {
            method: None,
            dataset: dataset.to_string(),
            way,
            shots,
            correct,
            per_class_precision,
            lca_height: None,
        }
    }

    pub fn accuracy(&self) -> f64 {
        if self.correct.is_empty() {
            return 0.0;
        }
        self.correct.iter().map(|&b| f64::from(b)).sum::<f64>() / self.correct.len() as f64
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: String| Err(EvalError::InvalidResult(m));
        if self.shots.len() != self.way {
            return bad(format!("{} shots for way {}", self.shots.len(), self.way));
        }
        if self.per_class_precision.len() != self.way {
            return bad(format!("{} precisions for way {}", self.per_class_precision.len(), self.way));
        }
        if self.way == 0 || self.correct.is_empty() || self.correct.len() % self.way != 0 {
            return bad(format!("{} query outcomes for way {}", self.correct.len(), self.way));
        }
        if self.correct.iter().any(|&b| b > 1) {
            return bad("correctness entries must be 0 or 1".into());
        }
        if self.per_class_precision.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return bad("precision outside [0, 1]".into());
        }
        Ok(())
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("result serializes")
    }
}

/// Mean accuracy and 95% CI halfwidth over episodes, both in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateCell {
    pub mean: f64,
    pub ci_halfwidth: f64,
    pub n: usize,
}

/// `(mean, 1.96 * s / sqrt(n))` with the `n - 1` sample deviation.
fn mean_and_halfwidth(values: &[f64]) -> Result<(f64, f64), EvalError> {
    let n = values.len();
    if n < 2 {
        return Err(EvalError::TooFewEpisodes(n));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    let sd = (ss / (n - 1) as f64).sqrt();
    Ok((mean, CI95_Z * sd / (n as f64).sqrt()))
}

/// Aggregates per-episode accuracies given as fractions in `[0, 1]`.
pub fn aggregate_accuracies(accuracies: &[f64]) -> Result<AggregateCell, EvalError> {
    let (mean, hw) = mean_and_halfwidth(accuracies)?;
    Ok(AggregateCell {
        mean: 100.0 * mean,
        ci_halfwidth: 100.0 * hw,
        n: accuracies.len(),
    })
}

/// Aggregates the results of one method on one dataset.
pub fn aggregate(results: &[EpisodeResult]) -> Result<AggregateCell, EvalError> {
    let acc: Vec<f64> = results.iter().map(EpisodeResult::accuracy).collect();
    aggregate_accuracies(&acc)
}

/// Whether a 95% test on the difference of two independent means fails to
/// reject equality: `|m1 - m2| < sqrt(h1^2 + h2^2)`. Equal means always tie.
pub fn ties(a: &AggregateCell, b: &AggregateCell) -> bool {
    let diff = (a.mean - b.mean).abs();
    diff == 0.0 || diff < a.ci_halfwidth.hypot(b.ci_halfwidth)
}

/// Ranks methods on one dataset, best first, with tied methods sharing the
/// average of the positions they occupy.
///
/// Methods are sorted by mean accuracy (descending; larger halfwidth first
/// among equal means). A tie group opens at the best unranked method and
/// absorbs each following method that ties with that opening method.
pub fn rank_methods(cells: &[AggregateCell]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..cells.len()).collect();
    order.sort_by(|&i, &j| {
        cells[j]
            .mean
            .total_cmp(&cells[i].mean)
            .then(cells[j].ci_halfwidth.total_cmp(&cells[i].ci_halfwidth))
    });
    let mut ranks = vec![0.0; cells.len()];
    let mut start = 0;
    while start < order.len() {
        let leader = &cells[order[start]];
        let mut end = start + 1;
        while end < order.len() && ties(leader, &cells[order[end]]) {
            end += 1;
        }
        // Positions start+1 ..= end, averaged.
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// Methods by datasets table of cells with per-dataset ranks and the
/// per-method average rank.
#[derive(Debug, Clone, PartialEq)]
pub struct RankTable {
    pub methods: Vec<String>,
    pub datasets: Vec<String>,
    /// `cells[d][m]`
    pub cells: Vec<Vec<AggregateCell>>,
    /// `ranks[d][m]`
    pub ranks: Vec<Vec<f64>>,
    pub average_rank: Vec<f64>,
}

impl RankTable {
    /// Builds the table; every (method, dataset) pair must have a cell.
    pub fn build(
        methods: &[String],
        datasets: &[String],
        cells: &BTreeMap<(String, String), AggregateCell>,
    ) -> Result<Self, EvalError> {
        if methods.is_empty() || datasets.is_empty() {
            return Err(EvalError::Empty);
        }
        let mut grid = Vec::with_capacity(datasets.len());
        for d in datasets {
            let mut row = Vec::with_capacity(methods.len());
            for m in methods {
                let cell = cells.get(&(m.clone(), d.clone())).ok_or_else(|| EvalError::MissingCell {
                    method: m.clone(),
                    dataset: d.clone(),
                })?;
                row.push(*cell);
            }
            grid.push(row);
        }
        let ranks: Vec<Vec<f64>> = grid.iter().map(|row| rank_methods(row)).collect();
        let average_rank = average_rank(&ranks)?;
        Ok(Self {
            methods: methods.to_vec(),
            datasets: datasets.to_vec(),
            cells: grid,
            ranks,
            average_rank,
        })
    }

    /// `method,dataset,mean,ci,rank` rows, then one `method,avg_rank,,,<avg>`
    /// row per method.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,dataset,mean,ci,rank\n");
        for (d, dataset) in self.datasets.iter().enumerate() {
            for (m, method) in self.methods.iter().enumerate() {
                let c = &self.cells[d][m];
                let _ = writeln!(
                    out,
                    "{},{},{:.2},{:.2},{}",
                    csv_field(method),
                    csv_field(dataset),
                    c.mean,
                    c.ci_halfwidth,
                    self.ranks[d][m]
                );
            }
        }
        for (m, method) in self.methods.iter().enumerate() {
            let _ = writeln!(out, "{},avg_rank,,,{}", csv_field(method), round_to(self.average_rank[m], 10));
        }
        out
    }
}

fn round_to(x: f64, digits: i32) -> f64 {
    let f = 10f64.powi(digits);
    (x * f).round() / f
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Arithmetic mean over datasets of each method's rank; `ranks[d][m]`.
pub fn average_rank(ranks: &[Vec<f64>]) -> Result<Vec<f64>, EvalError> {
    let Some(first) = ranks.first() else {
        return Err(EvalError::Empty);
    };
    let m = first.len();
    if ranks.iter().any(|r| r.len() != m) {
        return Err(EvalError::MissingCell {
            method: "?".into(),
            dataset: "?".into(),
        });
    }
    Ok((0..m)
        .map(|j| ranks.iter().map(|r| r[j]).sum::<f64>() / ranks.len() as f64)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinAxis {
    Way,
    Shot,
    LcaHeight,
}

impl BinAxis {
    pub fn as_str(&self) -> &'static str {
        match self {
            BinAxis::Way => "way",
            BinAxis::Shot => "shot",
            BinAxis::LcaHeight => "lca_height",
        }
    }
}

impl FromStr for BinAxis {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "way" => Ok(BinAxis::Way),
            "shot" => Ok(BinAxis::Shot),
            "lca_height" => Ok(BinAxis::LcaHeight),
            other => Err(EvalError::UnknownAxis(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub value: usize,
    /// Mean accuracy (way, lca_height) or precision (shot), as a fraction.
    pub mean: f64,
    pub ci_halfwidth: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinnedCurve {
    pub axis: BinAxis,
    pub bins: Vec<Bin>,
    /// `(bin value, n)` of bins dropped for having fewer than 2 samples.
    pub omitted: Vec<(usize, usize)>,
}

impl BinnedCurve {
    /// `axis,bin,mean,ci,n` rows; `label` prefixes the axis column when set
    /// (e.g. a method name).
    pub fn to_csv_rows(&self, label: Option<&str>) -> String {
        let mut out = String::new();
        let axis = match label {
            Some(l) => format!("{}:{}", csv_field(l), self.axis.as_str()),
            None => self.axis.as_str().to_string(),
        };
        for b in &self.bins {
            let _ = writeln!(out, "{axis},{},{},{},{}", b.value, b.mean, b.ci_halfwidth, b.n);
        }
        out
    }
}

pub const BINS_CSV_HEADER: &str = "axis,bin,mean,ci,n\n";

/// Groups results along an axis and reports each group's mean with a 95%
/// band. Way and LCA height bin per-episode accuracy; shot bins per-class
/// precision by that class's shot.
pub fn bin_reports(results: &[EpisodeResult], axis: BinAxis) -> Result<BinnedCurve, EvalError> {
    let mut groups: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in results {
        match axis {
            BinAxis::Way => groups.entry(r.way).or_default().push(r.accuracy()),
            BinAxis::LcaHeight => {
                let h = r.lca_height.ok_or(EvalError::MissingAttribute("lca_height"))?;
                groups.entry(h).or_default().push(r.accuracy());
            }
            BinAxis::Shot => {
                if r.shots.len() != r.per_class_precision.len() {
                    return Err(EvalError::InvalidResult("shots and precisions differ in length".into()));
                }
                for (&k, &p) in r.shots.iter().zip(&r.per_class_precision) {
                    groups.entry(k).or_default().push(p);
                }
            }
        }
    }
    let mut bins = Vec::new();
    let mut omitted = Vec::new();
    for (value, vals) in groups {
        match mean_and_halfwidth(&vals) {
            Ok((mean, ci_halfwidth)) => bins.push(Bin {
                value,
                mean,
                ci_halfwidth,
                n: vals.len(),
            }),
            Err(_) => omitted.push((value, vals.len())),
        }
    }
    Ok(BinnedCurve { axis, bins, omitted })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(mean: f64, h: f64) -> AggregateCell {
        AggregateCell {
            mean,
            ci_halfwidth: h,
            n: 600,
        }
    }

    fn result(way: usize, correct: Vec<u8>) -> EpisodeResult {
        EpisodeResult {
            method: None,
            dataset: "d".into(),
            way,
            shots: vec![1; way],
            correct,
            per_class_precision: vec![0.5; way],
            lca_height: None,
        }
    }

    #[test]
    fn perfect_accuracy_has_zero_width() {
        let c = aggregate_accuracies(&[1.0; 50]).unwrap();
        assert_eq!(c.mean, 100.0);
        assert_eq!(c.ci_halfwidth, 0.0);
    }

    #[test]
    fn alternating_accuracies_match_textbook_formula() {
        let acc: Vec<f64> = (0..400).map(|i| (i % 2) as f64).collect();
        let c = aggregate_accuracies(&acc).unwrap();
        // Independent route: Welford running variance.
        let (mut mean, mut m2) = (0.0, 0.0);
        for (i, &x) in acc.iter().enumerate() {
            let d = x - mean;
            mean += d / (i + 1) as f64;
            m2 += d * (x - mean);
        }
        let expected = 100.0 * 1.96 * (m2 / 399.0).sqrt() / 20.0;
        assert!((c.mean - 50.0).abs() < 1e-12);
        assert!((c.ci_halfwidth - expected).abs() < 1e-10, "{} {}", c.ci_halfwidth, expected);
        assert!((c.ci_halfwidth - 4.906_136_508_353_237).abs() < 1e-9);
    }

    #[test]
    fn single_episode_is_an_error() {
        assert_eq!(aggregate_accuracies(&[0.5]), Err(EvalError::TooFewEpisodes(1)));
        assert_eq!(aggregate(&[]), Err(EvalError::TooFewEpisodes(0)));
    }

    #[test]
    fn identical_cells_share_rank() {
        assert_eq!(rank_methods(&[cell(50.0, 1.0), cell(50.0, 1.0)]), vec![1.5, 1.5]);
        assert_eq!(rank_methods(&[cell(50.0, 0.0), cell(50.0, 0.0)]), vec![1.5, 1.5]);
    }

    #[test]
    fn ilsvrc_imagenet_row() {
        // k-NN, Finetune, MatchingNet, ProtoNet, fo-MAML, RelationNet, fo-Proto-MAML
        let row = [
            cell(41.03, 1.01),
            cell(45.78, 1.10),
            cell(45.00, 1.10),
            cell(50.50, 1.08),
            cell(45.51, 1.11),
            cell(34.69, 1.01),
            cell(49.53, 1.05),
        ];
        assert_eq!(rank_methods(&row), vec![6.0, 4.0, 4.0, 1.5, 4.0, 7.0, 1.5]);
    }

    #[test]
    fn textures_imagenet_row_three_way_tie() {
        let row = [
            cell(66.36, 0.75),
            cell(69.05, 0.90),
            cell(64.15, 0.85),
            cell(66.56, 0.83),
            cell(68.04, 0.81),
            cell(52.97, 0.69),
            cell(66.49, 0.83),
        ];
        assert_eq!(rank_methods(&row), vec![4.0, 1.5, 6.0, 4.0, 1.5, 7.0, 4.0]);
    }

    #[test]
    fn tie_group_anchored_at_its_best_member() {
        // 48.83 ties 47.80, 47.80 ties 47.12, but 48.83 does not tie 47.12.
        let row = [cell(48.83, 1.09), cell(47.80, 1.14), cell(47.12, 1.10)];
        assert_eq!(rank_methods(&row), vec![1.5, 1.5, 3.0]);
    }

    #[test]
    fn ranks_sum_and_permutation_invariance() {
        let row = vec![cell(10.0, 3.0), cell(12.0, 0.5), cell(11.0, 2.0), cell(30.0, 0.1), cell(11.0, 0.2)];
        let r = rank_methods(&row);
        let m = row.len() as f64;
        assert!((r.iter().sum::<f64>() - m * (m + 1.0) / 2.0).abs() < 1e-12);
        let perm = [3, 0, 4, 1, 2];
        let permuted: Vec<_> = perm.iter().map(|&i| row[i]).collect();
        let rp = rank_methods(&permuted);
        for (k, &i) in perm.iter().enumerate() {
            assert_eq!(rp[k], r[i]);
        }
    }

    #[test]
    fn average_rank_single_dataset() {
        let ranks = vec![vec![2.0, 1.0, 3.0]];
        assert_eq!(average_rank(&ranks).unwrap(), vec![2.0, 1.0, 3.0]);
        assert_eq!(average_rank(&[]), Err(EvalError::Empty));
    }

    #[test]
    fn rank_table_requires_every_cell() {
        let methods = vec!["a".to_string(), "b".to_string()];
        let datasets = vec!["x".to_string()];
        let mut cells = BTreeMap::new();
        cells.insert(("a".to_string(), "x".to_string()), cell(1.0, 0.1));
        assert!(matches!(
            RankTable::build(&methods, &datasets, &cells),
            Err(EvalError::MissingCell { .. })
        ));
        cells.insert(("b".to_string(), "x".to_string()), cell(2.0, 0.1));
        let t = RankTable::build(&methods, &datasets, &cells).unwrap();
        assert_eq!(t.average_rank, vec![2.0, 1.0]);
        let csv = t.to_csv();
        assert!(csv.starts_with("method,dataset,mean,ci,rank\n"));
        assert!(csv.contains("a,x,1.00,0.10,2\n"));
        assert!(csv.contains("b,avg_rank,,,1\n"));
    }

    #[test]
    fn single_way_bin() {
        let results: Vec<_> = (0..10).map(|i| result(5, vec![(i % 2) as u8; 10])).collect();
        let curve = bin_reports(&results, BinAxis::Way).unwrap();
        assert_eq!(curve.bins.len(), 1);
        let global: f64 = results.iter().map(|r| r.accuracy()).sum::<f64>() / 10.0;
        assert!((curve.bins[0].mean - global).abs() < 1e-15);
    }

    #[test]
    fn way_bins_reproduce_constructed_means() {
        let mut results = Vec::new();
        for way in 2..=10 {
            for _ in 0..3 {
                let mut correct = vec![0u8; way * way];
                for c in correct.iter_mut().take(way) {
                    *c = 1;
                }
                results.push(result(way, correct));
            }
        }
        let curve = bin_reports(&results, BinAxis::Way).unwrap();
        for b in &curve.bins {
            assert!((b.mean - 1.0 / b.value as f64).abs() < 1e-12);
            assert!(b.ci_halfwidth < 1e-12);
        }
    }

    #[test]
    fn singleton_bins_are_reported_as_omitted() {
        let results = vec![result(5, vec![1; 5]), result(5, vec![0; 5]), result(7, vec![1; 7])];
        let curve = bin_reports(&results, BinAxis::Way).unwrap();
        assert_eq!(curve.bins.len(), 1);
        assert_eq!(curve.omitted, vec![(7, 1)]);
    }

    #[test]
    fn lca_axis_requires_attribute_and_unknown_axis_errors() {
        let results = vec![result(2, vec![1, 0])];
        assert_eq!(
            bin_reports(&results, BinAxis::LcaHeight),
            Err(EvalError::MissingAttribute("lca_height"))
        );
        assert!(matches!("depth".parse::<BinAxis>(), Err(EvalError::UnknownAxis(_))));
    }

    #[test]
    fn precision_from_predictions() {
        let r = EpisodeResult::from_predictions("d", vec![1, 1, 1], &[0, 0, 1, 1, 2, 2], &[0, 1, 1, 1, 0, 0]);
        assert_eq!(r.correct, vec![1, 0, 1, 1, 0, 0]);
        assert_eq!(r.per_class_precision, vec![1.0 / 3.0, 2.0 / 3.0, 0.0]);
        r.validate().unwrap();
    }

    #[test]
    fn result_validation() {
        let mut r = result(2, vec![1, 0, 1, 1]);
        r.validate().unwrap();
        r.correct.push(1);
        assert!(r.validate().is_err());
        let mut r = result(2, vec![1, 0]);
        r.per_class_precision[0] = 1.5;
        assert!(r.validate().is_err());
    }
}
