//! Inputs and outputs of `fewshot report`.
//!
//! Inputs are episode-result files (JSON lines, `#` lines skipped) or cell
//! tables (CSV with at least `method,dataset,mean,ci` columns). Results
//! without a `method` field take the file stem as their method.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use fewshot_core::eval::{aggregate, bin_reports, AggregateCell, BinAxis, EpisodeResult, RankTable, BINS_CSV_HEADER};
use serde::Deserialize;

use crate::error::{read_text, CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportMode {
    Rank,
    Bins,
    Finegrain,
    TrainsourceDelta,
}

impl FromStr for ReportMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "rank" => Ok(ReportMode::Rank),
            "bins" => Ok(ReportMode::Bins),
            "finegrain" => Ok(ReportMode::Finegrain),
            "trainsource_delta" => Ok(ReportMode::TrainsourceDelta),
            other => Err(format!(
                "unknown mode {other:?} (expected rank, bins, finegrain or trainsource_delta)"
            )),
        }
    }
}

/// One input file, either raw episode results or pre-aggregated cells.
#[derive(Debug, Clone)]
pub enum Input {
    Results(Vec<EpisodeResult>),
    Cells(Vec<(String, String, AggregateCell)>),
}

#[derive(Deserialize)]
struct CellRow {
    method: String,
    dataset: String,
    mean: f64,
    ci: f64,
    #[serde(default)]
    n: Option<usize>,
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

pub fn read_input(path: &Path) -> Result<Input> {
    let text = read_text(path)?;
    let bad = |line: usize, e: &dyn std::fmt::Display| CliError::Validation(format!("{}:{line}: {e}", path.display()));
    if path.extension().is_some_and(|e| e == "csv") {
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut cells = Vec::new();
        for row in reader.deserialize::<CellRow>() {
            let row = row.map_err(|e| bad(e.position().map_or(0, |p| p.line() as usize), &e))?;
            let cell = AggregateCell {
                mean: row.mean,
                ci_halfwidth: row.ci,
                n: row.n.unwrap_or(0),
            };
            cells.push((row.method, row.dataset, cell));
        }
        return Ok(Input::Cells(cells));
    }
    let method = stem(path);
    let mut results = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut r: EpisodeResult = serde_json::from_str(line).map_err(|e| bad(i + 1, &e))?;
        r.validate().map_err(|e| bad(i + 1, &e))?;
        r.method.get_or_insert_with(|| method.clone());
        results.push(r);
    }
    Ok(Input::Results(results))
}

fn push_unique(list: &mut Vec<String>, s: &str) {
    if !list.iter().any(|x| x == s) {
        list.push(s.to_string());
    }
}

/// `(method, dataset) -> cell` plus methods and datasets in order of first
/// appearance.
pub struct CellSet {
    pub methods: Vec<String>,
    pub datasets: Vec<String>,
    pub cells: BTreeMap<(String, String), AggregateCell>,
}

pub fn cells_of(inputs: &[Input]) -> Result<CellSet> {
    let mut set = CellSet {
        methods: Vec::new(),
        datasets: Vec::new(),
        cells: BTreeMap::new(),
    };
    let mut grouped: BTreeMap<(String, String), Vec<EpisodeResult>> = BTreeMap::new();
    for input in inputs {
        match input {
            Input::Cells(cells) => {
                for (m, d, c) in cells {
                    push_unique(&mut set.methods, m);
                    push_unique(&mut set.datasets, d);
                    if set.cells.insert((m.clone(), d.clone()), *c).is_some() {
                        return Err(CliError::Validation(format!("two cells for {m} on {d}")));
                    }
                }
            }
            Input::Results(results) => {
                for r in results {
                    let m = r.method.clone().unwrap_or_default();
                    push_unique(&mut set.methods, &m);
                    push_unique(&mut set.datasets, &r.dataset);
                    grouped.entry((m, r.dataset.clone())).or_default().push(r.clone());
                }
            }
        }
    }
    for (key, results) in grouped {
        if set.cells.contains_key(&key) {
            return Err(CliError::Validation(format!("two cells for {} on {}", key.0, key.1)));
        }
        let cell = aggregate(&results)?;
        set.cells.insert(key, cell);
    }
    if set.cells.is_empty() {
        return Err(CliError::Validation("no results in the inputs".into()));
    }
    Ok(set)
}

pub fn rank_report(inputs: &[Input]) -> Result<String> {
    let set = cells_of(inputs)?;
    Ok(RankTable::build(&set.methods, &set.datasets, &set.cells)?.to_csv())
}

fn results_by_method(inputs: &[Input]) -> Result<BTreeMap<String, Vec<EpisodeResult>>> {
    let mut out: BTreeMap<String, Vec<EpisodeResult>> = BTreeMap::new();
    for input in inputs {
        match input {
            Input::Results(rs) => {
                for r in rs {
                    out.entry(r.method.clone().unwrap_or_default()).or_default().push(r.clone());
                }
            }
            Input::Cells(_) => {
                return Err(CliError::Validation("binned reports need episode results, not cell tables".into()))
            }
        }
    }
    if out.is_empty() {
        return Err(CliError::Validation("no results in the inputs".into()));
    }
    Ok(out)
}

/// Binned curves along `axes` per method; omitted bins are returned as
/// notes.
pub fn bins_report(inputs: &[Input], axes: &[BinAxis]) -> Result<(String, Vec<String>)> {
    let by_method = results_by_method(inputs)?;
    let label = by_method.len() > 1;
    let mut csv = String::from(BINS_CSV_HEADER);
    let mut notes = Vec::new();
    for (method, results) in &by_method {
        for &axis in axes {
            let curve = bin_reports(results, axis)?;
            csv.push_str(&curve.to_csv_rows(label.then_some(method.as_str())));
            for (value, n) in &curve.omitted {
                notes.push(format!("{method}: {} bin {value} omitted (n = {n})", axis.as_str()));
            }
        }
    }
    Ok((csv, notes))
}

/// Accuracy change from the reference inputs to the other inputs, for every
/// (method, dataset) present in both.
pub fn delta_report(reference: &[Input], other: &[Input]) -> Result<String> {
    let a = cells_of(reference)?;
    let b = cells_of(other)?;
    let mut out = String::from("method,dataset,reference,mean,delta\n");
    for m in &b.methods {
        for d in &b.datasets {
            let key = (m.clone(), d.clone());
            if let (Some(ca), Some(cb)) = (a.cells.get(&key), b.cells.get(&key)) {
                let _ = writeln!(out, "{m},{d},{:.4},{:.4},{:.4}", ca.mean, cb.mean, cb.mean - ca.mean);
            }
        }
    }
    Ok(out)
}
