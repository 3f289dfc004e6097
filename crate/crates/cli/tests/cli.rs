use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use fewshot_core::catalog::{parse_catalog, serialize_catalog, Split};
use fewshot_core::learners::{SyntheticFamilyConfig, SyntheticTaskFamily};
use fewshot_core::sampler::{check_episode, EpisodeSpec, SamplerConfig};
use tempfile::TempDir;

fn fewshot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fewshot")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn family_manifest(dir: &Path) -> PathBuf {
    let family = SyntheticTaskFamily::new(SyntheticFamilyConfig::default()).unwrap();
    let path = dir.join("catalog.tsv");
    fs::write(&path, serialize_catalog(&family.catalog)).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn body(text: &str) -> Vec<&str> {
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("# fewshot ") && header.contains(" manifest="), "{header}");
    lines.collect()
}

#[test]
fn validate_accepts_a_clean_manifest() {
    let dir = TempDir::new().unwrap();
    let cat = family_manifest(dir.path());
    let o = fewshot(&["validate", "--catalog", s(&cat)]);
    assert_eq!(o.status.code(), Some(0));
    assert!(body(&stdout(&o))[0].starts_with("ok"));
}

#[test]
fn validate_names_every_bad_class_with_its_line() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("bad.tsv");
    let text = "D\tds\tSome data\tflat\t0\nC\tds\tlonely\t1\ttrain\t-\nC\tds\tfine\t5\ttrain\t-\nC\tds\talso_lonely\t0\ttest\t-\n";
    fs::write(&path, text).unwrap();
    let o = fewshot(&["validate", "--catalog", s(&path)]);
    assert_eq!(o.status.code(), Some(1));
    let out = stdout(&o);
    let lines = body(&out);
    assert_eq!(lines.len(), 2);
    assert!(lines[0].contains("line 2") && lines[0].contains("\"lonely\""));
    assert!(lines[1].contains("line 4") && lines[1].contains("\"also_lonely\""));
}

#[test]
fn missing_files_exit_with_io_code() {
    let o = fewshot(&["validate", "--catalog", "/nonexistent/catalog.tsv"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn usage_errors_are_config_errors() {
    assert_eq!(fewshot(&["sample", "--split", "train"]).status.code(), Some(1));
    let dir = TempDir::new().unwrap();
    let cat = family_manifest(dir.path());
    let out = dir.path().join("e.jsonl");
    let o = fewshot(&["sample", "--catalog", s(&cat), "--split", "everything", "--episodes", "1", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn zero_episodes_give_a_header_only_file() {
    let dir = TempDir::new().unwrap();
    let cat = family_manifest(dir.path());
    let out = dir.path().join("none.jsonl");
    let o = fewshot(&["sample", "--catalog", s(&cat), "--split", "train", "--episodes", "0", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0));
    assert!(body(&fs::read_to_string(&out).unwrap()).is_empty());
    assert!(dir.path().join("none.jsonl.manifest.json").exists());
}

#[test]
fn sampling_is_reproducible_and_valid() {
    let dir = TempDir::new().unwrap();
    let cat = family_manifest(dir.path());
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    for (out, threads) in [(&a, "1"), (&b, "4")] {
        let o = fewshot(&[
            "--threads", threads, "sample", "--catalog", s(&cat), "--split", "test", "--seed", "9", "--episodes", "300",
            "--out", s(out),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let catalog = parse_catalog(&fs::read_to_string(&cat).unwrap()).unwrap();
    let lines = body(&text);
    assert_eq!(lines.len(), 300);
    for line in lines {
        let spec = EpisodeSpec::from_json_line(line).unwrap();
        let v = check_episode(&spec, &catalog, &SamplerConfig::default(), Split::Test, true);
        assert!(v.is_empty(), "{v:?}");
    }
}

const SMOKE: &str = r#"
[learner]
kind = "protonet"
hidden = [32]
embedding_dim = 16
outer_lr = 0.003

[train]
episodes = 300
validate_every = 100
valid_episodes = 20

[eval]
episodes = 60
finegrain_episodes = 40
"#;

fn run(dir: &Path, config: &str, out: &str, extra: &[&str]) -> (Output, PathBuf) {
    let cfg = dir.join(format!("{out}.toml"));
    fs::write(&cfg, config).unwrap();
    let out = dir.join(out);
    let mut args = extra.to_vec();
    args.extend(["run", "--config", s(&cfg), "--out", s(&out), "--seed", "5"]);
    (fewshot(&args), out)
}

#[test]
fn protonet_smoke_run_is_fast_and_reproducible() {
    let dir = TempDir::new().unwrap();
    let start = Instant::now();
    let (o, a) = run(dir.path(), SMOKE, "a", &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(start.elapsed().as_secs() < 60);
    let (o, b) = run(dir.path(), SMOKE, "b", &["--threads", "3"]);
    assert_eq!(o.status.code(), Some(0));
    for f in ["results.jsonl", "finegrain.jsonl", "checkpoint.snap", "train_log.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    let results = fs::read_to_string(a.join("results.jsonl")).unwrap();
    // Five test sources in the default family.
    assert_eq!(body(&results).len(), 5 * 60);

    let report = dir.path().join("fine.csv");
    let o = fewshot(&["report", "--mode", "finegrain", "--out", s(&report), s(&a.join("finegrain.jsonl"))]);
    assert_eq!(o.status.code(), Some(0));
    let text = fs::read_to_string(&report).unwrap();
    assert_eq!(body(&text)[0], "axis,bin,mean,ci,n");
    assert!(body(&text)[1].starts_with("lca_height,"));
}

#[test]
fn inference_only_config_skips_training() {
    let dir = TempDir::new().unwrap();
    let cfg = "[learner]\nkind = \"protonet_inference\"\n\n[train]\npretrain_steps = 0\n\n[eval]\nepisodes = 10\n";
    let (o, out) = run(dir.path(), cfg, "inf", &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(body(&fs::read_to_string(out.join("results.jsonl")).unwrap()).len(), 50);
    assert_eq!(body(&fs::read_to_string(out.join("train_log.csv")).unwrap()), ["phase,step,value"]);
}

#[test]
fn diverging_training_exits_with_numeric_code() {
    let dir = TempDir::new().unwrap();
    let cfg = "[learner]\nkind = \"protonet\"\nouter_lr = 1e300\n\n[train]\nepisodes = 50\nvalidate_every = 0\n";
    let (o, _) = run(dir.path(), cfg, "boom", &[]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn bad_experiment_config_exits_with_config_code() {
    let dir = TempDir::new().unwrap();
    let (o, _) = run(dir.path(), "[learner]\nkind = \"protonet\"\ninner_lr = 0.1\n", "bad", &[]);
    assert_eq!(o.status.code(), Some(1));
}

fn printed(path: &Path) -> Vec<(String, String, String)> {
    let text = fs::read_to_string(path).unwrap();
    text.lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].to_string(), f[1].to_string(), f[f.len() - 1].to_string())
        })
        .collect()
}

#[test]
fn rank_report_reproduces_both_printed_tables() {
    for table in ["ranks_single_source", "ranks_all_sources"] {
        let o = fewshot(&["report", "--mode", "rank", s(&fixture(&format!("{table}.csv")))]);
        assert_eq!(o.status.code(), Some(0));
        let out = stdout(&o);
        let mut got = std::collections::BTreeMap::new();
        for line in body(&out).into_iter().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            got.insert((f[0].to_string(), f[1].to_string()), f[4].parse::<f64>().unwrap());
        }
        for (m, d, r) in printed(&fixture(&format!("{table}.csv"))) {
            assert_eq!(got[&(m.clone(), d.clone())], r.parse::<f64>().unwrap(), "{table} {m} {d}");
        }
        for (m, a, _) in printed(&fixture(&format!("{table}_avg.csv"))) {
            assert_eq!(got[&(m.clone(), "avg_rank".to_string())], a.parse::<f64>().unwrap(), "{table} {m}");
        }
    }
}

#[test]
fn delta_of_identical_inputs_is_zero() {
    let f = fixture("ranks_all_sources.csv");
    let o = fewshot(&["report", "--mode", "trainsource_delta", "--reference", s(&f), "--", s(&f)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    let rows = body(&out);
    assert_eq!(rows.len(), 71);
    assert!(rows[1..].iter().all(|r| r.ends_with(",0.0000")));
}

#[test]
fn report_without_inputs_fails() {
    assert_eq!(fewshot(&["report", "--mode", "rank"]).status.code(), Some(1));
    assert_eq!(fewshot(&["report", "--mode", "ranks", s(&fixture("ranks_all_sources.csv"))]).status.code(), Some(1));
}
