//! Command-line front end: `validate`, `sample`, `run` and `report`.

pub mod error;
pub mod experiment;
pub mod manifest;
pub mod report;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use fewshot_core::catalog::{check_manifest, Split};
use fewshot_core::eval::BinAxis;
use fewshot_core::rng::SeedContext;
use fewshot_core::sampler::{EpisodeSampler, SamplerConfig};
use rayon::prelude::*;

pub use error::{CliError, Result};
use error::{read_text, write_bytes};
use experiment::{run_experiment, ExperimentConfig};
use manifest::RunManifest;
use report::{bins_report, delta_report, rank_report, read_input, ReportMode};

#[derive(Debug, Parser)]
#[command(name = "fewshot", version, about = "Few-shot episode sampling, training and reporting")]
pub struct Cli {
    /// Worker threads; outputs do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check every catalog invariant.
    Validate {
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a stream of episodes, one JSON object per line.
    Sample {
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long)]
        split: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        episodes: u64,
        #[arg(long)]
        out: PathBuf,
        /// Sampler settings (TOML).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train a learner and evaluate it on every test source.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Rank tables, binned curves or training-source deltas as CSV.
    Report {
        #[arg(long)]
        mode: String,
        /// Reference inputs for `trainsource_delta`.
        #[arg(long, num_args = 1..)]
        reference: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
}

/// Parses arguments and runs the command. Help and version requests print
/// and return `Ok`.
pub fn execute<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(CliError::Config(e.to_string())),
    };
    match cli.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| CliError::Config(e.to_string()))?
            .install(|| dispatch(cli.command)),
        None => dispatch(cli.command),
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Validate { catalog, out } => cmd_validate(&catalog, out.as_deref()),
        Command::Sample {
            catalog,
            split,
            seed,
            episodes,
            out,
            config,
        } => cmd_sample(&catalog, &split, seed, episodes, &out, config.as_deref()),
        Command::Run { config, out, seed } => cmd_run(&config, &out, seed),
        Command::Report {
            mode,
            reference,
            out,
            inputs,
        } => cmd_report(&mode, &reference, &inputs, out.as_deref()),
    }
}

fn sidecar(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn emit(manifest: &mut RunManifest, out: Option<&Path>, body: &str) -> Result<()> {
    let text = format!("{}{body}", manifest.header_line());
    match out {
        Some(path) => {
            write_bytes(path, text.as_bytes())?;
            manifest.artifacts.push(path.display().to_string());
            manifest.finish(&sidecar(path))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn cmd_validate(catalog: &Path, out: Option<&Path>) -> Result<()> {
    let text = read_text(catalog)?;
    let mut manifest = RunManifest::new("validate");
    manifest.input("catalog", text.as_bytes());
    match check_manifest(&text) {
        Ok(cat) => {
            manifest.catalog_hash = Some(cat.content_hash());
            let body = format!("ok\t{} datasets\t{} classes\n", cat.datasets.len(), cat.classes.len());
            emit(&mut manifest, out, &body)
        }
        Err(errors) => {
            let mut body = String::new();
            for e in &errors {
                body.push_str(&format!("{}: {e}\n", catalog.display()));
            }
            emit(&mut manifest, out, &body)?;
            Err(CliError::Validation(format!("{} catalog error(s)", errors.len())))
        }
    }
}

fn parse_split(s: &str) -> Result<Split> {
    match s.parse::<Split>() {
        Ok(Split::Unassigned) | Err(_) => Err(CliError::Config(format!(
            "split must be train, valid or test, got {s:?}"
        ))),
        Ok(split) => Ok(split),
    }
}

pub fn cmd_sample(
    catalog_path: &Path,
    split: &str,
    seed: u64,
    episodes: u64,
    out: &Path,
    config: Option<&Path>,
) -> Result<()> {
    let split = parse_split(split)?;
    let text = read_text(catalog_path)?;
    let mut catalog = fewshot_core::catalog::parse_catalog(&text)
        .map_err(|e| CliError::Validation(format!("{}: {e}", catalog_path.display())))?;
    catalog
        .assign_missing_splits(seed)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let mut manifest = RunManifest::new("sample");
    let sampler_cfg = match config {
        Some(p) => {
            let t = read_text(p)?;
            manifest.input("config", t.as_bytes());
            toml::from_str::<SamplerConfig>(&t).map_err(|e| CliError::Config(e.to_string()))?
        }
        None => SamplerConfig::default(),
    };
    manifest.catalog_hash = Some(catalog.content_hash());
    manifest.config_hash = Some(fewshot_core::sha256_hex(
        serde_json::to_string(&sampler_cfg).expect("config serializes").as_bytes(),
    ));
    manifest.seed = Some(seed);
    manifest.param("split", split).param("episodes", episodes);

    let sampler = EpisodeSampler::new(&catalog, sampler_cfg, split)?;
    let lines = (0..episodes)
        .into_par_iter()
        .map(|i| Ok(sampler.sample(SeedContext::new(seed, i))?.to_json_line()))
        .collect::<Result<Vec<String>>>()?;
    let mut body = String::with_capacity(lines.iter().map(|l| l.len() + 1).sum());
    for l in lines {
        body.push_str(&l);
        body.push('\n');
    }
    emit(&mut manifest, Some(out), &body)
}

fn results_text(header: &str, results: &[fewshot_core::eval::EpisodeResult]) -> String {
    let mut s = header.to_string();
    for r in results {
        s.push_str(&r.to_json_line());
        s.push('\n');
    }
    s
}

pub fn cmd_run(config_path: &Path, out: &Path, seed: u64) -> Result<()> {
    let text = read_text(config_path)?;
    let base = config_path.parent().unwrap_or(Path::new("."));
    let cfg = ExperimentConfig::from_toml(&text, base)?;
    let data = cfg.data.load(seed)?;

    let mut manifest = RunManifest::new("run");
    manifest.config_hash = Some(cfg.hash());
    manifest.catalog_hash = Some(data.catalog.content_hash());
    manifest.seed = Some(seed);
    for (role, path) in [("catalog", &cfg.data.catalog), ("features", &cfg.data.features)] {
        if let Some(p) = path {
            manifest.input(role, read_text(p)?.as_bytes());
        }
    }
    if let Some(p) = &cfg.learner.pretrained_init {
        let p = Path::new(p);
        manifest.input("pretrained_init", &std::fs::read(p).map_err(|e| CliError::io(p, e))?);
    }
    let header = manifest.header_line();

    let outcome = run_experiment(&cfg, &data, seed)?;

    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let hash = manifest.hash();
    let mut write = |name: &str, bytes: &[u8]| -> Result<()> {
        let path = out.join(name);
        write_bytes(&path, bytes)?;
        manifest.artifacts.push(path.display().to_string());
        Ok(())
    };
    let mut snap = outcome.learner.to_snapshot();
    snap.header.insert("manifest".into(), hash);
    write("checkpoint.snap", &snap.to_bytes())?;
    let mut log = format!("{header}phase,step,value\n");
    for (phase, step, value) in &outcome.log {
        log.push_str(&format!("{phase},{step},{value}\n"));
    }
    write("train_log.csv", log.as_bytes())?;
    write("results.jsonl", results_text(&header, &outcome.results).as_bytes())?;
    if !outcome.finegrain.is_empty() {
        write("finegrain.jsonl", results_text(&header, &outcome.finegrain).as_bytes())?;
    }
    manifest.finish(&out.join("manifest.json"))
}

pub fn cmd_report(mode: &str, reference: &[PathBuf], inputs: &[PathBuf], out: Option<&Path>) -> Result<()> {
    let mode: ReportMode = mode.parse().map_err(CliError::Config)?;
    let mut manifest = RunManifest::new("report");
    manifest.param("mode", mode_name(mode));
    let load = |paths: &[PathBuf], role: &str, manifest: &mut RunManifest| -> Result<Vec<_>> {
        paths
            .iter()
            .enumerate()
            .map(|(i, p)| {
                manifest.input(&format!("{role}{i}"), read_text(p)?.as_bytes());
                read_input(p)
            })
            .collect()
    };
    let others = load(inputs, "input", &mut manifest)?;
    let refs = load(reference, "reference", &mut manifest)?;
    if mode != ReportMode::TrainsourceDelta && !refs.is_empty() {
        return Err(CliError::Config("--reference only applies to trainsource_delta".into()));
    }
    let body = match mode {
        ReportMode::Rank => rank_report(&others)?,
        ReportMode::Bins | ReportMode::Finegrain => {
            let axes: &[BinAxis] = if mode == ReportMode::Bins {
                &[BinAxis::Way, BinAxis::Shot]
            } else {
                &[BinAxis::LcaHeight]
            };
            let (csv, notes) = bins_report(&others, axes)?;
            for n in notes {
                eprintln!("{n}");
            }
            csv
        }
        ReportMode::TrainsourceDelta => {
            if refs.is_empty() {
                return Err(CliError::Config("trainsource_delta needs --reference inputs".into()));
            }
            delta_report(&refs, &others)?
        }
    };
    emit(&mut manifest, out, &body)
}

fn mode_name(mode: ReportMode) -> &'static str {
    match mode {
        ReportMode::Rank => "rank",
        ReportMode::Bins => "bins",
        ReportMode::Finegrain => "finegrain",
        ReportMode::TrainsourceDelta => "trainsource_delta",
    }
}
