//! Experiment configs for `fewshot run`: data source, learner, training
//! budget and evaluation protocol, read from one TOML file.

use std::path::{Path, PathBuf};

use fewshot_core::catalog::{parse_catalog, Catalog, Split};
use fewshot_core::eval::EpisodeResult;
use fewshot_core::learners::{
    episodic_train, evaluate_episode, nonepisodic_train, EpisodicTrainConfig, FeatureProvider, FeatureTable, Learner,
    LearnerConfig, NonEpisodicConfig, SyntheticFamilyConfig, SyntheticTaskFamily,
};
use fewshot_core::rng::{derive_seed, hash_str, tag, SeedContext};
use fewshot_core::sampler::{EpisodeSampler, FixedShape, SamplerConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{read_text, CliError, Result};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub learner: LearnerConfig,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub sampler: SamplerConfig,
}

/// Either a synthetic family (the default one when nothing is given), or a
/// catalog plus a feature table.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub family: Option<SyntheticFamilyConfig>,
    pub catalog: Option<PathBuf>,
    pub features: Option<PathBuf>,
    /// Validation dataset for checkpoint selection; the family's own proxy
    /// when unset.
    pub proxy: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    /// Episodic training budget; 0 skips episodic training.
    pub episodes: usize,
    pub validate_every: usize,
    pub valid_episodes: usize,
    pub valid_shape: FixedShape,
    pub stop_at: Option<f64>,
    /// Non-episodic pretraining for the baselines and inference-only
    /// learners; 0 skips it.
    pub pretrain_steps: usize,
    pub pretrain_batch: usize,
    pub pretrain_lr: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            episodes: 2000,
            validate_every: 250,
            valid_episodes: 100,
            valid_shape: FixedShape { way: 5, shot: 5, query: 10 },
            stop_at: None,
            pretrain_steps: 2000,
            pretrain_batch: 64,
            pretrain_lr: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Test episodes per test source.
    pub episodes: usize,
    /// Two-way leaf-pair episodes per hierarchical test source, for
    /// fine-grainedness curves.
    pub finegrain_episodes: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            episodes: 600,
            finegrain_episodes: 0,
        }
    }
}

impl ExperimentConfig {
    /// Parses a config; relative paths resolve against `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        };
        cfg.data.catalog.as_mut().map(resolve);
        cfg.data.features.as_mut().map(resolve);
        if let Some(p) = &cfg.learner.pretrained_init {
            let p = Path::new(p);
            if p.is_relative() {
                cfg.learner.pretrained_init = Some(base_dir.join(p).display().to_string());
            }
        }
        cfg.learner.validate()?;
        cfg.sampler.validate()?;
        if cfg.eval.episodes < 2 {
            return Err(CliError::Config("eval.episodes must be at least 2".into()));
        }
        Ok(cfg)
    }

    pub fn hash(&self) -> String {
        fewshot_core::sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

/// Loaded catalog and the features behind it.
pub struct Data {
    pub catalog: Catalog,
    pub provider: Box<dyn FeatureProvider>,
    pub proxy: Option<String>,
}

impl DataConfig {
    pub fn load(&self, seed: u64) -> Result<Data> {
        match (&self.family, &self.catalog, &self.features) {
            (f, None, None) => {
                let family = SyntheticTaskFamily::new(f.clone().unwrap_or_default())?;
                let proxy = Some(self.proxy.clone().unwrap_or_else(|| family.proxy().to_string()));
                Ok(Data {
                    catalog: family.catalog.clone(),
                    provider: Box::new(family),
                    proxy,
                })
            }
            (None, Some(cat), Some(feat)) => {
                let mut catalog =
                    parse_catalog(&read_text(cat)?).map_err(|e| CliError::Validation(format!("{}: {e}", cat.display())))?;
                catalog
                    .assign_missing_splits(seed)
                    .map_err(|e| CliError::Config(e.to_string()))?;
                let table = FeatureTable::parse(&read_text(feat)?)?;
                Ok(Data {
                    catalog,
                    provider: Box::new(table),
                    proxy: self.proxy.clone(),
                })
            }
            _ => Err(CliError::Config(
                "data needs either `family`, or both `catalog` and `features`".into(),
            )),
        }
    }
}

/// Everything `fewshot run` produces, before it is written out.
pub struct RunOutcome {
    pub learner: Learner,
    /// `(phase, step, value)` rows: pretraining and episodic losses,
    /// validation accuracies.
    pub log: Vec<(&'static str, usize, f64)>,
    pub results: Vec<EpisodeResult>,
    pub finegrain: Vec<EpisodeResult>,
}

/// Trains the configured learner and evaluates it on every test source.
pub fn run_experiment(cfg: &ExperimentConfig, data: &Data, seed: u64) -> Result<RunOutcome> {
    let provider = data.provider.as_ref();
    let mut learner = Learner::new(cfg.learner.clone(), provider.dim(), seed)?;
    let mut log = Vec::new();
    let kind = cfg.learner.kind;

    if kind.is_episodic() {
        if cfg.train.episodes > 0 {
            let train = EpisodeSampler::new(&data.catalog, cfg.sampler.clone(), Split::Train)?;
            let valid = EpisodeSampler::new(&data.catalog, cfg.sampler.clone(), Split::Valid).ok();
            let valid_ref = match (&valid, &data.proxy) {
                (Some(v), Some(p)) if v.dataset_ids().contains(&p.as_str()) => Some((v, p.as_str())),
                _ => None,
            };
            let tc = EpisodicTrainConfig {
                episodes: cfg.train.episodes,
                seed,
                validate_every: cfg.train.validate_every,
                valid_episodes: cfg.train.valid_episodes,
                valid_shape: cfg.train.valid_shape,
                stop_at: cfg.train.stop_at,
            };
            let report = episodic_train(&mut learner, &train, valid_ref, provider, &tc)?;
            log.extend(report.losses.iter().enumerate().map(|(i, &l)| ("episode_loss", i + 1, l)));
            log.extend(report.validation.iter().map(|&(i, a)| ("valid_accuracy", i, a)));
        }
    } else if cfg.learner.pretrained_init.is_none() && cfg.train.pretrain_steps > 0 {
        let nc = NonEpisodicConfig {
            steps: cfg.train.pretrain_steps,
            batch_size: cfg.train.pretrain_batch,
            lr: cfg.train.pretrain_lr,
            seed,
            cosine_classifier: cfg.learner.cosine_classifier,
            cosine_scale: cfg.learner.cosine_scale,
        };
        let (embedding, report) = nonepisodic_train(&data.catalog, provider, learner.embedding.clone(), &nc)?;
        learner.embedding = embedding;
        log.extend(report.losses.iter().enumerate().map(|(i, &l)| ("pretrain_loss", i + 1, l)));
    }

    let test = EpisodeSampler::new(&data.catalog, cfg.sampler.clone(), Split::Test)?;
    let mut jobs = Vec::new();
    for ds in test.dataset_ids() {
        let base = derive_seed(seed, hash_str(ds), tag::EVAL);
        jobs.extend((0..cfg.eval.episodes as u64).map(|i| (ds, SeedContext::new(base, i))));
    }
    let results = jobs
        .par_iter()
        .map(|&(ds, ctx)| {
            let classes = test.sample_class_positions(ds, ctx)?;
            let spec = test.fill_examples(ds, &classes, ctx);
            Ok(evaluate_episode(&learner, &spec, provider)?)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut finegrain = Vec::new();
    if cfg.eval.finegrain_episodes > 0 {
        let mut jobs = Vec::new();
        for ds in test.dataset_ids() {
            if test.split_dag(ds).is_some() {
                let base = derive_seed(seed, hash_str(ds) ^ 1, tag::EVAL);
                jobs.extend((0..cfg.eval.finegrain_episodes as u64).map(|i| (ds, SeedContext::new(base, i))));
            }
        }
        finegrain = jobs
            .par_iter()
            .map(|&(ds, ctx)| {
                let (spec, height) = test.sample_leaf_pair(ds, ctx)?;
                let mut r = evaluate_episode(&learner, &spec, provider)?;
                r.lca_height = Some(height);
                Ok(r)
            })
            .collect::<Result<Vec<_>>>()?;
    }

    Ok(RunOutcome {
        learner,
        log,
        results,
        finegrain,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_config_errors() {
        let e = ExperimentConfig::from_toml("[train]\nepisodez = 3\n", Path::new(".")).unwrap_err();
        assert_eq!(e.exit_code(), 1);
    }

    #[test]
    fn relative_paths_resolve_against_the_config() {
        let text = "[data]\ncatalog = \"c.tsv\"\nfeatures = \"/abs/f.tsv\"\n";
        let cfg = ExperimentConfig::from_toml(text, Path::new("/runs/x")).unwrap();
        assert_eq!(cfg.data.catalog.unwrap(), Path::new("/runs/x/c.tsv"));
        assert_eq!(cfg.data.features.unwrap(), Path::new("/abs/f.tsv"));
    }

    #[test]
    fn data_needs_one_source() {
        let cfg = DataConfig {
            catalog: Some("c.tsv".into()),
            ..DataConfig::default()
        };
        assert!(matches!(cfg.load(0), Err(CliError::Config(_))));
    }
}
