//! Embedding network, meta-learners, baselines and their training loops.

pub mod baselines;
pub mod config;
pub mod heads;
pub mod maml;
pub mod network;
pub mod optim;
pub mod snapshot;
pub mod tasks;
pub mod training;

pub use baselines::{finetune_fit, knn_predict, FinetuneHead, FinetuneResult};
pub use config::{Distance, LearnerConfig, LearnerKind};
pub use heads::{
    matchingnet_loss, matchingnet_predict, proto_maml_head_init, protonet_loss, protonet_predict,
    prototypes, relationnet_loss, relationnet_predict, EmbeddingGrad, LinearHead,
};
pub use maml::{initial_head, maml_adapt, maml_predict, meta_gradient, Adapted, HeadInit};
pub use network::{Mlp, MlpTape};
pub use optim::{Adam, Optimizer, OptimizerKind};
pub use snapshot::{arch_string, Snapshot, SnapshotError};
pub use tasks::{
    train_classes, AlphabetDatasetSpec, EpisodeBatch, FeatureProvider, FeatureTable, FlatDatasetSpec,
    SyntheticFamilyConfig, SyntheticTaskFamily, TreeDatasetSpec,
};
pub use training::{
    episodic_train, evaluate_episode, nonepisodic_train, validation_accuracy, EpisodicTrainConfig, Learner,
    NonEpisodicConfig, NonEpisodicReport, Prediction, TrainReport,
};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum LearnerError {
    #[error("numeric failure: non-finite values in {0}")]
    NonFinite(&'static str),
    #[error("zero-norm embedding where cosine similarity is required")]
    ZeroNorm,
    #[error("class {0} has no support examples")]
    EmptyClass(usize),
    #[error("empty support set")]
    EmptySupport,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("learner kind {0} does not support this operation")]
    Unsupported(&'static str),
    #[error("missing features for {dataset}/{example}")]
    MissingFeatures { dataset: String, example: String },
    #[error("invalid learner config: {0}")]
    Config(String),
    #[error("episode stream is empty")]
    EmptyStream,
    #[error("episode sampling failed: {0}")]
    Sampling(String),
}

impl LearnerError {
    /// Numeric failures (as opposed to bad inputs or configuration).
    pub fn is_numeric(&self) -> bool {
        matches!(self, LearnerError::NonFinite(_) | LearnerError::ZeroNorm)
    }
}

/// Central finite-difference helpers shared by the gradient tests.
pub mod gradcheck {
    /// `||a - n|| / max(||a||, ||n||, 1e-8)` over the whole vector, so tiny
    /// components cannot dominate.
    pub fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
        assert_eq!(analytic.len(), numeric.len());
        let diff: f64 = analytic
            .iter()
            .zip(numeric)
            .map(|(a, n)| (a - n) * (a - n))
            .sum::<f64>()
            .sqrt();
        let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
        diff / na.max(nn).max(1e-8)
    }

    /// Central differences of `f` at `x` with step `h`.
    pub fn numeric_gradient(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
        let mut p = x.to_vec();
        (0..x.len())
            .map(|i| {
                p[i] = x[i] + h;
                let up = f(&p);
                p[i] = x[i] - h;
                let down = f(&p);
                p[i] = x[i];
                (up - down) / (2.0 * h)
            })
            .collect()
    }
}
