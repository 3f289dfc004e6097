//! Learner configuration, stored as TOML.
//!
//! ```toml
//! kind = "fo_proto_maml"
//! inner_lr = 0.005      # maml family only; default 0.1 (fo_maml) / 0.005 (fo_proto_maml)
//! inner_steps = 5
//! extra_eval_steps = 0
//! hidden = [64, 64]
//! embedding_dim = 16
//! outer_lr = 0.001
//! ```

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::optim::OptimizerKind;
use super::LearnerError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    Knn,
    Finetune,
    Protonet,
    Matchingnet,
    Relationnet,
    FoMaml,
    FoProtoMaml,
    ProtonetInference,
    MatchingnetInference,
    FoMamlInference,
    FoProtoMamlInference,
}

impl LearnerKind {
    pub const ALL: [LearnerKind; 11] = [
        LearnerKind::Knn,
        LearnerKind::Finetune,
        LearnerKind::Protonet,
        LearnerKind::Matchingnet,
        LearnerKind::Relationnet,
        LearnerKind::FoMaml,
        LearnerKind::FoProtoMaml,
        LearnerKind::ProtonetInference,
        LearnerKind::MatchingnetInference,
        LearnerKind::FoMamlInference,
        LearnerKind::FoProtoMamlInference,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            LearnerKind::Knn => "knn",
            LearnerKind::Finetune => "finetune",
            LearnerKind::Protonet => "protonet",
            LearnerKind::Matchingnet => "matchingnet",
            LearnerKind::Relationnet => "relationnet",
            LearnerKind::FoMaml => "fo_maml",
            LearnerKind::FoProtoMaml => "fo_proto_maml",
            LearnerKind::ProtonetInference => "protonet_inference",
            LearnerKind::MatchingnetInference => "matchingnet_inference",
            LearnerKind::FoMamlInference => "fo_maml_inference",
            LearnerKind::FoProtoMamlInference => "fo_proto_maml_inference",
        }
    }

    /// The rule applied inside an episode, ignoring how the embedding was
    /// trained.
    pub fn episode_rule(&self) -> LearnerKind {
        match self {
            LearnerKind::ProtonetInference => LearnerKind::Protonet,
            LearnerKind::MatchingnetInference => LearnerKind::Matchingnet,
            LearnerKind::FoMamlInference => LearnerKind::FoMaml,
            LearnerKind::FoProtoMamlInference => LearnerKind::FoProtoMaml,
            k => *k,
        }
    }

    /// Trained episodically (the meta-learners proper).
    pub fn is_episodic(&self) -> bool {
        matches!(
            self,
            LearnerKind::Protonet
                | LearnerKind::Matchingnet
                | LearnerKind::Relationnet
                | LearnerKind::FoMaml
                | LearnerKind::FoProtoMaml
        )
    }

    pub fn is_maml(&self) -> bool {
        matches!(self.episode_rule(), LearnerKind::FoMaml | LearnerKind::FoProtoMaml)
    }

    pub fn uses_distance(&self) -> bool {
        matches!(self.episode_rule(), LearnerKind::Knn | LearnerKind::Matchingnet)
    }
}

impl fmt::Display for LearnerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LearnerKind {
    type Err = LearnerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LearnerKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| LearnerError::Config(format!("unknown learner kind `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distance {
    Euclidean,
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerConfig {
    pub kind: LearnerKind,
    /// Inner-loop step size of the maml family.
    pub inner_lr: Option<f64>,
    pub inner_steps: usize,
    /// Additional inner steps taken at evaluation time only.
    pub extra_eval_steps: usize,
    /// knn defaults to euclidean, matchingnet to cosine.
    pub distance: Option<Distance>,
    pub cosine_classifier: bool,
    pub cosine_scale: f64,
    pub weight_norm: bool,
    pub finetune_embedding: bool,
    pub finetune_optimizer: OptimizerKind,
    pub finetune_steps: usize,
    pub finetune_lr: f64,
    pub outer_lr: f64,
    /// Path of an embedding snapshot to start from.
    pub pretrained_init: Option<String>,
    pub hidden: Vec<usize>,
    pub embedding_dim: usize,
    pub relation_hidden: usize,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            kind: LearnerKind::Protonet,
            inner_lr: None,
            inner_steps: 5,
            extra_eval_steps: 0,
            distance: None,
            cosine_classifier: false,
            cosine_scale: 10.0,
            weight_norm: false,
            finetune_embedding: false,
            finetune_optimizer: OptimizerKind::Adam,
            finetune_steps: 100,
            finetune_lr: 0.01,
            outer_lr: 1e-3,
            pretrained_init: None,
            hidden: vec![64, 64],
            embedding_dim: 16,
            relation_hidden: 16,
        }
    }
}

impl LearnerConfig {
    pub fn for_kind(kind: LearnerKind) -> Self {
        Self { kind, ..Self::default() }
    }

    pub fn from_toml(text: &str) -> Result<Self, LearnerError> {
        let cfg: Self = toml::from_str(text).map_err(|e| LearnerError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn effective_inner_lr(&self) -> f64 {
        self.inner_lr.unwrap_or(match self.kind.episode_rule() {
            LearnerKind::FoProtoMaml => 0.005,
            _ => 0.1,
        })
    }

    pub fn effective_distance(&self) -> Distance {
        self.distance.unwrap_or(match self.kind.episode_rule() {
            LearnerKind::Matchingnet => Distance::Cosine,
            _ => Distance::Euclidean,
        })
    }

    /// Layer widths of the embedding network for inputs of size `input_dim`.
    pub fn embedding_dims(&self, input_dim: usize) -> Vec<usize> {
        let mut d = vec![input_dim];
        d.extend(&self.hidden);
        d.push(self.embedding_dim);
        d
    }

    pub fn relation_dims(&self) -> Vec<usize> {
        vec![2 * self.embedding_dim, self.relation_hidden, 1]
    }

    pub fn validate(&self) -> Result<(), LearnerError> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.outer_lr) {
            return Err(LearnerError::Config("outer_lr must be positive".into()));
        }
        if !positive(self.finetune_lr) {
            return Err(LearnerError::Config("finetune_lr must be positive".into()));
        }
        if !positive(self.cosine_scale) {
            return Err(LearnerError::Config("cosine_scale must be positive".into()));
        }
        if let Some(lr) = self.inner_lr {
            if !self.kind.is_maml() {
                return Err(LearnerError::Config(format!("inner_lr does not apply to {}", self.kind)));
            }
            // Zero is allowed: adaptation then leaves the parameters untouched.
            if !(lr.is_finite() && lr >= 0.0) {
                return Err(LearnerError::Config("inner_lr must be nonnegative".into()));
            }
        }
        if self.distance.is_some() && !self.kind.uses_distance() {
            return Err(LearnerError::Config(format!("distance does not apply to {}", self.kind)));
        }
        if self.embedding_dim == 0 || self.hidden.contains(&0) || self.relation_hidden == 0 {
            return Err(LearnerError::Config("layer widths must be positive".into()));
        }
        Ok(())
    }

    /// Hash of the canonical JSON rendering.
    pub fn hash(&self) -> String {
        crate::sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}
