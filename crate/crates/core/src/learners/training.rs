//! Learner instances, per-episode evaluation and the two training regimes.

use std::path::Path;

use ndarray::Array2;

use super::baselines::{argmax_rows, finetune_fit, knn_predict, FinetuneHead};
use super::config::{LearnerConfig, LearnerKind};
use super::heads::{matchingnet_loss, matchingnet_predict, protonet_loss, protonet_predict, relationnet_loss, relationnet_predict};
use super::maml::{maml_predict, meta_gradient, HeadInit};
use super::network::Mlp;
use super::optim::{Adam, Optimizer, OptimizerKind};
use super::snapshot::{arch_string, Snapshot};
use super::tasks::{train_classes, EpisodeBatch, FeatureProvider};
use super::LearnerError;
use crate::catalog::Catalog;
use crate::eval::EpisodeResult;
use crate::rng::{derive_seed, tag, SeedContext, SeedStream};
use crate::sampler::{EpisodeSampler, EpisodeSpec, FixedShape};

/// Embedding network plus whatever else the learner kind owns.
#[derive(Debug, Clone, PartialEq)]
pub struct Learner {
    pub config: LearnerConfig,
    pub embedding: Mlp,
    pub relation: Option<Mlp>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub labels: Vec<usize>,
    /// Per-query class distribution, for rules that produce one.
    pub probs: Option<Array2<f64>>,
}

fn snapshot_err(e: super::SnapshotError) -> LearnerError {
    LearnerError::Config(e.to_string())
}

impl Learner {
    /// Fresh parameters seeded from `seed`, or the embedding of
    /// `config.pretrained_init` when set.
    pub fn new(config: LearnerConfig, input_dim: usize, seed: u64) -> Result<Self, LearnerError> {
        config.validate()?;
        let mut rng = SeedStream::new(derive_seed(seed, 0, tag::INIT));
        let mut embedding = Mlp::new(&config.embedding_dims(input_dim), &mut rng);
        if let Some(path) = &config.pretrained_init {
            let snap = Snapshot::read_file(Path::new(path)).map_err(snapshot_err)?;
            let loaded = snap.mlp("embedding").map_err(snapshot_err)?;
            if loaded.dims() != embedding.dims() {
                return Err(LearnerError::Config(format!(
                    "pretrained embedding {} does not match configured {}",
                    arch_string(&loaded),
                    arch_string(&embedding)
                )));
            }
            embedding = loaded;
        }
        let relation = (config.kind.episode_rule() == LearnerKind::Relationnet)
            .then(|| Mlp::new(&config.relation_dims(), &mut rng));
        Ok(Self {
            config,
            embedding,
            relation,
        })
    }

    pub fn with_embedding(config: LearnerConfig, embedding: Mlp) -> Result<Self, LearnerError> {
        config.validate()?;
        if embedding.output_dim() != config.embedding_dim {
            return Err(LearnerError::Config("embedding width differs from config".into()));
        }
        let relation = (config.kind.episode_rule() == LearnerKind::Relationnet).then(|| {
            let mut rng = SeedStream::new(derive_seed(0, 1, tag::INIT));
            Mlp::new(&config.relation_dims(), &mut rng)
        });
        Ok(Self {
            config,
            embedding,
            relation,
        })
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut p = self.embedding.to_flat();
        if let Some(r) = &self.relation {
            p.extend(r.to_flat());
        }
        p
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) {
        let n = self.embedding.num_params();
        self.embedding.set_flat(&flat[..n]);
        if let Some(r) = &mut self.relation {
            r.set_flat(&flat[n..]);
        }
    }

    fn head_init(&self) -> HeadInit {
        if self.config.kind.episode_rule() == LearnerKind::FoProtoMaml {
            HeadInit::Proto
        } else {
            HeadInit::Zero
        }
    }

    /// Query loss of one episode and its gradient with respect to
    /// [`Learner::params_flat`]. The maml family uses the first-order
    /// meta-gradient.
    pub fn episode_gradient(&self, batch: &EpisodeBatch) -> Result<(f64, Vec<f64>), LearnerError> {
        let rule = self.config.kind.episode_rule();
        if rule.is_maml() {
            let (loss, g) = meta_gradient(
                &self.embedding,
                batch,
                self.head_init(),
                self.config.effective_inner_lr(),
                self.config.inner_steps,
            )?;
            return Ok((loss, g.to_flat()));
        }
        let net = &self.embedding;
        let (s, ts) = net.forward(&batch.support_x)?;
        let (q, tq) = net.forward(&batch.query_x)?;
        let (eg, g_rel) = match rule {
            LearnerKind::Protonet => (protonet_loss(&s, &batch.support_y, &q, &batch.query_y, batch.way)?, None),
            LearnerKind::Matchingnet => (
                matchingnet_loss(&s, &batch.support_y, &q, &batch.query_y, batch.way, self.config.effective_distance())?,
                None,
            ),
            LearnerKind::Relationnet => {
                let rel = self.relation.as_ref().ok_or(LearnerError::Unsupported("relationnet"))?;
                let (eg, g) = relationnet_loss(&s, &batch.support_y, &q, &batch.query_y, batch.way, rel)?;
                (eg, Some(g))
            }
            _ => return Err(LearnerError::Unsupported(self.config.kind.as_str())),
        };
        let (mut g, _) = ts.backward(net, &eg.d_support);
        let (gq, _) = tq.backward(net, &eg.d_query);
        g.axpy(1.0, &gq);
        let mut flat = g.to_flat();
        if let Some(gr) = g_rel {
            flat.extend(gr.to_flat());
        }
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(LearnerError::NonFinite("episode gradient"));
        }
        Ok((eg.loss, flat))
    }

    pub fn predict(&self, batch: &EpisodeBatch) -> Result<Prediction, LearnerError> {
        let cfg = &self.config;
        let with_probs = |p: Array2<f64>| Prediction {
            labels: argmax_rows(&p),
            probs: Some(p),
        };
        match cfg.kind.episode_rule() {
            LearnerKind::Finetune => Ok(with_probs(finetune_fit(&self.embedding, batch, cfg)?.query_probs)),
            LearnerKind::FoMaml | LearnerKind::FoProtoMaml => {
                Ok(with_probs(maml_predict(
                    &self.embedding,
                    batch,
                    self.head_init(),
                    cfg.effective_inner_lr(),
                    cfg.inner_steps + cfg.extra_eval_steps,
                )?))
            }
            rule => {
                let s = self.embedding.apply(&batch.support_x)?;
                let q = self.embedding.apply(&batch.query_x)?;
                match rule {
                    LearnerKind::Knn => Ok(Prediction {
                        labels: knn_predict(&s, &batch.support_y, &q, cfg.effective_distance())?,
                        probs: None,
                    }),
                    LearnerKind::Protonet => Ok(with_probs(protonet_predict(&s, &batch.support_y, &q, batch.way)?)),
                    LearnerKind::Matchingnet => Ok(with_probs(matchingnet_predict(
                        &s,
                        &batch.support_y,
                        &q,
                        batch.way,
                        cfg.effective_distance(),
                    )?)),
                    LearnerKind::Relationnet => {
                        let rel = self.relation.as_ref().ok_or(LearnerError::Unsupported("relationnet"))?;
                        let scores = relationnet_predict(&s, &batch.support_y, &q, batch.way, rel)?;
                        Ok(Prediction {
                            labels: argmax_rows(&scores),
                            probs: None,
                        })
                    }
                    _ => Err(LearnerError::Unsupported(cfg.kind.as_str())),
                }
            }
        }
    }

    pub fn to_snapshot(&self) -> Snapshot {
        let mut s = Snapshot::default();
        s.header.insert("kind".into(), self.config.kind.to_string());
        s.header.insert("embedding_arch".into(), arch_string(&self.embedding));
        if let Some(r) = &self.relation {
            s.header.insert("relation_arch".into(), arch_string(r));
        }
        s.header.insert("config_hash".into(), self.config.hash());
        s.push_mlp("embedding", &self.embedding);
        if let Some(r) = &self.relation {
            s.push_mlp("relation", r);
        }
        s
    }

    /// Rebuilds a learner of kind `config.kind` from a snapshot. The
    /// relation module is loaded when the kind needs one.
    pub fn from_snapshot(config: LearnerConfig, snap: &Snapshot) -> Result<Self, LearnerError> {
        let embedding = snap.mlp("embedding").map_err(snapshot_err)?;
        let mut l = Self::with_embedding(config, embedding)?;
        if l.relation.is_some() {
            l.relation = Some(snap.mlp("relation").map_err(snapshot_err)?);
        }
        Ok(l)
    }
}

/// Runs `learner` on one episode and scores its query predictions.
pub fn evaluate_episode(
    learner: &Learner,
    spec: &EpisodeSpec,
    provider: &dyn FeatureProvider,
) -> Result<EpisodeResult, LearnerError> {
    let batch = EpisodeBatch::from_spec(spec, provider)?;
    let pred = learner.predict(&batch)?;
    let mut r = EpisodeResult::from_predictions(&spec.dataset, spec.shots.clone(), &batch.query_y, &pred.labels);
    r.method = Some(learner.config.kind.to_string());
    Ok(r)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodicTrainConfig {
    pub episodes: usize,
    pub seed: u64,
    /// Validate after every this many episodes; 0 disables validation.
    pub validate_every: usize,
    pub valid_episodes: usize,
    pub valid_shape: FixedShape,
    /// Stop once validation accuracy reaches this value.
    pub stop_at: Option<f64>,
}

impl Default for EpisodicTrainConfig {
    fn default() -> Self {
        Self {
            episodes: 5000,
            seed: 0,
            validate_every: 250,
            valid_episodes: 100,
            valid_shape: FixedShape { way: 5, shot: 5, query: 10 },
            stop_at: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub losses: Vec<f64>,
    /// `(episodes trained, validation accuracy)`
    pub validation: Vec<(usize, f64)>,
    pub best: Option<(usize, f64)>,
}

/// Mean query accuracy over fixed-shape episodes of one dataset. The
/// episodes depend only on `seed`, so repeated calls compare like with like.
pub fn validation_accuracy(
    learner: &Learner,
    sampler: &EpisodeSampler,
    dataset: &str,
    provider: &dyn FeatureProvider,
    shape: FixedShape,
    episodes: usize,
    seed: u64,
) -> Result<f64, LearnerError> {
    let mut total = 0.0;
    for i in 0..episodes {
        let spec = sampler
            .sample_fixed_from(dataset, shape, SeedContext::new(seed, i as u64))
            .map_err(|e| LearnerError::Sampling(e.to_string()))?;
        total += evaluate_episode(learner, &spec, provider)?.accuracy();
    }
    Ok(total / episodes.max(1) as f64)
}

/// Outer loop over the training episode stream: one Adam step on the
/// episode's query loss per episode. With a validation sampler the
/// parameters with the best proxy-dataset accuracy are kept.
pub fn episodic_train(
    learner: &mut Learner,
    train: &EpisodeSampler,
    valid: Option<(&EpisodeSampler, &str)>,
    provider: &dyn FeatureProvider,
    cfg: &EpisodicTrainConfig,
) -> Result<TrainReport, LearnerError> {
    if !learner.config.kind.is_episodic() {
        return Err(LearnerError::Unsupported(learner.config.kind.as_str()));
    }
    if cfg.episodes == 0 {
        return Err(LearnerError::EmptyStream);
    }
    let mut params = learner.params_flat();
    let mut opt = Adam::new(learner.config.outer_lr, params.len());
    let mut report = TrainReport::default();
    let mut best_params: Option<Vec<f64>> = None;
    let valid_seed = derive_seed(cfg.seed, u64::MAX, tag::TRAIN);
    for i in 0..cfg.episodes {
        let spec = train
            .sample(SeedContext::new(cfg.seed, i as u64))
            .map_err(|e| LearnerError::Sampling(e.to_string()))?;
        let batch = EpisodeBatch::from_spec(&spec, provider)?;
        let (loss, grad) = learner.episode_gradient(&batch)?;
        report.losses.push(loss);
        opt.step(&mut params, &grad);
        if params.iter().any(|v| !v.is_finite()) {
            return Err(LearnerError::NonFinite("parameters"));
        }
        learner.set_params_flat(&params);

        let done = i + 1;
        let due = cfg.validate_every > 0 && (done % cfg.validate_every == 0 || done == cfg.episodes);
        if let (true, Some((vs, proxy))) = (due, valid) {
            let acc = validation_accuracy(learner, vs, proxy, provider, cfg.valid_shape, cfg.valid_episodes, valid_seed)?;
            report.validation.push((done, acc));
            if report.best.is_none_or(|(_, b)| acc > b) {
                report.best = Some((done, acc));
                best_params = Some(params.clone());
            }
            if cfg.stop_at.is_some_and(|t| acc >= t) {
                break;
            }
        }
    }
    if let Some(p) = best_params {
        learner.set_params_flat(&p);
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NonEpisodicConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub cosine_classifier: bool,
    pub cosine_scale: f64,
}

impl Default for NonEpisodicConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 64,
            lr: 1e-3,
            seed: 0,
            cosine_classifier: false,
            cosine_scale: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NonEpisodicReport {
    pub classes: usize,
    pub examples: usize,
    pub losses: Vec<f64>,
    /// Accuracy of the trained classifier over every training example.
    pub train_accuracy: f64,
}

/// Ordinary mini-batch classification over the union of the training
/// classes of every non-reserved dataset. Returns the trained embedding.
pub fn nonepisodic_train(
    catalog: &Catalog,
    provider: &dyn FeatureProvider,
    embedding: Mlp,
    cfg: &NonEpisodicConfig,
) -> Result<(Mlp, NonEpisodicReport), LearnerError> {
    let classes = train_classes(catalog);
    if classes.is_empty() {
        return Err(LearnerError::EmptyStream);
    }
    let total: usize = classes.iter().map(|c| c.example_count).sum();
    let mut x = Array2::zeros((total, provider.dim()));
    let mut y = Vec::with_capacity(total);
    for (k, c) in classes.iter().enumerate() {
        for i in 0..c.example_count {
            let ex = c.example_id(i);
            let v = provider
                .features(&c.dataset_id, &c.class_id, &ex)
                .ok_or_else(|| LearnerError::MissingFeatures {
                    dataset: c.dataset_id.clone(),
                    example: ex.clone(),
                })?;
            x.row_mut(y.len()).assign(&ndarray::ArrayView1::from(&v[..]));
            y.push(k);
        }
    }
    let n_classes = classes.len();
    let dim = embedding.output_dim();
    let mut rng = SeedStream::new(derive_seed(cfg.seed, 0, tag::TRAIN));
    let v = if cfg.cosine_classifier {
        Array2::from_shape_fn((n_classes, dim), |_| rng.normal())
    } else {
        Array2::zeros((n_classes, dim))
    };
    let mut head = FinetuneHead {
        v,
        g: None,
        bias: ndarray::Array1::zeros(n_classes),
        cosine: cfg.cosine_classifier,
        scale: cfg.cosine_scale,
    };
    let mut theta = embedding;
    let mut hp = head.to_flat();
    let mut tp = theta.to_flat();
    let mut h_opt = Optimizer::new(OptimizerKind::Adam, cfg.lr, hp.len());
    let mut t_opt = Optimizer::new(OptimizerKind::Adam, cfg.lr, tp.len());
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut r = SeedStream::new(derive_seed(cfg.seed, step as u64 + 1, tag::TRAIN));
        let idx: Vec<usize> = (0..cfg.batch_size.max(1)).map(|_| r.index(total)).collect();
        let bx = x.select(ndarray::Axis(0), &idx);
        let by: Vec<usize> = idx.iter().map(|&i| y[i]).collect();
        let (emb, tape) = theta.forward(&bx)?;
        let (loss, _, gh, d_emb) = head.loss(&emb, &by)?;
        losses.push(loss);
        let (gt, _) = tape.backward(&theta, &d_emb);
        h_opt.step(&mut hp, &gh);
        t_opt.step(&mut tp, &gt.to_flat());
        if hp.iter().chain(&tp).any(|v| !v.is_finite()) {
            return Err(LearnerError::NonFinite("parameters"));
        }
        head.set_flat(&hp);
        theta.set_flat(&tp);
    }
    let pred = argmax_rows(&head.logits(&theta.apply(&x)?)?);
    let correct = pred.iter().zip(&y).filter(|(a, b)| a == b).count();
    Ok((
        theta,
        NonEpisodicReport {
            classes: n_classes,
            examples: total,
            losses,
            train_accuracy: correct as f64 / total as f64,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::super::tasks::{SyntheticFamilyConfig, SyntheticTaskFamily};
    use super::*;
    use crate::catalog::Split;
    use crate::sampler::SamplerConfig;

    fn family() -> SyntheticTaskFamily {
        SyntheticTaskFamily::new(SyntheticFamilyConfig::flat_only(16, 0.2, 3)).unwrap()
    }

    fn small(kind: LearnerKind) -> LearnerConfig {
        LearnerConfig {
            hidden: vec![32],
            ..LearnerConfig::for_kind(kind)
        }
    }

    #[test]
    fn every_kind_predicts_on_every_split() {
        let fam = SyntheticTaskFamily::new(SyntheticFamilyConfig::default()).unwrap();
        for kind in LearnerKind::ALL {
            let mut cfg = small(kind);
            cfg.finetune_steps = 5;
            let l = Learner::new(cfg, 16, 1).unwrap();
            for split in [Split::Train, Split::Test] {
                let s = EpisodeSampler::new(&fam.catalog, SamplerConfig::default(), split).unwrap();
                for i in 0..3 {
                    let spec = s.sample(SeedContext::new(2, i)).unwrap();
                    let b = EpisodeBatch::from_spec(&spec, &fam).unwrap();
                    let p = l.predict(&b).unwrap();
                    assert_eq!(p.labels.len(), b.query_y.len());
                    if let Some(probs) = p.probs {
                        for r in probs.rows() {
                            assert!((r.sum() - 1.0).abs() < 1e-9 && r.iter().all(|&v| v >= 0.0));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn protonet_training_loss_trends_down() {
        let fam = family();
        let train = EpisodeSampler::new(&fam.catalog, SamplerConfig::default(), Split::Train).unwrap();
        let mut l = Learner::new(small(LearnerKind::Protonet), 16, 0).unwrap();
        let cfg = EpisodicTrainConfig {
            episodes: 200,
            validate_every: 0,
            ..EpisodicTrainConfig::default()
        };
        let r = episodic_train(&mut l, &train, None, &fam, &cfg).unwrap();
        assert!(r.losses.iter().all(|v| v.is_finite()));
        let head: f64 = r.losses[..50].iter().sum::<f64>() / 50.0;
        let tail: f64 = r.losses[150..].iter().sum::<f64>() / 50.0;
        assert!(tail < head, "{head} -> {tail}");
    }

    #[test]
    fn episodic_train_is_deterministic() {
        let fam = family();
        let train = EpisodeSampler::new(&fam.catalog, SamplerConfig::default(), Split::Train).unwrap();
        let valid = EpisodeSampler::new(&fam.catalog, SamplerConfig::default(), Split::Valid).unwrap();
        let cfg = EpisodicTrainConfig {
            episodes: 20,
            validate_every: 10,
            valid_episodes: 5,
            ..EpisodicTrainConfig::default()
        };
        let run = || {
            let mut l = Learner::new(small(LearnerKind::FoProtoMaml), 16, 0).unwrap();
            let r = episodic_train(&mut l, &train, Some((&valid, "gauss_a")), &fam, &cfg).unwrap();
            (l, r)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn empty_stream_and_wrong_kind_are_rejected() {
        let fam = family();
        let train = EpisodeSampler::new(&fam.catalog, SamplerConfig::default(), Split::Train).unwrap();
        let cfg = EpisodicTrainConfig {
            episodes: 0,
            ..EpisodicTrainConfig::default()
        };
        let mut l = Learner::new(small(LearnerKind::Protonet), 16, 0).unwrap();
        assert_eq!(episodic_train(&mut l, &train, None, &fam, &cfg).unwrap_err(), LearnerError::EmptyStream);
        let mut k = Learner::new(small(LearnerKind::Knn), 16, 0).unwrap();
        assert!(episodic_train(&mut k, &train, None, &fam, &EpisodicTrainConfig::default()).is_err());
    }

    #[test]
    fn learner_gradients_match_finite_differences() {
        let fam = SyntheticTaskFamily::new(SyntheticFamilyConfig::flat_only(4, 0.5, 3)).unwrap();
        let s = EpisodeSampler::new(&fam.catalog, SamplerConfig::default(), Split::Train).unwrap();
        for kind in [LearnerKind::Protonet, LearnerKind::Matchingnet, LearnerKind::Relationnet] {
            let cfg = LearnerConfig {
                hidden: vec![5],
                embedding_dim: 3,
                relation_hidden: 4,
                ..LearnerConfig::for_kind(kind)
            };
            let l = Learner::new(cfg, 4, 7).unwrap();
            let spec = s.sample_fixed(FixedShape { way: 3, shot: 2, query: 2 }, SeedContext::new(1, 0)).unwrap();
            let b = EpisodeBatch::from_spec(&spec, &fam).unwrap();
            let (_, g) = l.episode_gradient(&b).unwrap();
            let num = super::super::gradcheck::numeric_gradient(&l.params_flat(), 1e-5, |p| {
                let mut m = l.clone();
                m.set_params_flat(p);
                m.episode_gradient(&b).unwrap().0
            });
            assert!(super::super::gradcheck::rel_error(&g, &num) < 1e-4, "{kind}");
        }
    }

    #[test]
    fn snapshot_round_trip_restores_learner() {
        let l = Learner::new(small(LearnerKind::Relationnet), 16, 5).unwrap();
        let snap = Snapshot::from_bytes(&l.to_snapshot().to_bytes()).unwrap();
        assert_eq!(Learner::from_snapshot(l.config.clone(), &snap).unwrap(), l);
        assert_eq!(snap.header["config_hash"], l.config.hash());
    }

    #[test]
    fn nonepisodic_training_fits_the_union_of_train_classes() {
        let fam = family();
        let cfg = small(LearnerKind::Knn);
        let init = Learner::new(cfg, 16, 0).unwrap().embedding;
        let nc = NonEpisodicConfig {
            steps: 600,
            lr: 3e-3,
            ..NonEpisodicConfig::default()
        };
        let (_, report) = nonepisodic_train(&fam.catalog, &fam, init, &nc).unwrap();
        assert_eq!(report.classes, train_classes(&fam.catalog).len());
        assert!(report.train_accuracy > 0.99, "{}", report.train_accuracy);
    }
}
