//! Nearest-neighbour and finetuning baselines.

use ndarray::{Array1, Array2, Axis};

use super::config::{Distance, LearnerConfig};
use super::heads::{cross_entropy, prototypes};
use super::network::{ensure_finite, Mlp};
use super::optim::Optimizer;
use super::tasks::EpisodeBatch;
use super::LearnerError;

/// 1-nearest neighbour; on equal distance the lower support index wins.
pub fn knn_predict(
    support: &Array2<f64>,
    labels: &[usize],
    query: &Array2<f64>,
    distance: Distance,
) -> Result<Vec<usize>, LearnerError> {
    if support.nrows() == 0 {
        return Err(LearnerError::EmptySupport);
    }
    let norm = |r: ndarray::ArrayView1<f64>| r.dot(&r).sqrt();
    let s_norms: Vec<f64> = support.rows().into_iter().map(norm).collect();
    if distance == Distance::Cosine && s_norms.contains(&0.0) {
        return Err(LearnerError::ZeroNorm);
    }
    query
        .rows()
        .into_iter()
        .map(|q| {
            let qn = norm(q);
            if distance == Distance::Cosine && qn == 0.0 {
                return Err(LearnerError::ZeroNorm);
            }
            let mut best = (f64::INFINITY, 0usize);
            for (i, s) in support.rows().into_iter().enumerate() {
                let d = match distance {
                    Distance::Euclidean => s.iter().zip(q.iter()).map(|(a, b)| (a - b) * (a - b)).sum(),
                    Distance::Cosine => 1.0 - s.dot(&q) / (s_norms[i] * qn),
                };
                if !d.is_finite() {
                    return Err(LearnerError::NonFinite("distances"));
                }
                if d < best.0 {
                    best = (d, i);
                }
            }
            Ok(labels[best.1])
        })
        .collect()
}

/// Output layer trained inside an episode. With `weight_norm` every row is
/// `g_k * v_k / ||v_k||`; with `cosine` the logits are `scale` times the
/// cosine between row and embedding, and no bias is used.
#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneHead {
    pub v: Array2<f64>,
    pub g: Option<Array1<f64>>,
    pub bias: Array1<f64>,
    pub cosine: bool,
    pub scale: f64,
}

fn unit_rows(x: &Array2<f64>) -> Result<(Array2<f64>, Array1<f64>), LearnerError> {
    let norms = x.map_axis(Axis(1), |r| r.dot(&r).sqrt());
    if norms.iter().any(|&n| n == 0.0) {
        return Err(LearnerError::ZeroNorm);
    }
    Ok((x / &norms.view().insert_axis(Axis(1)), norms))
}

fn unit_rows_backward(unit: &Array2<f64>, norms: &Array1<f64>, d_unit: &Array2<f64>) -> Array2<f64> {
    let mut d = d_unit.clone();
    for i in 0..unit.nrows() {
        let u = unit.row(i);
        let proj = u.dot(&d_unit.row(i));
        let mut row = d.row_mut(i);
        row.scaled_add(-proj, &u);
        row /= norms[i];
    }
    d
}

impl FinetuneHead {
    /// Linear heads start at zero. Cosine and weight-normalized heads need a
    /// nonzero direction per row and start from the class prototypes; the
    /// linear weight-normalized head gets zero gains so its first
    /// predictions are still uniform.
    pub fn init(protos: &Array2<f64>, config: &LearnerConfig) -> Self {
        let (way, dim) = protos.dim();
        let needs_direction = config.cosine_classifier || config.weight_norm;
        let mut v = if needs_direction { protos.clone() } else { Array2::zeros((way, dim)) };
        if needs_direction {
            for k in 0..way {
                if v.row(k).iter().all(|&x| x == 0.0) {
                    v[[k, k % dim]] = 1.0;
                }
            }
        }
        let g = config.weight_norm.then(|| {
            let init = if config.cosine_classifier { 1.0 } else { 0.0 };
            Array1::from_elem(way, init)
        });
        Self {
            v,
            g,
            bias: Array1::zeros(way),
            cosine: config.cosine_classifier,
            scale: config.cosine_scale,
        }
    }

    pub fn way(&self) -> usize {
        self.v.nrows()
    }

    fn weight(&self) -> Result<Array2<f64>, LearnerError> {
        match &self.g {
            None => Ok(self.v.clone()),
            Some(g) => {
                let (unit, _) = unit_rows(&self.v)?;
                Ok(unit * &g.view().insert_axis(Axis(1)))
            }
        }
    }

    pub fn logits(&self, emb: &Array2<f64>) -> Result<Array2<f64>, LearnerError> {
        let w = self.weight()?;
        let z = if self.cosine {
            let (we, _) = unit_rows(&w)?;
            let (ee, _) = unit_rows(emb)?;
            ee.dot(&we.t()) * self.scale
        } else {
            emb.dot(&w.t()) + &self.bias
        };
        ensure_finite(&z, "logits")?;
        Ok(z)
    }

    pub fn num_params(&self) -> usize {
        self.v.len() + self.g.as_ref().map_or(0, |g| g.len()) + self.bias.len()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.v.iter().copied().collect();
        if let Some(g) = &self.g {
            out.extend(g.iter());
        }
        out.extend(self.bias.iter());
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params());
        let mut it = flat.iter().copied();
        self.v.iter_mut().for_each(|x| *x = it.next().unwrap());
        if let Some(g) = &mut self.g {
            g.iter_mut().for_each(|x| *x = it.next().unwrap());
        }
        self.bias.iter_mut().for_each(|x| *x = it.next().unwrap());
    }

    /// Cross-entropy on `emb`; returns (loss, probs, flat head gradient,
    /// dLoss/demb).
    pub fn loss(
        &self,
        emb: &Array2<f64>,
        labels: &[usize],
    ) -> Result<(f64, Array2<f64>, Vec<f64>, Array2<f64>), LearnerError> {
        let (loss, probs, dz) = cross_entropy(&self.logits(emb)?, labels)?;
        let w = self.weight()?;
        let (d_w, d_b, d_emb) = if self.cosine {
            let (we, wn) = unit_rows(&w)?;
            let (ee, en) = unit_rows(emb)?;
            let d_we = dz.t().dot(&ee) * self.scale;
            let d_ee = dz.dot(&we) * self.scale;
            (
                unit_rows_backward(&we, &wn, &d_we),
                Array1::zeros(self.way()),
                unit_rows_backward(&ee, &en, &d_ee),
            )
        } else {
            (dz.t().dot(emb), dz.sum_axis(Axis(0)), dz.dot(&w))
        };
        let mut flat: Vec<f64>;
        match &self.g {
            None => flat = d_w.iter().copied().collect(),
            Some(g) => {
                let (vu, vn) = unit_rows(&self.v)?;
                let d_g: Array1<f64> = (&d_w * &vu).sum_axis(Axis(1));
                let d_v = unit_rows_backward(&vu, &vn, &d_w) * &g.view().insert_axis(Axis(1));
                flat = d_v.iter().copied().collect();
                flat.extend(d_g.iter());
            }
        }
        flat.extend(d_b.iter());
        Ok((loss, probs, flat, d_emb))
    }
}

#[derive(Debug, Clone)]
pub struct FinetuneResult {
    pub head: FinetuneHead,
    /// Present when the embedding was finetuned too.
    pub embedding: Option<Mlp>,
    pub query_probs: Array2<f64>,
    pub support_accuracy: f64,
    pub support_losses: Vec<f64>,
}

impl FinetuneResult {
    pub fn predictions(&self) -> Vec<usize> {
        argmax_rows(&self.query_probs)
    }
}

pub fn argmax_rows(p: &Array2<f64>) -> Vec<usize> {
    p.rows()
        .into_iter()
        .map(|r| {
            let mut best = 0;
            for (k, &v) in r.iter().enumerate() {
                if v > r[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Trains a new output layer (and optionally the embedding) on the support
/// set, then classifies the query set.
pub fn finetune_fit(embedding: &Mlp, batch: &EpisodeBatch, config: &LearnerConfig) -> Result<FinetuneResult, LearnerError> {
    let mut theta = embedding.clone();
    let s_emb = theta.apply(&batch.support_x)?;
    let mut head = FinetuneHead::init(&prototypes(&s_emb, &batch.support_y, batch.way)?, config);
    let mut head_params = head.to_flat();
    let mut head_opt = Optimizer::new(config.finetune_optimizer, config.finetune_lr, head_params.len());
    let mut theta_params = theta.to_flat();
    let mut theta_opt = Optimizer::new(config.finetune_optimizer, config.finetune_lr, theta_params.len());
    let mut losses = Vec::with_capacity(config.finetune_steps + 1);
    let mut cached = s_emb;
    for _ in 0..config.finetune_steps {
        if config.finetune_embedding {
            let (emb, tape) = theta.forward(&batch.support_x)?;
            let (loss, _, g_head, d_emb) = head.loss(&emb, &batch.support_y)?;
            losses.push(loss);
            let (g_theta, _) = tape.backward(&theta, &d_emb);
            head_opt.step(&mut head_params, &g_head);
            theta_opt.step(&mut theta_params, &g_theta.to_flat());
            theta.set_flat(&theta_params);
            if !theta.is_finite() {
                return Err(LearnerError::NonFinite("finetuned embedding"));
            }
        } else {
            let (loss, _, g_head, _) = head.loss(&cached, &batch.support_y)?;
            losses.push(loss);
            head_opt.step(&mut head_params, &g_head);
        }
        head.set_flat(&head_params);
        if head_params.iter().any(|v| !v.is_finite()) {
            return Err(LearnerError::NonFinite("finetuned head"));
        }
    }
    if config.finetune_embedding {
        cached = theta.apply(&batch.support_x)?;
    }
    let (final_loss, s_probs, _, _) = head.loss(&cached, &batch.support_y)?;
    losses.push(final_loss);
    let correct = argmax_rows(&s_probs)
        .iter()
        .zip(&batch.support_y)
        .filter(|(a, b)| a == b)
        .count();
    let q_logits = head.logits(&theta.apply(&batch.query_x)?)?;
    Ok(FinetuneResult {
        head,
        embedding: config.finetune_embedding.then_some(theta),
        query_probs: super::heads::softmax_rows(&q_logits),
        support_accuracy: correct as f64 / batch.support_y.len() as f64,
        support_losses: losses,
    })
}
