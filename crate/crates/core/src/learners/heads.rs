//! Episode-level prediction rules and their losses. Every loss returns the
//! cotangents of the support and query embeddings so callers can continue
//! the backward pass through the embedding network.

use ndarray::{s, Array1, Array2, Axis};

use super::network::{ensure_finite, Mlp};
use super::LearnerError;

/// Loss value, predicted distribution and embedding cotangents.
#[derive(Debug, Clone)]
pub struct EmbeddingGrad {
    pub loss: f64,
    /// `queries x way`
    pub probs: Array2<f64>,
    pub d_support: Array2<f64>,
    pub d_query: Array2<f64>,
}

pub fn softmax_rows(z: &Array2<f64>) -> Array2<f64> {
    let mut p = z.clone();
    for mut row in p.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let sum = row.sum();
        row /= sum;
    }
    p
}

/// Mean cross-entropy of row-wise softmax; returns (loss, probs, dLoss/dlogits).
pub fn cross_entropy(
    logits: &Array2<f64>,
    labels: &[usize],
) -> Result<(f64, Array2<f64>, Array2<f64>), LearnerError> {
    ensure_finite(logits, "logits")?;
    let t = logits.nrows();
    if labels.len() != t {
        return Err(LearnerError::Shape(format!("{} labels for {t} rows", labels.len())));
    }
    let probs = softmax_rows(logits);
    let mut loss = 0.0;
    let mut d = probs.clone();
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = m + row.mapv(|v| (v - m).exp()).sum().ln();
        loss += lse - logits[[i, y]];
        d[[i, y]] -= 1.0;
    }
    d /= t as f64;
    let loss = loss / t as f64;
    if !loss.is_finite() {
        return Err(LearnerError::NonFinite("loss"));
    }
    Ok((loss, probs, d))
}

fn class_counts(labels: &[usize], way: usize) -> Result<Vec<usize>, LearnerError> {
    let mut counts = vec![0usize; way];
    for &y in labels {
        if y >= way {
            return Err(LearnerError::Shape(format!("label {y} outside way {way}")));
        }
        counts[y] += 1;
    }
    if let Some(k) = counts.iter().position(|&c| c == 0) {
        return Err(LearnerError::EmptyClass(k));
    }
    Ok(counts)
}

/// Class means of the support embeddings, one row per class.
pub fn prototypes(support: &Array2<f64>, labels: &[usize], way: usize) -> Result<Array2<f64>, LearnerError> {
    let counts = class_counts(labels, way)?;
    let mut c = Array2::zeros((way, support.ncols()));
    for (i, &y) in labels.iter().enumerate() {
        let mut row = c.row_mut(y);
        row += &support.row(i);
    }
    for (k, n) in counts.iter().enumerate() {
        let mut row = c.row_mut(k);
        row /= *n as f64;
    }
    Ok(c)
}

/// Spreads prototype cotangents back onto the support rows.
pub fn prototypes_backward(d_protos: &Array2<f64>, labels: &[usize]) -> Array2<f64> {
    let way = d_protos.nrows();
    let mut counts = vec![0usize; way];
    labels.iter().for_each(|&y| counts[y] += 1);
    let mut d = Array2::zeros((labels.len(), d_protos.ncols()));
    for (i, &y) in labels.iter().enumerate() {
        d.row_mut(i).assign(&(&d_protos.row(y) / counts[y] as f64));
    }
    d
}

fn sq_distances(query: &Array2<f64>, centers: &Array2<f64>) -> Array2<f64> {
    let mut d = Array2::zeros((query.nrows(), centers.nrows()));
    for (t, q) in query.rows().into_iter().enumerate() {
        for (k, c) in centers.rows().into_iter().enumerate() {
            d[[t, k]] = q.iter().zip(c.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        }
    }
    d
}

pub fn protonet_predict(
    support: &Array2<f64>,
    labels: &[usize],
    query: &Array2<f64>,
    way: usize,
) -> Result<Array2<f64>, LearnerError> {
    let c = prototypes(support, labels, way)?;
    let logits = sq_distances(query, &c).mapv(|v| -v);
    ensure_finite(&logits, "logits")?;
    Ok(softmax_rows(&logits))
}

pub fn protonet_loss(
    support: &Array2<f64>,
    s_labels: &[usize],
    query: &Array2<f64>,
    q_labels: &[usize],
    way: usize,
) -> Result<EmbeddingGrad, LearnerError> {
    let c = prototypes(support, s_labels, way)?;
    let logits = sq_distances(query, &c).mapv(|v| -v);
    let (loss, probs, dz) = cross_entropy(&logits, q_labels)?;
    // z_tk = -||q_t - c_k||^2
    let mut d_query = Array2::zeros(query.raw_dim());
    let mut d_c = Array2::zeros(c.raw_dim());
    for t in 0..query.nrows() {
        for k in 0..way {
            let g = dz[[t, k]];
            let diff = &query.row(t) - &c.row(k);
            d_query.row_mut(t).scaled_add(-2.0 * g, &diff);
            d_c.row_mut(k).scaled_add(2.0 * g, &diff);
        }
    }
    Ok(EmbeddingGrad {
        loss,
        probs,
        d_support: prototypes_backward(&d_c, s_labels),
        d_query,
    })
}

fn normalize_rows(x: &Array2<f64>) -> Result<(Array2<f64>, Array1<f64>), LearnerError> {
    let norms = x.map_axis(Axis(1), |r| r.dot(&r).sqrt());
    if norms.iter().any(|&n| n == 0.0) {
        return Err(LearnerError::ZeroNorm);
    }
    let unit = x / &norms.view().insert_axis(Axis(1));
    Ok((unit, norms))
}

/// Cotangent of `x` given the cotangent of `x / ||x||`.
fn normalize_backward(unit: &Array2<f64>, norms: &Array1<f64>, d_unit: &Array2<f64>) -> Array2<f64> {
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

struct Attention {
    alpha: Array2<f64>,
    probs: Array2<f64>,
    unit_s: Option<(Array2<f64>, Array1<f64>)>,
    unit_q: Option<(Array2<f64>, Array1<f64>)>,
}

fn matching_attention(
    support: &Array2<f64>,
    labels: &[usize],
    query: &Array2<f64>,
    way: usize,
    distance: super::Distance,
) -> Result<Attention, LearnerError> {
    if support.nrows() == 0 {
        return Err(LearnerError::EmptySupport);
    }
    class_counts(labels, way)?;
    let (sim, unit_s, unit_q) = match distance {
        super::Distance::Cosine => {
            let s = normalize_rows(support)?;
            let q = normalize_rows(query)?;
            (q.0.dot(&s.0.t()), Some(s), Some(q))
        }
        super::Distance::Euclidean => (sq_distances(query, support).mapv(|v| -v), None, None),
    };
    ensure_finite(&sim, "attention logits")?;
    let alpha = softmax_rows(&sim);
    let mut probs = Array2::zeros((query.nrows(), way));
    for (i, &y) in labels.iter().enumerate() {
        let mut col = probs.column_mut(y);
        col += &alpha.column(i);
    }
    Ok(Attention { alpha, probs, unit_s, unit_q })
}

/// Attention-weighted vote of the support labels. Cosine similarity unless
/// `distance` asks for negative squared euclidean distance.
pub fn matchingnet_predict(
    support: &Array2<f64>,
    labels: &[usize],
    query: &Array2<f64>,
    way: usize,
    distance: super::Distance,
) -> Result<Array2<f64>, LearnerError> {
    Ok(matching_attention(support, labels, query, way, distance)?.probs)
}

pub fn matchingnet_loss(
    support: &Array2<f64>,
    s_labels: &[usize],
    query: &Array2<f64>,
    q_labels: &[usize],
    way: usize,
    distance: super::Distance,
) -> Result<EmbeddingGrad, LearnerError> {
    let att = matching_attention(support, s_labels, query, way, distance)?;
    let t_n = query.nrows();
    let mut loss = 0.0;
    let mut d_alpha = Array2::zeros(att.alpha.raw_dim());
    for (t, &y) in q_labels.iter().enumerate() {
        let p = att.probs[[t, y]];
        loss -= p.ln();
        for (i, &yi) in s_labels.iter().enumerate() {
            if yi == y {
                d_alpha[[t, i]] = -1.0 / (p * t_n as f64);
            }
        }
    }
    loss /= t_n as f64;
    if !loss.is_finite() {
        return Err(LearnerError::NonFinite("loss"));
    }
    // Softmax backward, row by row.
    let mut d_sim = Array2::zeros(att.alpha.raw_dim());
    for t in 0..t_n {
        let a = att.alpha.row(t);
        let da = d_alpha.row(t);
        let inner = a.dot(&da);
        d_sim.row_mut(t).assign(&(&a * &(&da - inner)));
    }
    let (d_support, d_query) = match (&att.unit_s, &att.unit_q) {
        (Some((us, ns)), Some((uq, nq))) => {
            let d_uq = d_sim.dot(us);
            let d_us = d_sim.t().dot(uq);
            (normalize_backward(us, ns, &d_us), normalize_backward(uq, nq, &d_uq))
        }
        _ => {
            let mut dq = Array2::zeros(query.raw_dim());
            let mut ds = Array2::zeros(support.raw_dim());
            for t in 0..t_n {
                for i in 0..support.nrows() {
                    let g = d_sim[[t, i]];
                    let diff = &query.row(t) - &support.row(i);
                    dq.row_mut(t).scaled_add(-2.0 * g, &diff);
                    ds.row_mut(i).scaled_add(2.0 * g, &diff);
                }
            }
            (ds, dq)
        }
    };
    Ok(EmbeddingGrad {
        loss,
        probs: att.probs,
        d_support,
        d_query,
    })
}

fn relation_inputs(protos: &Array2<f64>, query: &Array2<f64>) -> Array2<f64> {
    let (way, e) = protos.dim();
    let t_n = query.nrows();
    let mut x = Array2::zeros((t_n * way, 2 * e));
    for t in 0..t_n {
        for k in 0..way {
            let mut row = x.row_mut(t * way + k);
            row.slice_mut(s![..e]).assign(&protos.row(k));
            row.slice_mut(s![e..]).assign(&query.row(t));
        }
    }
    x
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Relation scores in [0, 1], `queries x way`.
pub fn relationnet_predict(
    support: &Array2<f64>,
    labels: &[usize],
    query: &Array2<f64>,
    way: usize,
    relation: &Mlp,
) -> Result<Array2<f64>, LearnerError> {
    let c = prototypes(support, labels, way)?;
    let out = relation.apply(&relation_inputs(&c, query))?;
    Ok(out
        .into_shape_with_order((query.nrows(), way))
        .map_err(|e| LearnerError::Shape(e.to_string()))?
        .mapv(sigmoid))
}

/// Mean squared error between relation scores and one-hot targets; `probs`
/// of the result holds the raw scores. Also returns the relation-module
/// gradient.
pub fn relationnet_loss(
    support: &Array2<f64>,
    s_labels: &[usize],
    query: &Array2<f64>,
    q_labels: &[usize],
    way: usize,
    relation: &Mlp,
) -> Result<(EmbeddingGrad, Mlp), LearnerError> {
    let c = prototypes(support, s_labels, way)?;
    let e = c.ncols();
    let t_n = query.nrows();
    let (out, tape) = relation.forward(&relation_inputs(&c, query))?;
    let pairs = (t_n * way) as f64;
    let mut scores = Array2::zeros((t_n, way));
    let mut d_out = Array2::zeros(out.raw_dim());
    let mut loss = 0.0;
    for t in 0..t_n {
        for k in 0..way {
            let r = t * way + k;
            let sc = sigmoid(out[[r, 0]]);
            let target = if q_labels[t] == k { 1.0 } else { 0.0 };
            scores[[t, k]] = sc;
            loss += (sc - target) * (sc - target);
            d_out[[r, 0]] = 2.0 * (sc - target) / pairs * sc * (1.0 - sc);
        }
    }
    let (g_rel, d_in) = tape.backward(relation, &d_out);
    let mut d_c = Array2::zeros(c.raw_dim());
    let mut d_query = Array2::zeros(query.raw_dim());
    for t in 0..t_n {
        for k in 0..way {
            let row = d_in.row(t * way + k);
            let mut dc = d_c.row_mut(k);
            dc += &row.slice(s![..e]);
            let mut dq = d_query.row_mut(t);
            dq += &row.slice(s![e..]);
        }
    }
    Ok((
        EmbeddingGrad {
            loss: loss / pairs,
            probs: scores,
            d_support: prototypes_backward(&d_c, s_labels),
            d_query,
        },
        g_rel,
    ))
}

/// Linear classifier on embeddings: logits = W e + b.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    /// `way x embedding`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl LinearHead {
    pub fn zeros(way: usize, dim: usize) -> Self {
        Self {
            weight: Array2::zeros((way, dim)),
            bias: Array1::zeros(way),
        }
    }

    pub fn way(&self) -> usize {
        self.weight.nrows()
    }

    pub fn logits(&self, emb: &Array2<f64>) -> Array2<f64> {
        emb.dot(&self.weight.t()) + &self.bias
    }

    /// Cross-entropy on `emb`; returns (loss, probs, head gradient, dLoss/demb).
    pub fn loss(
        &self,
        emb: &Array2<f64>,
        labels: &[usize],
    ) -> Result<(f64, Array2<f64>, LinearHead, Array2<f64>), LearnerError> {
        let (loss, probs, dz) = cross_entropy(&self.logits(emb), labels)?;
        let grad = LinearHead {
            weight: dz.t().dot(emb),
            bias: dz.sum_axis(Axis(0)),
        };
        let d_emb = dz.dot(&self.weight);
        Ok((loss, probs, grad, d_emb))
    }

    pub fn axpy(&mut self, alpha: f64, other: &LinearHead) {
        self.weight.scaled_add(alpha, &other.weight);
        self.bias.scaled_add(alpha, &other.bias);
    }

    pub fn is_finite(&self) -> bool {
        self.weight.iter().chain(self.bias.iter()).all(|v| v.is_finite())
    }
}

/// W row k = 2 c_k, b_k = -||c_k||^2.
pub fn proto_maml_head_init(protos: &Array2<f64>) -> LinearHead {
    LinearHead {
        weight: protos * 2.0,
        bias: protos.map_axis(Axis(1), |r| -r.dot(&r)),
    }
}

/// Cotangent of the prototypes given the cotangent of the head built by
/// [`proto_maml_head_init`].
pub fn proto_maml_head_backward(protos: &Array2<f64>, d_head: &LinearHead) -> Array2<f64> {
    let mut d = &d_head.weight * 2.0;
    for k in 0..protos.nrows() {
        d.row_mut(k).scaled_add(-2.0 * d_head.bias[k], &protos.row(k));
    }
    d
}
