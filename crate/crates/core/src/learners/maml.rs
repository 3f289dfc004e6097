//! First-order MAML and Proto-MAML.
//!
//! The meta-gradient treats the Jacobian of every inner update as the
//! identity: the query-loss gradient at the adapted parameters is applied to
//! the initial parameters directly. For Proto-MAML the head initialization
//! depends on the embedding through the prototypes, and that path is kept
//! exact.

use ndarray::Array2;

use super::heads::{prototypes, prototypes_backward, proto_maml_head_backward, proto_maml_head_init, softmax_rows, LinearHead};
use super::network::Mlp;
use super::tasks::EpisodeBatch;
use super::LearnerError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadInit {
    Zero,
    Proto,
}

#[derive(Debug, Clone)]
pub struct Adapted {
    pub embedding: Mlp,
    pub head: LinearHead,
    /// Support loss before each step and after the last one.
    pub support_losses: Vec<f64>,
}

/// `steps` plain gradient steps on the support cross-entropy, moving the
/// head and the embedding together.
pub fn maml_adapt(
    embedding: &Mlp,
    head: LinearHead,
    support_x: &Array2<f64>,
    support_y: &[usize],
    lr: f64,
    steps: usize,
) -> Result<Adapted, LearnerError> {
    let mut theta = embedding.clone();
    let mut head = head;
    let mut losses = Vec::with_capacity(steps + 1);
    for _ in 0..steps {
        let (emb, tape) = theta.forward(support_x)?;
        let (loss, _, g_head, d_emb) = head.loss(&emb, support_y)?;
        losses.push(loss);
        let (g_theta, _) = tape.backward(&theta, &d_emb);
        theta.axpy(-lr, &g_theta);
        head.axpy(-lr, &g_head);
        if !theta.is_finite() || !head.is_finite() {
            return Err(LearnerError::NonFinite("adapted parameters"));
        }
    }
    let emb = theta.apply(support_x)?;
    losses.push(head.loss(&emb, support_y)?.0);
    Ok(Adapted {
        embedding: theta,
        head,
        support_losses: losses,
    })
}

pub fn initial_head(embedding: &Mlp, batch: &EpisodeBatch, init: HeadInit) -> Result<LinearHead, LearnerError> {
    Ok(match init {
        HeadInit::Zero => LinearHead::zeros(batch.way, embedding.output_dim()),
        HeadInit::Proto => {
            let emb = embedding.apply(&batch.support_x)?;
            proto_maml_head_init(&prototypes(&emb, &batch.support_y, batch.way)?)
        }
    })
}

/// Query distribution after adaptation.
pub fn maml_predict(
    embedding: &Mlp,
    batch: &EpisodeBatch,
    init: HeadInit,
    lr: f64,
    steps: usize,
) -> Result<Array2<f64>, LearnerError> {
    let head = initial_head(embedding, batch, init)?;
    let a = maml_adapt(embedding, head, &batch.support_x, &batch.support_y, lr, steps)?;
    let logits = a.head.logits(&a.embedding.apply(&batch.query_x)?);
    super::network::ensure_finite(&logits, "logits")?;
    Ok(softmax_rows(&logits))
}

/// First-order meta-gradient of the query loss; returns (query loss, dθ).
pub fn meta_gradient(
    embedding: &Mlp,
    batch: &EpisodeBatch,
    init: HeadInit,
    lr: f64,
    steps: usize,
) -> Result<(f64, Mlp), LearnerError> {
    let (head, proto_path) = match init {
        HeadInit::Zero => (LinearHead::zeros(batch.way, embedding.output_dim()), None),
        HeadInit::Proto => {
            let (emb, tape) = embedding.forward(&batch.support_x)?;
            let c = prototypes(&emb, &batch.support_y, batch.way)?;
            (proto_maml_head_init(&c), Some((c, tape)))
        }
    };
    let adapted = maml_adapt(embedding, head, &batch.support_x, &batch.support_y, lr, steps)?;
    let (q_emb, q_tape) = adapted.embedding.forward(&batch.query_x)?;
    let (loss, _, g_head, d_q) = adapted.head.loss(&q_emb, &batch.query_y)?;
    let (mut grad, _) = q_tape.backward(&adapted.embedding, &d_q);
    if let Some((c, tape)) = proto_path {
        // The adapted head's gradient stands in for the initial head's.
        let d_c = proto_maml_head_backward(&c, &g_head);
        let d_support = prototypes_backward(&d_c, &batch.support_y);
        let (g_init, _) = tape.backward(embedding, &d_support);
        grad.axpy(1.0, &g_init);
    }
    if !grad.is_finite() {
        return Err(LearnerError::NonFinite("meta-gradient"));
    }
    Ok((loss, grad))
}
