//! Fully connected network with rectifier activations between layers and a
//! linear output layer. Backward passes are written out by hand.

use ndarray::{Array1, Array2, Axis};

use super::LearnerError;
use crate::rng::SeedStream;

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `in x out`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Values saved by [`Mlp::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpTape {
    /// Input of every layer.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation output of every layer.
    pre: Vec<Array2<f64>>,
}

pub(crate) fn ensure_finite(a: &Array2<f64>, what: &'static str) -> Result<(), LearnerError> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(LearnerError::NonFinite(what))
    }
}

impl Mlp {
    /// He-normal weights, zero biases. `dims` lists every layer width,
    /// input first.
    pub fn new(dims: &[usize], rng: &mut SeedStream) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least an input and an output width");
        let layers = dims
            .windows(2)
            .map(|w| {
                let scale = (2.0 / w[0] as f64).sqrt();
                Dense {
                    weight: Array2::from_shape_fn((w[0], w[1]), |_| scale * rng.normal()),
                    bias: Array1::zeros(w[1]),
                }
            })
            .collect();
        Self { layers }
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self {
            layers: dims
                .windows(2)
                .map(|w| Dense {
                    weight: Array2::zeros((w[0], w[1])),
                    bias: Array1::zeros(w[1]),
                })
                .collect(),
        }
    }

    /// Single linear layer computing the identity.
    pub fn identity(dim: usize) -> Self {
        Self {
            layers: vec![Dense {
                weight: Array2::eye(dim),
                bias: Array1::zeros(dim),
            }],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.dims())
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.layers[0].weight.nrows()];
        d.extend(self.layers.iter().map(|l| l.weight.ncols()));
        d
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.weight.ncols()).unwrap_or(0)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend(l.weight.iter().copied());
            out.extend(l.bias.iter().copied());
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params());
        let mut it = flat.iter().copied();
        for l in &mut self.layers {
            l.weight.iter_mut().for_each(|w| *w = it.next().unwrap());
            l.bias.iter_mut().for_each(|b| *b = it.next().unwrap());
        }
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &Mlp) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.scaled_add(alpha, &b.weight);
            a.bias.scaled_add(alpha, &b.bias);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    /// Rows of `x` through the network, keeping what the backward pass needs.
    pub fn forward(&self, x: &Array2<f64>) -> Result<(Array2<f64>, MlpTape), LearnerError> {
        ensure_finite(x, "network input")?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let z = h.dot(&l.weight) + &l.bias;
            inputs.push(h);
            h = if i < last { z.mapv(|v| v.max(0.0)) } else { z.clone() };
            pre.push(z);
        }
        ensure_finite(&h, "network output")?;
        Ok((h, MlpTape { inputs, pre }))
    }

    /// Forward pass without a tape.
    pub fn apply(&self, x: &Array2<f64>) -> Result<Array2<f64>, LearnerError> {
        Ok(self.forward(x)?.0)
    }
}

impl MlpTape {
    /// Smallest |pre-activation| over the rectified layers; infinite for a
    /// single linear layer. Finite differences with a smaller step are
    /// unreliable.
    pub fn kink_margin(&self) -> f64 {
        let hidden = self.pre.len().saturating_sub(1);
        self.pre[..hidden]
            .iter()
            .flat_map(|p| p.iter())
            .fold(f64::INFINITY, |a, b| a.min(b.abs()))
    }

    /// Maps the cotangent of the network output to parameter gradients and
    /// the input cotangent.
    pub fn backward(&self, mlp: &Mlp, d_out: &Array2<f64>) -> (Mlp, Array2<f64>) {
        let mut grads = Vec::with_capacity(mlp.layers.len());
        let mut d = d_out.clone();
        let last = mlp.layers.len() - 1;
        for i in (0..mlp.layers.len()).rev() {
            if i < last {
                // Rectifier derivative: pass where the pre-activation is positive.
                ndarray::Zip::from(&mut d).and(&self.pre[i]).for_each(|g, &z| {
                    if z <= 0.0 {
                        *g = 0.0;
                    }
                });
            }
            let dw = self.inputs[i].t().dot(&d);
            let db = d.sum_axis(Axis(0));
            let dx = d.dot(&mlp.layers[i].weight.t());
            grads.push(Dense { weight: dw, bias: db });
            d = dx;
        }
        grads.reverse();
        (Mlp { layers: grads }, d)
    }
}
