//! A small feedforward network trained from scratch: affine layers with
//! rectifier activations, a penultimate embedding layer, and a linear
//! classification head.
//!
//! The embedding exposed to the evaluation protocols is the activation of
//! the last layer before the head. There are no batch-dependent layers, so
//! embeddings of a frozen network are a pure function of the input.

mod checkpoint;
mod train;

pub use checkpoint::{checkpoint_text, load_checkpoint, parse_checkpoint, save_checkpoint};
pub use train::{learning_rate_at, train, LossMode, SgdOptimizer, TrainConfig};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval::EmbeddingSet;
use crate::numerics::l2_normalize;
use crate::scalar::Real;

/// Hidden nonlinearity. Only the rectifier is supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Rectifier,
}

/// Network architecture and initialization seed.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub embedding_dim: usize,
    pub num_classes: usize,
    pub activation: Activation,
    pub seed: u64,
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.embedding_dim == 0 || self.hidden_dims.iter().any(|&d| d == 0)
        {
            return Err(Error::InvalidConfig {
                reason: "all layer dimensions must be >= 1".into(),
            });
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidConfig {
                reason: format!("need num_classes >= 2, got {}", self.num_classes),
            });
        }
        Ok(())
    }

    /// Dimension chain `input -> hidden... -> embedding -> num_classes`.
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 3);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.embedding_dim);
        dims.push(self.num_classes);
        dims
    }
}

/// One affine layer: `weights[out][in]` and a bias per output unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<F: Real> {
    pub weights: Vec<Vec<F>>,
    pub bias: Vec<F>,
}

impl<F: Real> Layer<F> {
    fn apply(&self, input: &[F]) -> Vec<F> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(row, &b)| {
                row.iter().zip(input).map(|(&w, &x)| w * x).sum::<F>() + b
            })
            .collect()
    }
}

/// A feedforward network; holds the parameters the training loop updates.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<F: Real> {
    config: NetworkConfig,
    layers: Vec<Layer<F>>,
}

/// Initialize a network: weights uniform in `±sqrt(6 / fan_in)`, biases
/// zero. Deterministic for a fixed seed (layers drawn in order, rows in
/// order).
pub fn init_network<F: Real>(config: &NetworkConfig) -> Result<Network<F>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let dims = config.layer_dims();
    let mut layers = Vec::with_capacity(dims.len() - 1);
    for pair in dims.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let bound = (6.0 / fan_in as f64).sqrt();
        let weights = (0..fan_out)
            .map(|_| {
                (0..fan_in)
                    .map(|_| F::of(rng.gen_range(-bound..bound)))
                    .collect()
            })
            .collect();
        layers.push(Layer {
            weights,
            bias: vec![F::zero(); fan_out],
        });
    }
    Ok(Network {
        config: config.clone(),
        layers,
    })
}

impl<F: Real> Network<F> {
    /// Rebuild a network from explicit parameters, validating the shape
    /// chain and finiteness (used by the checkpoint loader).
    pub fn from_parts(config: NetworkConfig, layers: Vec<Layer<F>>) -> Result<Self> {
        config.validate()?;
        let dims = config.layer_dims();
        if layers.len() != dims.len() - 1 {
            return Err(Error::InvalidConfig {
                reason: format!(
                    "expected {} layers, got {}",
                    dims.len() - 1,
                    layers.len()
                ),
            });
        }
        for (l, (layer, pair)) in layers.iter().zip(dims.windows(2)).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            if layer.weights.len() != fan_out
                || layer.bias.len() != fan_out
                || layer.weights.iter().any(|row| row.len() != fan_in)
            {
                return Err(Error::InvalidConfig {
                    reason: format!("layer {l} shape does not chain {fan_in} -> {fan_out}"),
                });
            }
            let finite = layer
                .weights
                .iter()
                .flatten()
                .chain(&layer.bias)
                .all(|p| p.is_finite());
            if !finite {
                return Err(Error::NonFinite {
                    context: format!("parameter in layer {l}"),
                });
            }
        }
        Ok(Self { config, layers })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Layer<F>] {
        &self.layers
    }

    /// Forward pass returning `(embedding, logits)`: the embedding is the
    /// rectified activation feeding the classification head.
    pub fn forward(&self, input: &[F]) -> Result<(Vec<F>, Vec<F>)> {
        let trace = self.forward_trace(input)?;
        let n = trace.len();
        Ok((trace[n - 2].clone(), trace[n - 1].clone()))
    }

    /// Full activation stack `[input, hidden..., embedding, logits]` for
    /// backpropagation.
    pub fn forward_trace(&self, input: &[F]) -> Result<Vec<Vec<F>>> {
        if input.len() != self.config.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.config.input_dim,
                got: input.len(),
            });
        }
        let mut trace = Vec::with_capacity(self.layers.len() + 1);
        trace.push(input.to_vec());
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = layer.apply(trace.last().unwrap());
            if l + 1 < self.layers.len() {
                for v in &mut z {
                    *v = v.max(F::zero());
                }
            }
            trace.push(z);
        }
        Ok(trace)
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.iter().map(Vec::len).sum::<usize>() + l.bias.len())
            .sum()
    }

    /// All parameters flattened (layer by layer, weight rows then bias).
    pub fn flat_params(&self) -> Vec<F> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            for row in &layer.weights {
                out.extend_from_slice(row);
            }
            out.extend_from_slice(&layer.bias);
        }
        out
    }

    /// Overwrite all parameters from a flat vector (inverse of
    /// [`Network::flat_params`]).
    pub fn set_flat_params(&mut self, params: &[F]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                expected: self.param_count(),
                got: params.len(),
            });
        }
        let mut it = params.iter();
        for layer in &mut self.layers {
            for row in &mut layer.weights {
                for w in row {
                    *w = *it.next().unwrap();
                }
            }
            for b in &mut layer.bias {
                *b = *it.next().unwrap();
            }
        }
        Ok(())
    }
}

/// Per-layer parameter gradients, same shapes as the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<F: Real> {
    pub layers: Vec<LayerGrad<F>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad<F: Real> {
    pub weights: Vec<Vec<F>>,
    pub bias: Vec<F>,
}

impl<F: Real> Gradients<F> {
    pub fn zeros_like(net: &Network<F>) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: l
                        .weights
                        .iter()
                        .map(|row| vec![F::zero(); row.len()])
                        .collect(),
                    bias: vec![F::zero(); l.bias.len()],
                })
                .collect(),
        }
    }
}

/// Backpropagate per-sample gradients w.r.t. logits (and optionally w.r.t.
/// embeddings, for losses defined on the penultimate layer) into parameter
/// gradients, summed over the batch.
pub fn backward<F: Real>(
    net: &Network<F>,
    traces: &[Vec<Vec<F>>],
    grad_logits: &[Vec<F>],
    grad_embeddings: Option<&[Vec<F>]>,
) -> Result<Gradients<F>> {
    if traces.len() != grad_logits.len() {
        return Err(Error::DimensionMismatch {
            expected: traces.len(),
            got: grad_logits.len(),
        });
    }
    if let Some(ge) = grad_embeddings {
        if ge.len() != traces.len() {
            return Err(Error::DimensionMismatch {
                expected: traces.len(),
                got: ge.len(),
            });
        }
    }
    let depth = net.layers.len();
    let mut grads = Gradients::zeros_like(net);
    for (s, (trace, dlogits)) in traces.iter().zip(grad_logits).enumerate() {
        let mut delta = dlogits.clone();
        for l in (0..depth).rev() {
            let input = &trace[l];
            let lg = &mut grads.layers[l];
            for (row, (&d, b)) in lg
                .weights
                .iter_mut()
                .zip(delta.iter().zip(&mut lg.bias))
            {
                for (w, &x) in row.iter_mut().zip(input) {
                    *w = *w + d * x;
                }
                *b = *b + d;
            }
            if l == 0 {
                break;
            }
            let layer = &net.layers[l];
            let mut upstream = vec![F::zero(); input.len()];
            for (row, &d) in layer.weights.iter().zip(&delta) {
                for (u, &w) in upstream.iter_mut().zip(row) {
                    *u = *u + w * d;
                }
            }
            if l == depth - 1 {
                if let Some(ge) = grad_embeddings {
                    for (u, &g) in upstream.iter_mut().zip(&ge[s]) {
                        *u = *u + g;
                    }
                }
            }
            // Rectifier derivative: activation > 0.
            for (u, &a) in upstream.iter_mut().zip(&trace[l]) {
                if a <= F::zero() {
                    *u = F::zero();
                }
            }
            delta = upstream;
        }
    }
    Ok(grads)
}

/// Embed every sample with a frozen network; embeddings are l2-normalized.
pub fn embed_dataset<F: Real>(net: &Network<F>, dataset: &Dataset<F>) -> Result<EmbeddingSet<F>> {
    let mut vectors = Vec::with_capacity(dataset.len());
    for (index, sample) in dataset.samples().iter().enumerate() {
        let (embedding, _) = net.forward(&sample.features)?;
        let unit = l2_normalize(&embedding).map_err(|_| Error::ZeroEmbedding { index })?;
        vectors.push(unit);
    }
    EmbeddingSet::new(vectors, dataset.labels())
}
