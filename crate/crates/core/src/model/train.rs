//! SGD training loop over pair batches.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::{self, LossConfig};
use crate::pairing::{build_pair_batch, PairBatch};
use crate::scalar::Real;

use super::{backward, init_network, Gradients, Network, NetworkConfig};

/// Which objective drives training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossMode {
    /// Cross entropy only.
    CrossEntropy,
    /// Cross entropy plus the gated pairwise KL terms.
    GuidedKl,
    /// Pairwise hinge on raw embeddings; the classification head is unused.
    SiameseHinge,
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossMode::CrossEntropy => "ce",
            LossMode::GuidedKl => "pfid",
            LossMode::SiameseHinge => "siamese",
        })
    }
}

impl FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ce" => Ok(LossMode::CrossEntropy),
            "pfid" => Ok(LossMode::GuidedKl),
            "siamese" => Ok(LossMode::SiameseHinge),
            other => Err(Error::InvalidConfig {
                reason: format!("unknown loss mode {other:?}; expected ce, pfid or siamese"),
            }),
        }
    }
}

/// Optimizer schedule and batching configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig<F: Real> {
    pub epochs: usize,
    pub pairs_per_batch: usize,
    pub learning_rate: F,
    pub weight_decay: F,
    pub momentum: F,
    /// Multiplied onto the learning rate at every decay epoch.
    pub lr_decay_factor: F,
    /// Strictly increasing epoch indices, all below `epochs`.
    pub lr_decay_epochs: Vec<usize>,
    pub loss_mode: LossMode,
    pub margin: F,
    pub seed: u64,
}

impl<F: Real> Default for TrainConfig<F> {
    /// 40 epochs of 8-pair batches, SGD at 1e-3 with weight decay 5e-4 and
    /// momentum 0.9, rate decayed by 0.1 at epochs 25 and 35, margin 1 nat.
    fn default() -> Self {
        Self {
            epochs: 40,
            pairs_per_batch: 8,
            learning_rate: F::of(1e-3),
            weight_decay: F::of(5e-4),
            momentum: F::of(0.9),
            lr_decay_factor: F::of(0.1),
            lr_decay_epochs: vec![25, 35],
            loss_mode: LossMode::GuidedKl,
            margin: F::one(),
            seed: 0,
        }
    }
}

impl<F: Real> TrainConfig<F> {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > F::zero()) {
            return Err(Error::InvalidConfig {
                reason: format!("learning_rate must be > 0, got {}", self.learning_rate),
            });
        }
        if !(self.momentum >= F::zero() && self.momentum < F::one()) {
            return Err(Error::InvalidConfig {
                reason: format!("momentum must be in [0, 1), got {}", self.momentum),
            });
        }
        if !(self.weight_decay >= F::zero()) || !(self.lr_decay_factor > F::zero()) {
            return Err(Error::InvalidConfig {
                reason: "weight_decay must be >= 0 and lr_decay_factor > 0".into(),
            });
        }
        if !(self.margin >= F::zero()) {
            return Err(Error::InvalidConfig {
                reason: format!("margin must be >= 0, got {}", self.margin),
            });
        }
        if self.pairs_per_batch == 0 {
            return Err(Error::InvalidConfig {
                reason: "pairs_per_batch must be >= 1".into(),
            });
        }
        let increasing = self
            .lr_decay_epochs
            .windows(2)
            .all(|w| w[0] < w[1]);
        let in_range = self.lr_decay_epochs.iter().all(|&e| e < self.epochs);
        if !increasing || !in_range {
            return Err(Error::InvalidConfig {
                reason: format!(
                    "lr_decay_epochs must be strictly increasing and < epochs, got {:?}",
                    self.lr_decay_epochs
                ),
            });
        }
        Ok(())
    }
}

/// Learning rate in effect at `epoch`: the base rate with one decay factor
/// applied per decay epoch `<= epoch`.
pub fn learning_rate_at<F: Real>(config: &TrainConfig<F>, epoch: usize) -> F {
    let decays = config.lr_decay_epochs.iter().filter(|&&e| e <= epoch).count();
    let mut lr = config.learning_rate;
    for _ in 0..decays {
        lr = lr * config.lr_decay_factor;
    }
    lr
}

/// SGD with momentum and coupled weight decay:
/// `v <- momentum*v + grad + weight_decay*theta; theta <- theta - lr(epoch)*v`.
#[derive(Debug, Clone)]
pub struct SgdOptimizer<F: Real> {
    velocity: Gradients<F>,
}

impl<F: Real> SgdOptimizer<F> {
    pub fn new(net: &Network<F>) -> Self {
        Self {
            velocity: Gradients::zeros_like(net),
        }
    }

    pub fn step(
        &mut self,
        net: &mut Network<F>,
        grads: &Gradients<F>,
        config: &TrainConfig<F>,
        epoch: usize,
    ) -> Result<()> {
        if grads.layers.len() != net.layers.len() {
            return Err(Error::DimensionMismatch {
                expected: net.layers.len(),
                got: grads.layers.len(),
            });
        }
        for (l, lg) in grads.layers.iter().enumerate() {
            let finite = lg.weights.iter().flatten().chain(&lg.bias).all(|g| g.is_finite());
            if !finite {
                return Err(Error::NonFiniteGradient {
                    context: format!("layer {l}"),
                });
            }
        }
        let lr = learning_rate_at(config, epoch);
        let momentum = config.momentum;
        let wd = config.weight_decay;
        for ((layer, vel), lg) in net
            .layers
            .iter_mut()
            .zip(&mut self.velocity.layers)
            .zip(&grads.layers)
        {
            for ((wrow, vrow), grow) in layer
                .weights
                .iter_mut()
                .zip(&mut vel.weights)
                .zip(&lg.weights)
            {
                for ((w, v), &g) in wrow.iter_mut().zip(vrow).zip(grow) {
                    *v = momentum * *v + g + wd * *w;
                    *w = *w - lr * *v;
                }
            }
            for ((b, v), &g) in layer.bias.iter_mut().zip(&mut vel.bias).zip(&lg.bias) {
                *v = momentum * *v + g + wd * *b;
                *b = *b - lr * *v;
            }
        }
        let finite = net
            .layers
            .iter()
            .all(|l| l.weights.iter().flatten().chain(&l.bias).all(|p| p.is_finite()));
        if !finite {
            return Err(Error::NonFinite {
                context: "network parameters after SGD step".into(),
            });
        }
        Ok(())
    }
}

/// Pairwise hinge objective over a batch's embeddings: per-pair losses from
/// [`losses::siamese_hinge_loss`], similar and dissimilar sums each
/// normalized by their pair count.
fn siamese_batch_loss<F: Real>(
    embeddings: &[Vec<F>],
    pairs: &PairBatch,
    margin: F,
) -> Result<(F, Vec<Vec<F>>)> {
    let dim = embeddings[0].len();
    let mut value = F::zero();
    let mut grads = vec![vec![F::zero(); dim]; embeddings.len()];
    for (pair_set, same) in [(pairs.similar(), true), (pairs.dissimilar(), false)] {
        if pair_set.is_empty() {
            continue;
        }
        let weight = F::one() / F::of(pair_set.len() as f64);
        for &(i, j) in pair_set {
            let out = losses::siamese_hinge_loss(&embeddings[i], &embeddings[j], same, margin)?;
            value = value + weight * out.value;
            for (g, &d) in grads[i].iter_mut().zip(&out.grad_i) {
                *g = *g + weight * d;
            }
            for (g, &d) in grads[j].iter_mut().zip(&out.grad_j) {
                *g = *g + weight * d;
            }
        }
    }
    Ok((value, grads))
}

/// Train a freshly initialized network. Returns the network and the mean
/// training loss per epoch.
///
/// Each epoch runs `floor(n / (2 * pairs_per_batch))` batches (the trailing
/// partial batch is dropped so every batch carries the full pair count).
/// Deterministic for fixed configs: batches come from a ChaCha stream seeded
/// with `train_config.seed`, parameters from `net_config.seed`.
pub fn train<F: Real>(
    dataset: &Dataset<F>,
    net_config: &NetworkConfig,
    train_config: &TrainConfig<F>,
) -> Result<(Network<F>, Vec<F>)> {
    net_config.validate()?;
    train_config.validate()?;
    if dataset.feature_dim() != net_config.input_dim {
        return Err(Error::DimensionMismatch {
            expected: net_config.input_dim,
            got: dataset.feature_dim(),
        });
    }
    if dataset.num_classes() > net_config.num_classes {
        return Err(Error::LabelOutOfRange {
            label: dataset.num_classes(),
            num_classes: net_config.num_classes,
        });
    }
    let batch_size = 2 * train_config.pairs_per_batch;
    let batches_per_epoch = dataset.len() / batch_size;
    if batches_per_epoch == 0 {
        return Err(Error::InvalidConfig {
            reason: format!(
                "dataset of {} samples is smaller than one batch of {batch_size}",
                dataset.len()
            ),
        });
    }

    let mut net = init_network::<F>(net_config)?;
    let mut optimizer = SgdOptimizer::new(&net);
    let mut rng = ChaCha8Rng::seed_from_u64(train_config.seed);
    let loss_config = LossConfig::new(train_config.margin)?;
    let labels = dataset.labels();
    let mut history = Vec::with_capacity(train_config.epochs);

    for epoch in 0..train_config.epochs {
        let mut epoch_loss = F::zero();
        for _ in 0..batches_per_epoch {
            let batch = build_pair_batch(dataset, train_config.pairs_per_batch, &mut rng)?;
            let slot_labels: Vec<usize> = batch.members().iter().map(|&i| labels[i]).collect();
            let traces: Vec<Vec<Vec<F>>> = batch
                .members()
                .iter()
                .map(|&i| net.forward_trace(&dataset.samples()[i].features))
                .collect::<Result<_>>()?;
            let depth = traces[0].len();
            let logits: Vec<Vec<F>> = traces.iter().map(|t| t[depth - 1].clone()).collect();

            let (value, grads) = match train_config.loss_mode {
                LossMode::CrossEntropy => {
                    let out = losses::cross_entropy_loss(&logits, &slot_labels)?;
                    (value_checked(out.value)?, backward(&net, &traces, &out.grad_logits, None)?)
                }
                LossMode::GuidedKl => {
                    let out = losses::guided_kl_loss(&logits, &slot_labels, &batch, &loss_config)?;
                    (value_checked(out.value)?, backward(&net, &traces, &out.grad_logits, None)?)
                }
                LossMode::SiameseHinge => {
                    let embeddings: Vec<Vec<F>> =
                        traces.iter().map(|t| t[depth - 2].clone()).collect();
                    let (value, demb) =
                        siamese_batch_loss(&embeddings, &batch, train_config.margin)?;
                    let zero_logits = vec![vec![F::zero(); net_config.num_classes]; traces.len()];
                    (
                        value_checked(value)?,
                        backward(&net, &traces, &zero_logits, Some(&demb))?,
                    )
                }
            };
            optimizer.step(&mut net, &grads, train_config, epoch)?;
            epoch_loss = epoch_loss + value;
        }
        history.push(epoch_loss / F::of(batches_per_epoch as f64));
    }
    Ok((net, history))
}

fn value_checked<F: Real>(value: F) -> Result<F> {
    if !value.is_finite() {
        return Err(Error::NonFinite {
            context: "training batch loss".into(),
        });
    }
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SynthConfig};
    use crate::model::Activation;

    fn train_configs() -> (NetworkConfig, TrainConfig<f64>) {
        (
            NetworkConfig {
                input_dim: 8,
                hidden_dims: vec![16],
                embedding_dim: 8,
                num_classes: 4,
                activation: Activation::Rectifier,
                seed: 3,
            },
            TrainConfig {
                epochs: 5,
                pairs_per_batch: 4,
                lr_decay_epochs: vec![3],
                seed: 9,
                ..TrainConfig::default()
            },
        )
    }

    fn toy_dataset() -> Dataset<f64> {
        generate_synthetic(&SynthConfig {
            num_identities: 4,
            samples_per_identity: (10, 10),
            feature_dim: 8,
            nuisance_dim: 2,
            nuisance_scale: 0.3,
            noise_scale: 0.05,
            seed: 1,
        })
        .unwrap()
    }

    #[test]
    fn lr_schedule_matches_decay_rule() {
        let cfg = TrainConfig::<f64> {
            epochs: 40,
            lr_decay_epochs: vec![25, 35],
            ..TrainConfig::default()
        };
        assert_eq!(learning_rate_at(&cfg, 10), 1e-3);
        assert!((learning_rate_at(&cfg, 30) - 1e-4).abs() < 1e-18);
        assert!((learning_rate_at(&cfg, 38) - 1e-5).abs() < 1e-19);
    }

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let (net_cfg, mut cfg) = train_configs();
        cfg.weight_decay = 0.0;
        let mut net = init_network::<f64>(&net_cfg).unwrap();
        let before = net.clone();
        let zeros = Gradients::zeros_like(&net);
        SgdOptimizer::new(&net)
            .step(&mut net, &zeros, &cfg, 0)
            .unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn single_parameter_quadratic_step() {
        // One SGD step on f(w) = w²/2 from w = 1: grad = 1,
        // v = 1 + wd·1, w' = 1 − lr·v.
        let net_cfg = NetworkConfig {
            input_dim: 1,
            hidden_dims: vec![],
            embedding_dim: 1,
            num_classes: 2,
            activation: Activation::Rectifier,
            seed: 0,
        };
        let mut net = init_network::<f64>(&net_cfg).unwrap();
        let mut flat = vec![0.0; net.param_count()];
        flat[0] = 1.0;
        net.set_flat_params(&flat).unwrap();
        let cfg = TrainConfig::<f64> {
            learning_rate: 0.1,
            weight_decay: 0.01,
            momentum: 0.9,
            lr_decay_epochs: vec![],
            ..TrainConfig::default()
        };
        let mut grads = Gradients::zeros_like(&net);
        grads.layers[0].weights[0][0] = 1.0;
        SgdOptimizer::new(&net)
            .step(&mut net, &grads, &cfg, 0)
            .unwrap();
        let expect = 1.0 - 0.1 * (1.0 + 0.01 * 1.0);
        assert!((net.flat_params()[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradients_abort() {
        let (net_cfg, cfg) = train_configs();
        let mut net = init_network::<f64>(&net_cfg).unwrap();
        let mut grads = Gradients::zeros_like(&net);
        grads.layers[0].weights[0][0] = f64::NAN;
        let err = SgdOptimizer::new(&net)
            .step(&mut net, &grads, &cfg, 0)
            .unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { .. }));
    }

    #[test]
    fn training_is_deterministic_with_finite_history() {
        let ds = toy_dataset();
        let (net_cfg, cfg) = train_configs();
        let (a, ha) = train(&ds, &net_cfg, &cfg).unwrap();
        let (b, hb) = train(&ds, &net_cfg, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ha, hb);
        assert_eq!(ha.len(), cfg.epochs);
        assert!(ha.iter().all(|l| l.is_finite()));
    }

    #[test]
    fn all_loss_modes_train() {
        let ds = toy_dataset();
        let (net_cfg, base) = train_configs();
        for mode in [LossMode::CrossEntropy, LossMode::GuidedKl, LossMode::SiameseHinge] {
            let cfg = TrainConfig {
                loss_mode: mode,
                epochs: 2,
                lr_decay_epochs: vec![1],
                ..base.clone()
            };
            let (_, history) = train(&ds, &net_cfg, &cfg).unwrap();
            assert_eq!(history.len(), 2);
            assert!(history.iter().all(|l| l.is_finite()), "{mode}: {history:?}");
        }
    }

    #[test]
    fn train_rejects_undersized_dataset() {
        let ds = toy_dataset();
        let (net_cfg, mut cfg) = train_configs();
        cfg.pairs_per_batch = 100;
        assert!(matches!(
            train(&ds, &net_cfg, &cfg),
            Err(Error::InvalidConfig { .. })
        ));
    }

    #[test]
    fn loss_mode_round_trips_through_strings() {
        for mode in [LossMode::CrossEntropy, LossMode::GuidedKl, LossMode::SiameseHinge] {
            assert_eq!(mode.to_string().parse::<LossMode>().unwrap(), mode);
        }
        assert!("contrastive".parse::<LossMode>().is_err());
    }
}
