//! Training objectives with exact analytic gradients.
//!
//! The combined objective adds two guided pairwise terms to the standard
//! cross entropy: a symmetric KL divergence pulling the class-probability
//! distributions of same-identity pairs together, and a margin hinge pushing
//! those of different-identity pairs at least `m` nats apart. Each pair is
//! gated by an indicator that is active only when at least one member is
//! currently classified correctly; the gate is a stop-gradient constant.
//!
//! Every gradient here is checked against the central-difference oracle in
//! [`crate::numerics::finite_difference_gradient`].

use crate::error::{Error, Result};
use crate::numerics::{self, softmax, ProbDist, PROB_CLAMP_EPS};
use crate::pairing::PairBatch;
use crate::scalar::Real;

/// Pairwise-loss configuration. The margin is in nats.
#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig<F: Real> {
    margin: F,
}

impl<F: Real> LossConfig<F> {
    pub fn new(margin: F) -> Result<Self> {
        if !(margin >= F::zero()) {
            return Err(Error::InvalidConfig {
                reason: format!("margin must be >= 0, got {margin}"),
            });
        }
        Ok(Self { margin })
    }

    pub fn margin(&self) -> F {
        self.margin
    }
}

impl<F: Real> Default for LossConfig<F> {
    /// Margin of 1 nat.
    fn default() -> Self {
        Self { margin: F::one() }
    }
}

/// A loss value with its gradient w.r.t. every sample's logits.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput<F: Real> {
    pub value: F,
    /// One gradient vector per batch sample, same shape as its logits.
    pub grad_logits: Vec<Vec<F>>,
}

/// Mean cross entropy `-log softmax(z_i)[l_i]` over a batch, with the
/// softmax-minus-one-hot gradient divided by the batch size.
pub fn cross_entropy_loss<F: Real>(logits: &[Vec<F>], labels: &[usize]) -> Result<LossOutput<F>> {
    if logits.is_empty() {
        return Err(Error::EmptyInput {
            context: "cross entropy over an empty batch".into(),
        });
    }
    if logits.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: logits.len(),
            got: labels.len(),
        });
    }
    let classes = logits[0].len();
    let batch = F::of(logits.len() as f64);
    let mut value = F::zero();
    let mut grads = Vec::with_capacity(logits.len());
    for (z, &label) in logits.iter().zip(labels) {
        if z.len() != classes {
            return Err(Error::DimensionMismatch {
                expected: classes,
                got: z.len(),
            });
        }
        if label == 0 || label > classes {
            return Err(Error::LabelOutOfRange {
                label,
                num_classes: classes,
            });
        }
        let log_probs = numerics::log_softmax(z)?;
        value = value - log_probs[label - 1];
        let mut g: Vec<F> = log_probs.iter().map(|&lp| lp.exp() / batch).collect();
        g[label - 1] = g[label - 1] - F::one() / batch;
        grads.push(g);
    }
    value = value / batch;
    if !value.is_finite() {
        return Err(Error::NonFinite {
            context: "cross entropy value".into(),
        });
    }
    Ok(LossOutput {
        value,
        grad_logits: grads,
    })
}

/// Symmetric KL divergence `KL(p‖q) + KL(q‖p)` for a similar pair.
pub fn similar_pair_loss<F: Real>(p: &ProbDist<F>, q: &ProbDist<F>) -> Result<F> {
    Ok(numerics::kl_divergence(p, q)? + numerics::kl_divergence(q, p)?)
}

/// Margin hinge `max(0, m − KL(p‖q)) + max(0, m − KL(q‖p))` for a
/// dissimilar pair; always in `[0, 2m]`.
pub fn dissimilar_pair_loss<F: Real>(p: &ProbDist<F>, q: &ProbDist<F>, margin: F) -> Result<F> {
    if !(margin >= F::zero()) {
        return Err(Error::InvalidConfig {
            reason: format!("margin must be >= 0, got {margin}"),
        });
    }
    let forward = numerics::kl_divergence(p, q)?;
    let backward = numerics::kl_divergence(q, p)?;
    Ok((margin - forward).max(F::zero()) + (margin - backward).max(F::zero()))
}

/// Pair gate: active iff `argmax(p) = l_i` or `argmax(q) = l_j`
/// (inclusive or). Labels are 1-based.
pub fn guide_gate<F: Real>(p: &ProbDist<F>, q: &ProbDist<F>, l_i: usize, l_j: usize) -> bool {
    p.argmax() + 1 == l_i || q.argmax() + 1 == l_j
}

/// KL(p‖q) under the elementwise clamp, together with its derivative w.r.t.
/// both probability vectors. Coordinates where the clamp is active get a
/// zero derivative, and the value is floored at 0, matching
/// [`numerics::kl_divergence`] bitwise.
fn kl_with_prob_grads<F: Real>(p: &[F], q: &[F]) -> (F, Vec<F>, Vec<F>) {
    let eps = F::of(PROB_CLAMP_EPS);
    let one = F::one();
    let mut value = F::zero();
    let mut dp = vec![F::zero(); p.len()];
    let mut dq = vec![F::zero(); p.len()];
    for k in 0..p.len() {
        let pc = p[k].max(eps).min(one);
        let qc = q[k].max(eps).min(one);
        let ln_ratio = (pc / qc).ln();
        value = value + pc * ln_ratio;
        if p[k] >= eps {
            dp[k] = ln_ratio + one;
        }
        if q[k] >= eps {
            dq[k] = -(pc / qc);
        }
    }
    (value.max(F::zero()), dp, dq)
}

/// Pull a gradient w.r.t. softmax outputs back to the logits:
/// `J^T g = p ⊙ (g − ⟨p, g⟩)`.
fn softmax_vjp<F: Real>(probs: &[F], grad_probs: &[F]) -> Vec<F> {
    let inner: F = probs.iter().zip(grad_probs).map(|(&p, &g)| p * g).sum();
    probs
        .iter()
        .zip(grad_probs)
        .map(|(&p, &g)| p * (g - inner))
        .collect()
}

/// A pair-loss value with gradients w.r.t. both members' logits.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitPairGrad<F: Real> {
    pub value: F,
    pub grad_p: Vec<F>,
    pub grad_q: Vec<F>,
}

fn check_same_len<F: Real>(p: &[F], q: &[F]) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            got: q.len(),
        });
    }
    Ok(())
}

/// Similar-pair loss evaluated on two logit vectors, differentiated through
/// both softmaxes.
pub fn similar_pair_loss_with_grad<F: Real>(
    p_logits: &[F],
    q_logits: &[F],
) -> Result<LogitPairGrad<F>> {
    check_same_len(p_logits, q_logits)?;
    let p = softmax(p_logits)?;
    let q = softmax(q_logits)?;
    Ok(similar_grad_from_probs(p.probs(), q.probs()))
}

fn similar_grad_from_probs<F: Real>(p: &[F], q: &[F]) -> LogitPairGrad<F> {
    let (fwd, dp_fwd, dq_fwd) = kl_with_prob_grads(p, q);
    let (bwd, dq_bwd, dp_bwd) = kl_with_prob_grads(q, p);
    let gp: Vec<F> = dp_fwd.iter().zip(&dp_bwd).map(|(&a, &b)| a + b).collect();
    let gq: Vec<F> = dq_fwd.iter().zip(&dq_bwd).map(|(&a, &b)| a + b).collect();
    LogitPairGrad {
        value: fwd + bwd,
        grad_p: softmax_vjp(p, &gp),
        grad_q: softmax_vjp(q, &gq),
    }
}

/// Dissimilar-pair hinge evaluated on two logit vectors, differentiated
/// through both softmaxes. Inactive hinge terms contribute zero gradient.
pub fn dissimilar_pair_loss_with_grad<F: Real>(
    p_logits: &[F],
    q_logits: &[F],
    margin: F,
) -> Result<LogitPairGrad<F>> {
    check_same_len(p_logits, q_logits)?;
    if !(margin >= F::zero()) {
        return Err(Error::InvalidConfig {
            reason: format!("margin must be >= 0, got {margin}"),
        });
    }
    let p = softmax(p_logits)?;
    let q = softmax(q_logits)?;
    Ok(dissimilar_grad_from_probs(p.probs(), q.probs(), margin))
}

fn dissimilar_grad_from_probs<F: Real>(p: &[F], q: &[F], margin: F) -> LogitPairGrad<F> {
    let (fwd, dp_fwd, dq_fwd) = kl_with_prob_grads(p, q);
    let (bwd, dq_bwd, dp_bwd) = kl_with_prob_grads(q, p);
    let fwd_active = margin - fwd > F::zero();
    let bwd_active = margin - bwd > F::zero();
    let value = (margin - fwd).max(F::zero()) + (margin - bwd).max(F::zero());
    let mut gp = vec![F::zero(); p.len()];
    let mut gq = vec![F::zero(); p.len()];
    for k in 0..p.len() {
        if fwd_active {
            gp[k] = gp[k] - dp_fwd[k];
            gq[k] = gq[k] - dq_fwd[k];
        }
        if bwd_active {
            gp[k] = gp[k] - dp_bwd[k];
            gq[k] = gq[k] - dq_bwd[k];
        }
    }
    LogitPairGrad {
        value,
        grad_p: softmax_vjp(p, &gp),
        grad_q: softmax_vjp(q, &gq),
    }
}

/// The combined objective: cross entropy plus the gated pairwise terms,
/// each normalized by its pair count,
/// `L = L_CE + (1/|C_s|) Σ a·L_s + (1/|C_d|) Σ a·L_d`.
///
/// The gate is evaluated per pair and treated as a constant: gated-off pairs
/// contribute nothing to either the value or the gradient, and an empty pair
/// set contributes zero rather than failing. Pairs are accumulated in
/// construction order, so results are bitwise reproducible.
pub fn guided_kl_loss<F: Real>(
    logits: &[Vec<F>],
    labels: &[usize],
    pairs: &PairBatch,
    config: &LossConfig<F>,
) -> Result<LossOutput<F>> {
    let base = cross_entropy_loss(logits, labels)?;
    let len = logits.len();
    for &(i, j) in pairs.similar().iter().chain(pairs.dissimilar()) {
        if let Some(index) = [i, j].into_iter().find(|&x| x >= len) {
            return Err(Error::PairIndexOutOfRange { index, len });
        }
    }
    for &(i, j) in pairs.similar() {
        if labels[i] != labels[j] {
            return Err(Error::InvalidConfig {
                reason: format!("similar pair ({i},{j}) spans labels {} and {}", labels[i], labels[j]),
            });
        }
    }
    for &(i, j) in pairs.dissimilar() {
        if labels[i] == labels[j] {
            return Err(Error::InvalidConfig {
                reason: format!("dissimilar pair ({i},{j}) shares label {}", labels[i]),
            });
        }
    }

    let dists: Vec<ProbDist<F>> = logits
        .iter()
        .map(|z| softmax(z))
        .collect::<Result<_>>()?;
    let mut value = base.value;
    let mut grads = base.grad_logits;

    let mut accumulate = |pair_set: &[(usize, usize)], dissim: bool| {
        if pair_set.is_empty() {
            return;
        }
        let weight = F::one() / F::of(pair_set.len() as f64);
        for &(i, j) in pair_set {
            let (p, q) = (&dists[i], &dists[j]);
            if !guide_gate(p, q, labels[i], labels[j]) {
                continue;
            }
            let pair = if dissim {
                dissimilar_grad_from_probs(p.probs(), q.probs(), config.margin)
            } else {
                similar_grad_from_probs(p.probs(), q.probs())
            };
            value = value + weight * pair.value;
            for (g, d) in grads[i].iter_mut().zip(&pair.grad_p) {
                *g = *g + weight * *d;
            }
            for (g, d) in grads[j].iter_mut().zip(&pair.grad_q) {
                *g = *g + weight * *d;
            }
        }
    };
    accumulate(pairs.similar(), false);
    accumulate(pairs.dissimilar(), true);

    if !value.is_finite() {
        return Err(Error::NonFinite {
            context: "guided KL loss value".into(),
        });
    }
    Ok(LossOutput {
        value,
        grad_logits: grads,
    })
}

/// An embedding-space pair loss with gradients w.r.t. both embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingPairLoss<F: Real> {
    pub value: F,
    pub grad_i: Vec<F>,
    pub grad_j: Vec<F>,
}

/// Hinge loss on embedding distance: squared distance for same-identity
/// pairs, `max(0, margin − ‖e_i − e_j‖)²` otherwise.
///
/// At exactly coincident embeddings of a dissimilar pair the hinge has a
/// cusp; the zero subgradient is used there.
pub fn siamese_hinge_loss<F: Real>(
    emb_i: &[F],
    emb_j: &[F],
    same: bool,
    margin: F,
) -> Result<EmbeddingPairLoss<F>> {
    check_same_len(emb_i, emb_j)?;
    if !(margin > F::zero()) {
        return Err(Error::InvalidConfig {
            reason: format!("siamese margin must be > 0, got {margin}"),
        });
    }
    let diff: Vec<F> = emb_i.iter().zip(emb_j).map(|(&a, &b)| a - b).collect();
    let dist_sq: F = diff.iter().map(|&d| d * d).sum();
    let two = F::of(2.0);
    if same {
        return Ok(EmbeddingPairLoss {
            value: dist_sq,
            grad_i: diff.iter().map(|&d| two * d).collect(),
            grad_j: diff.iter().map(|&d| -two * d).collect(),
        });
    }
    let dist = dist_sq.sqrt();
    let gap = margin - dist;
    if gap <= F::zero() {
        return Ok(EmbeddingPairLoss {
            value: F::zero(),
            grad_i: vec![F::zero(); diff.len()],
            grad_j: vec![F::zero(); diff.len()],
        });
    }
    if dist == F::zero() {
        return Ok(EmbeddingPairLoss {
            value: margin * margin,
            grad_i: vec![F::zero(); diff.len()],
            grad_j: vec![F::zero(); diff.len()],
        });
    }
    let coef = -two * gap / dist;
    Ok(EmbeddingPairLoss {
        value: gap * gap,
        grad_i: diff.iter().map(|&d| coef * d).collect(),
        grad_j: diff.iter().map(|&d| -coef * d).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_difference_gradient;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Guarded relative error: denominators below 1e-4 are floored so that
    /// near-zero gradients are compared absolutely (the finite-difference
    /// noise floor at h = 1e-5 in f64 is ~1e-9).
    fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
        analytic
            .iter()
            .zip(numeric)
            .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-4))
            .fold(0.0, f64::max)
    }

    fn random_logits(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
        (0..k).map(|_| rng.gen_range(-3.0..3.0)).collect()
    }

    #[test]
    fn ce_uniform_logits() {
        let out = cross_entropy_loss(&[vec![0.0f64, 0.0]], &[1]).unwrap();
        assert_relative_eq!(out.value, std::f64::consts::LN_2, max_relative = 1e-12);
    }

    #[test]
    fn ce_saturated_correct_prediction() {
        let out = cross_entropy_loss(&[vec![30.0f64, 0.0]], &[1]).unwrap();
        assert!(out.value < 1e-9, "{}", out.value);
    }

    #[test]
    fn ce_direct_value() {
        // Oracle: -ln(e^3 / (e + e^2 + e^3)) = 0.40760596444438030.
        let sum = 1f64.exp() + 2f64.exp() + 3f64.exp();
        let expect = -(3f64.exp() / sum).ln();
        assert_relative_eq!(expect, 0.40760596444438030, max_relative = 1e-14);
        let out = cross_entropy_loss(&[vec![1.0f64, 2.0, 3.0]], &[3]).unwrap();
        assert_relative_eq!(out.value, expect, max_relative = 1e-12);
    }

    #[test]
    fn ce_rejects_bad_labels() {
        assert!(matches!(
            cross_entropy_loss(&[vec![0.0f64, 0.0]], &[3]),
            Err(Error::LabelOutOfRange { label: 3, .. })
        ));
        assert!(matches!(
            cross_entropy_loss(&[vec![0.0f64, 0.0]], &[0]),
            Err(Error::LabelOutOfRange { label: 0, .. })
        ));
    }

    #[test]
    fn ce_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let k = rng.gen_range(2..=6);
            let batch = rng.gen_range(1..=5);
            let logits: Vec<Vec<f64>> = (0..batch).map(|_| random_logits(&mut rng, k)).collect();
            let labels: Vec<usize> = (0..batch).map(|_| rng.gen_range(1..=k)).collect();
            let out = cross_entropy_loss(&logits, &labels).unwrap();
            let flat: Vec<f64> = logits.iter().flatten().copied().collect();
            let numeric = finite_difference_gradient(
                |x: &[f64]| {
                    let z: Vec<Vec<f64>> = x.chunks(k).map(|c| c.to_vec()).collect();
                    cross_entropy_loss(&z, &labels).unwrap().value
                },
                &flat,
                1e-5,
            );
            let analytic: Vec<f64> = out.grad_logits.iter().flatten().copied().collect();
            assert!(max_rel_err(&analytic, &numeric) < 1e-4);
        }
    }

    #[test]
    fn similar_pair_examples() {
        let p = ProbDist::new(vec![0.7f64, 0.3]).unwrap();
        let q = ProbDist::new(vec![0.3f64, 0.7]).unwrap();
        assert_eq!(similar_pair_loss(&p, &p).unwrap(), 0.0);
        // Oracle: 2 × (0.7·ln(7/3) + 0.3·ln(3/7)) = 0.6778382883097629.
        assert_relative_eq!(
            similar_pair_loss(&p, &q).unwrap(),
            0.6778382883097629,
            max_relative = 1e-12
        );
        assert_eq!(
            similar_pair_loss(&p, &q).unwrap(),
            similar_pair_loss(&q, &p).unwrap()
        );
    }

    #[test]
    fn dissimilar_pair_examples() {
        let p = ProbDist::new(vec![0.7f64, 0.3]).unwrap();
        let q = ProbDist::new(vec![0.3f64, 0.7]).unwrap();
        assert_eq!(dissimilar_pair_loss(&p, &p, 1.0).unwrap(), 2.0);
        // Oracle: 2 × (1 − 0.33891914415488145) = 1.3221617116902371.
        assert_relative_eq!(
            dissimilar_pair_loss(&p, &q, 1.0).unwrap(),
            1.3221617116902371,
            max_relative = 1e-12
        );
        // Both KL terms above the margin saturate the hinge.
        let a = ProbDist::new(vec![0.999f64, 0.001]).unwrap();
        let b = ProbDist::new(vec![0.001f64, 0.999]).unwrap();
        assert_eq!(dissimilar_pair_loss(&a, &b, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn dissimilar_bounded_and_monotone_in_margin() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let k = rng.gen_range(2..=6);
            let p = softmax(&random_logits(&mut rng, k)).unwrap();
            let q = softmax(&random_logits(&mut rng, k)).unwrap();
            let m1: f64 = rng.gen_range(0.0..2.0);
            let m2 = m1 + rng.gen_range(0.0..2.0);
            let l1 = dissimilar_pair_loss(&p, &q, m1).unwrap();
            let l2 = dissimilar_pair_loss(&p, &q, m2).unwrap();
            assert!((0.0..=2.0 * m1 + 1e-12).contains(&l1));
            assert!(l2 >= l1, "margin monotonicity violated");
        }
    }

    #[test]
    fn gate_truth_table() {
        let right = ProbDist::new(vec![0.8f64, 0.2]).unwrap();
        let wrong = ProbDist::new(vec![0.2f64, 0.8]).unwrap();
        // First condition alone.
        assert!(guide_gate(&right, &wrong, 1, 1));
        // Both misclassified.
        assert!(!guide_gate(&wrong, &ProbDist::new(vec![0.9, 0.1]).unwrap(), 1, 2));
        // Exactly one correct, either side.
        assert!(guide_gate(&wrong, &wrong, 2, 1));
        assert!(guide_gate(&wrong, &right, 2, 2));
    }

    #[test]
    fn pair_grads_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for round in 0..20 {
            let k = rng.gen_range(2..=8);
            let zp = random_logits(&mut rng, k);
            let zq = random_logits(&mut rng, k);
            let margin = [0.5, 1.0, 2.0][round % 3];
            let concat: Vec<f64> = zp.iter().chain(&zq).copied().collect();

            let sim = similar_pair_loss_with_grad(&zp, &zq).unwrap();
            let numeric = finite_difference_gradient(
                |x: &[f64]| {
                    similar_pair_loss_with_grad(&x[..k], &x[k..]).unwrap().value
                },
                &concat,
                1e-5,
            );
            let analytic: Vec<f64> = sim.grad_p.iter().chain(&sim.grad_q).copied().collect();
            assert!(max_rel_err(&analytic, &numeric) < 1e-4, "similar pair");

            let dis = dissimilar_pair_loss_with_grad(&zp, &zq, margin).unwrap();
            let numeric = finite_difference_gradient(
                |x: &[f64]| {
                    dissimilar_pair_loss_with_grad(&x[..k], &x[k..], margin)
                        .unwrap()
                        .value
                },
                &concat,
                1e-5,
            );
            let analytic: Vec<f64> = dis.grad_p.iter().chain(&dis.grad_q).copied().collect();
            assert!(max_rel_err(&analytic, &numeric) < 1e-4, "dissimilar pair");
        }
    }

    /// Misclassified-everywhere batch: labels disagree with every argmax.
    fn gate_zero_batch() -> (Vec<Vec<f64>>, Vec<usize>, PairBatch) {
        let logits = vec![
            vec![-5.0, 5.0],
            vec![-4.0, 6.0],
            vec![7.0, -7.0],
            vec![8.0, -6.0],
        ];
        let labels = vec![1, 1, 2, 2];
        let pairs = PairBatch::new(
            vec![0, 1, 2, 3],
            vec![(0, 1), (2, 3)],
            vec![(0, 2), (0, 3), (1, 2), (1, 3)],
            &labels,
        )
        .unwrap();
        (logits, labels, pairs)
    }

    #[test]
    fn gated_off_batch_reduces_to_cross_entropy_exactly() {
        let (logits, labels, pairs) = gate_zero_batch();
        let ce = cross_entropy_loss(&logits, &labels).unwrap();
        let guided = guided_kl_loss(&logits, &labels, &pairs, &LossConfig::default()).unwrap();
        assert_eq!(guided.value, ce.value);
        assert_eq!(guided.grad_logits, ce.grad_logits);
    }

    #[test]
    fn gate_zero_pair_ignores_partner_perturbation() {
        // With the gate off, perturbing one member must leave the pair
        // contribution at zero: guided == CE before and after.
        let (mut logits, labels, pairs) = gate_zero_batch();
        logits[1] = vec![-9.0, 3.0];
        let ce = cross_entropy_loss(&logits, &labels).unwrap();
        let guided = guided_kl_loss(&logits, &labels, &pairs, &LossConfig::default()).unwrap();
        assert_eq!(guided.value, ce.value);
        assert_eq!(guided.grad_logits, ce.grad_logits);
    }

    #[test]
    fn guided_value_composes_from_component_ops() {
        // 4 samples, 2 identities, margin 1: hand-compose the objective from
        // the component operations and compare.
        let logits = vec![
            vec![2.0, -1.0],
            vec![1.5, 0.5],
            vec![-0.5, 1.0],
            vec![0.2, 0.8],
        ];
        let labels = vec![1, 1, 2, 2];
        let pairs = PairBatch::new(
            vec![0, 1, 2, 3],
            vec![(0, 1), (2, 3)],
            vec![(0, 2), (0, 3), (1, 2), (1, 3)],
            &labels,
        )
        .unwrap();
        let cfg = LossConfig::new(1.0).unwrap();
        let guided = guided_kl_loss(&logits, &labels, &pairs, &cfg).unwrap();

        let dists: Vec<ProbDist<f64>> = logits.iter().map(|z| softmax(z).unwrap()).collect();
        let mut expect = cross_entropy_loss(&logits, &labels).unwrap().value;
        for &(i, j) in pairs.similar() {
            if guide_gate(&dists[i], &dists[j], labels[i], labels[j]) {
                expect += similar_pair_loss(&dists[i], &dists[j]).unwrap()
                    / pairs.similar().len() as f64;
            }
        }
        for &(i, j) in pairs.dissimilar() {
            if guide_gate(&dists[i], &dists[j], labels[i], labels[j]) {
                expect += dissimilar_pair_loss(&dists[i], &dists[j], 1.0).unwrap()
                    / pairs.dissimilar().len() as f64;
            }
        }
        assert_relative_eq!(guided.value, expect, max_relative = 1e-12);
    }

    #[test]
    fn guided_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for round in 0..15 {
            let k = rng.gen_range(2..=6);
            let pairs_n = rng.gen_range(1..=4);
            let batch = 2 * pairs_n;
            let labels: Vec<usize> = (0..batch).map(|s| (s / 2) % k + 1).collect();
            let mut similar = Vec::new();
            let mut dissimilar = Vec::new();
            for p in 0..pairs_n {
                similar.push((2 * p, 2 * p + 1));
            }
            for s in 0..batch {
                for t in (s + 1)..batch {
                    if labels[s] != labels[t] {
                        dissimilar.push((s, t));
                    }
                }
            }
            let pairs =
                PairBatch::new((0..batch).collect(), similar, dissimilar, &labels).unwrap();
            let logits: Vec<Vec<f64>> = (0..batch).map(|_| random_logits(&mut rng, k)).collect();
            let cfg = LossConfig::new([0.5, 1.0, 2.0][round % 3]).unwrap();
            let out = guided_kl_loss(&logits, &labels, &pairs, &cfg).unwrap();
            let flat: Vec<f64> = logits.iter().flatten().copied().collect();
            let numeric = finite_difference_gradient(
                |x: &[f64]| {
                    let z: Vec<Vec<f64>> = x.chunks(k).map(|c| c.to_vec()).collect();
                    guided_kl_loss(&z, &labels, &pairs, &cfg).unwrap().value
                },
                &flat,
                1e-5,
            );
            let analytic: Vec<f64> = out.grad_logits.iter().flatten().copied().collect();
            assert!(
                max_rel_err(&analytic, &numeric) < 1e-4,
                "round {round}: rel err {}",
                max_rel_err(&analytic, &numeric)
            );
        }
    }

    #[test]
    fn guided_handles_empty_pair_sets() {
        let logits = vec![vec![1.0f64, 0.0], vec![0.5, 0.5]];
        let labels = vec![1, 1];
        let pairs = PairBatch::new(vec![0, 1], vec![(0, 1)], vec![], &labels).unwrap();
        let out = guided_kl_loss(&logits, &labels, &pairs, &LossConfig::default()).unwrap();
        assert!(out.value.is_finite());

        let no_pairs = PairBatch::new(vec![0, 1], vec![], vec![], &labels).unwrap();
        let ce = cross_entropy_loss(&logits, &labels).unwrap();
        let out = guided_kl_loss(&logits, &labels, &no_pairs, &LossConfig::default()).unwrap();
        assert_eq!(out.value, ce.value);
    }

    #[test]
    fn guided_rejects_bad_pair_index() {
        let logits = vec![vec![1.0f64, 0.0], vec![0.5, 0.5]];
        let labels = vec![1, 1];
        let pairs = PairBatch::new(vec![0, 1, 2], vec![(0, 2)], vec![], &[1, 1, 1]).unwrap();
        assert!(matches!(
            guided_kl_loss(&logits, &labels, &pairs, &LossConfig::default()),
            Err(Error::PairIndexOutOfRange { index: 2, .. })
        ));
    }

    #[test]
    fn losses_nonnegative_and_finite_on_random_batches() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..50 {
            let k = rng.gen_range(2..=8);
            let pairs_n = rng.gen_range(1..=6);
            let batch = 2 * pairs_n;
            let labels: Vec<usize> = (0..batch).map(|_| rng.gen_range(1..=k)).collect();
            let mut similar = Vec::new();
            let mut dissimilar = Vec::new();
            for s in 0..batch {
                for t in (s + 1)..batch {
                    if labels[s] == labels[t] {
                        similar.push((s, t));
                    } else {
                        dissimilar.push((s, t));
                    }
                }
            }
            let pairs =
                PairBatch::new((0..batch).collect(), similar, dissimilar, &labels).unwrap();
            let logits: Vec<Vec<f64>> = (0..batch).map(|_| random_logits(&mut rng, k)).collect();
            let out = guided_kl_loss(&logits, &labels, &pairs, &LossConfig::default()).unwrap();
            assert!(out.value.is_finite() && out.value >= 0.0);
            assert!(out
                .grad_logits
                .iter()
                .flatten()
                .all(|g| g.is_finite()));
        }
    }

    #[test]
    fn siamese_examples() {
        let same = siamese_hinge_loss(&[1.0f64, 2.0], &[1.0, 2.0], true, 1.0).unwrap();
        assert_eq!(same.value, 0.0);
        let diff = siamese_hinge_loss(&[1.0f64, 2.0], &[1.0, 2.0], false, 1.0).unwrap();
        assert_eq!(diff.value, 1.0);
        // Oracle: (6 − ‖[3,4]‖)² = (6 − 5)² = 1.
        let hinge = siamese_hinge_loss(&[0.0f64, 0.0], &[3.0, 4.0], false, 6.0).unwrap();
        assert_relative_eq!(hinge.value, 1.0, max_relative = 1e-12);
        // Saturated hinge.
        let sat = siamese_hinge_loss(&[0.0f64, 0.0], &[3.0, 4.0], false, 2.0).unwrap();
        assert_eq!(sat.value, 0.0);
        assert!(sat.grad_i.iter().all(|&g| g == 0.0));
        assert!(siamese_hinge_loss(&[0.0f64], &[1.0, 2.0], true, 1.0).is_err());
        assert!(siamese_hinge_loss(&[0.0f64], &[1.0], true, 0.0).is_err());
    }

    #[test]
    fn siamese_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for round in 0..20 {
            let d = rng.gen_range(2..=6);
            let ei: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let ej: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let same = round % 2 == 0;
            let margin = rng.gen_range(0.5..4.0);
            let out = siamese_hinge_loss(&ei, &ej, same, margin).unwrap();
            let concat: Vec<f64> = ei.iter().chain(&ej).copied().collect();
            let numeric = finite_difference_gradient(
                |x: &[f64]| {
                    siamese_hinge_loss(&x[..d], &x[d..], same, margin)
                        .unwrap()
                        .value
                },
                &concat,
                1e-5,
            );
            let analytic: Vec<f64> = out.grad_i.iter().chain(&out.grad_j).copied().collect();
            assert!(max_rel_err(&analytic, &numeric) < 1e-4);
        }
    }
}
