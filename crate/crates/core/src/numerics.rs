//! Numerically stable primitives: softmax, KL divergence, normalization,
//! cosine similarity, and a central-difference gradient oracle.
//!
//! Everything here is a pure function; all operations are safe to call
//! concurrently. KL divergence clamps both distributions elementwise to
//! `[PROB_CLAMP_EPS, 1]` before taking logs, which keeps values finite and
//! gradients bounded for distributions that carry exact zeros.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Lower clamp applied to probabilities before any logarithm.
pub const PROB_CLAMP_EPS: f64 = 1e-12;

/// A probability distribution over `K >= 2` classes.
///
/// Invariants, enforced at construction: every entry is nonnegative and
/// finite, the entries sum to 1 within 1e-9, and `K >= 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbDist<F: Real> {
    probs: Vec<F>,
}

impl<F: Real> ProbDist<F> {
    /// Validate and wrap a probability vector.
    pub fn new(probs: Vec<F>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::InvalidDistribution {
                reason: format!("need K >= 2 classes, got {}", probs.len()),
            });
        }
        let mut sum = F::zero();
        for (k, &p) in probs.iter().enumerate() {
            if !p.is_finite() || p < F::zero() {
                return Err(Error::InvalidDistribution {
                    reason: format!("entry {k} is {p}, expected a finite nonnegative value"),
                });
            }
            sum = sum + p;
        }
        if (sum - F::one()).abs() > F::of(1e-9) {
            return Err(Error::InvalidDistribution {
                reason: format!("entries sum to {sum}, expected 1 within 1e-9"),
            });
        }
        Ok(Self { probs })
    }

    /// Number of classes.
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// The probability vector.
    pub fn probs(&self) -> &[F] {
        &self.probs
    }

    /// Index of the largest entry; ties resolve to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax<F: Real>(values: &[F]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Softmax of a logit vector.
///
/// Subtracts the maximum before exponentiating, so the output is invariant
/// under adding a constant to all logits and never overflows for finite
/// input of any magnitude.
pub fn softmax<F: Real>(logits: &[F]) -> Result<ProbDist<F>> {
    if logits.len() < 2 {
        return Err(Error::InvalidDistribution {
            reason: format!("softmax needs K >= 2 logits, got {}", logits.len()),
        });
    }
    if let Some((k, &z)) = logits.iter().enumerate().find(|(_, z)| !z.is_finite()) {
        return Err(Error::NonFinite {
            context: format!("logit {k} is {z}"),
        });
    }
    let max = logits.iter().copied().fold(F::neg_infinity(), F::max);
    let exps: Vec<F> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: F = exps.iter().copied().sum();
    Ok(ProbDist {
        probs: exps.into_iter().map(|e| e / sum).collect(),
    })
}

/// Log-softmax of a logit vector: `z_k - logsumexp(z)`.
///
/// More accurate than `softmax(...).ln()` when probabilities are tiny.
pub fn log_softmax<F: Real>(logits: &[F]) -> Result<Vec<F>> {
    if logits.len() < 2 {
        return Err(Error::InvalidDistribution {
            reason: format!("log_softmax needs K >= 2 logits, got {}", logits.len()),
        });
    }
    if let Some((k, &z)) = logits.iter().enumerate().find(|(_, z)| !z.is_finite()) {
        return Err(Error::NonFinite {
            context: format!("logit {k} is {z}"),
        });
    }
    let max = logits.iter().copied().fold(F::neg_infinity(), F::max);
    let sum: F = logits.iter().map(|&z| (z - max).exp()).sum();
    let lse = max + sum.ln();
    Ok(logits.iter().map(|&z| z - lse).collect())
}

fn clamp_prob<F: Real>(p: F) -> F {
    p.max(F::of(PROB_CLAMP_EPS)).min(F::one())
}

/// KL divergence `KL(p ‖ q) = Σ_k p_k log(p_k / q_k)` in nats.
///
/// Both distributions are clamped elementwise to `[1e-12, 1]` before the
/// logs, so zero entries contribute `ε·log(ε/q_k) ≈ 0` instead of NaN.
/// Returns exactly 0 when `p == q`. The clamp perturbs the inputs by up to
/// ε, which can push the raw sum a rounding error below zero for nearly
/// identical distributions; the result is floored at 0 so nonnegativity
/// holds unconditionally.
pub fn kl_divergence<F: Real>(p: &ProbDist<F>, q: &ProbDist<F>) -> Result<F> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            got: q.len(),
        });
    }
    let mut total = F::zero();
    for (&pk, &qk) in p.probs.iter().zip(&q.probs) {
        let pc = clamp_prob(pk);
        let qc = clamp_prob(qk);
        // (pc/qc).ln() is exactly 0 when the entries are bitwise equal.
        total = total + pc * (pc / qc).ln();
    }
    Ok(total.max(F::zero()))
}

/// Scale a vector to unit Euclidean norm. Rejects the zero vector.
pub fn l2_normalize<F: Real>(v: &[F]) -> Result<Vec<F>> {
    let norm = v.iter().map(|&x| x * x).sum::<F>().sqrt();
    if norm <= F::zero() || !norm.is_finite() {
        return Err(Error::ZeroVector);
    }
    Ok(v.iter().map(|&x| x / norm).collect())
}

/// Dot product of two unit vectors, i.e. their cosine similarity.
///
/// Callers are expected to pass l2-normalized inputs; only the dimensions
/// are checked here.
pub fn cosine_similarity<F: Real>(u: &[F], v: &[F]) -> Result<F> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            got: v.len(),
        });
    }
    Ok(dot(u, v))
}

pub(crate) fn dot<F: Real>(u: &[F], v: &[F]) -> F {
    u.iter().zip(v).map(|(&a, &b)| a * b).sum()
}

/// Central-difference gradient: `(f(x + h·e_k) − f(x − h·e_k)) / 2h` per
/// coordinate. The independent oracle every analytic gradient in this crate
/// is checked against.
pub fn finite_difference_gradient<F, G>(f: G, x: &[F], h: F) -> Vec<F>
where
    F: Real,
    G: Fn(&[F]) -> F,
{
    let two_h = F::of(2.0) * h;
    let mut grad = Vec::with_capacity(x.len());
    let mut probe = x.to_vec();
    for k in 0..x.len() {
        probe[k] = x[k] + h;
        let plus = f(&probe);
        probe[k] = x[k] - h;
        let minus = f(&probe);
        probe[k] = x[k];
        grad.push((plus - minus) / two_h);
    }
    grad
}
