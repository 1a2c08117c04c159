//! K-means clustering and normalized mutual information, for measuring how
//! clusterable an embedding space is around its identity labels.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Real;

use super::EmbeddingSet;

fn dist_sq<F: Real>(a: &[F], b: &[F]) -> F {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum()
}

/// Lloyd's algorithm with k-means++ seeding. Returns the assignment and its
/// within-cluster sum of squares. Deterministic given the generator: ties
/// pick the lowest index and an emptied cluster is reseeded with the point
/// farthest from its centroid.
fn kmeans_once<F: Real>(points: &[Vec<F>], k: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, F) {
    let n = points.len();
    let mut centroids: Vec<Vec<F>> = Vec::with_capacity(k);
    centroids.push(points[rng.gen_range(0..n)].clone());
    let mut nearest_sq: Vec<F> = points.iter().map(|p| dist_sq(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: F = nearest_sq.iter().copied().sum();
        let next = if total > F::zero() {
            let mut target = F::of(rng.gen::<f64>()) * total;
            let mut chosen = n - 1;
            for (i, &d) in nearest_sq.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target = target - d;
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        centroids.push(points[next].clone());
        for (d, p) in nearest_sq.iter_mut().zip(points) {
            *d = (*d).min(dist_sq(p, centroids.last().unwrap()));
        }
    }

    let dim = points[0].len();
    let mut assignment = vec![usize::MAX; n];
    for _ in 0..300 {
        let mut next = vec![0usize; n];
        for (i, p) in points.iter().enumerate() {
            let mut best = 0;
            let mut best_d = dist_sq(p, &centroids[0]);
            for (c, centroid) in centroids.iter().enumerate().skip(1) {
                let d = dist_sq(p, centroid);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            next[i] = best;
        }
        // Reseed empty clusters with the worst-fit point.
        let mut counts = vec![0usize; k];
        for &a in &next {
            counts[a] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let (worst, _) = points
                .iter()
                .enumerate()
                .map(|(i, p)| (i, dist_sq(p, &centroids[next[i]])))
                .reduce(|acc, cur| if cur.1 > acc.1 { cur } else { acc })
                .unwrap();
            counts[next[worst]] -= 1;
            next[worst] = c;
            counts[c] = 1;
        }
        let converged = next == assignment;
        assignment = next;
        if converged {
            break;
        }
        // Recompute centroids as cluster means.
        let mut sums = vec![vec![F::zero(); dim]; k];
        let mut sizes = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignment) {
            sizes[a] += 1;
            for (s, &x) in sums[a].iter_mut().zip(p) {
                *s = *s + x;
            }
        }
        for (c, (sum, &size)) in sums.iter().zip(&sizes).enumerate() {
            if size > 0 {
                let inv = F::one() / F::of(size as f64);
                centroids[c] = sum.iter().map(|&s| s * inv).collect();
            }
        }
    }
    let wcss = points
        .iter()
        .zip(&assignment)
        .map(|(p, &a)| dist_sq(p, &centroids[a]))
        .sum();
    (assignment, wcss)
}

fn entropy<F: Real>(counts: &BTreeMap<usize, usize>, total: F) -> F {
    counts
        .values()
        .map(|&c| {
            let p = F::of(c as f64) / total;
            -(p * p.ln())
        })
        .sum()
}

/// Normalized mutual information between two labelings of the same items:
/// `I(A;B)` divided by the arithmetic mean of the two entropies, clamped to
/// `[0, 1]`. Two single-block partitions score 1 (they are identical).
pub fn nmi<F: Real>(a: &[usize], b: &[usize]) -> Result<F> {
    if a.is_empty() || a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let total = F::of(a.len() as f64);
    let mut joint: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut ma: BTreeMap<usize, usize> = BTreeMap::new();
    let mut mb: BTreeMap<usize, usize> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_default() += 1;
        *ma.entry(x).or_default() += 1;
        *mb.entry(y).or_default() += 1;
    }
    let ha = entropy(&ma, total);
    let hb = entropy(&mb, total);
    let denom = (ha + hb) / F::of(2.0);
    if denom == F::zero() {
        return Ok(F::one());
    }
    let mut mi = F::zero();
    for (&(x, y), &c) in &joint {
        let pxy = F::of(c as f64) / total;
        let px = F::of(ma[&x] as f64) / total;
        let py = F::of(mb[&y] as f64) / total;
        mi = mi + pxy * (pxy / (px * py)).ln();
    }
    Ok((mi / denom).max(F::zero()).min(F::one()))
}

/// Cluster the embeddings with k-means (best of `restarts` restarts by
/// within-cluster sum of squares, restart `r` seeded `seed + r`) and score
/// the winning assignment against the identity labels with NMI.
pub fn kmeans_nmi<F: Real>(
    embeddings: &EmbeddingSet<F>,
    k: usize,
    seed: u64,
    restarts: usize,
) -> Result<F> {
    if k == 0 || k > embeddings.len() {
        return Err(Error::InvalidConfig {
            reason: format!(
                "k must be in 1..={}, got {k}",
                embeddings.len()
            ),
        });
    }
    if restarts == 0 {
        return Err(Error::InvalidConfig {
            reason: "restarts must be >= 1".into(),
        });
    }
    let mut best: Option<(Vec<usize>, F)> = None;
    for r in 0..restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + r as u64);
        let (assignment, wcss) = kmeans_once(embeddings.vectors(), k, &mut rng);
        if best.as_ref().map_or(true, |(_, w)| wcss < *w) {
            best = Some((assignment, wcss));
        }
    }
    let (assignment, _) = best.unwrap();
    nmi(&assignment, embeddings.labels())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::l2_normalize;
    use proptest::prelude::*;

    fn cluster_set() -> EmbeddingSet<f64> {
        // 3 well-separated clusters near orthogonal axes.
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (c, axis) in [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
            .iter()
            .enumerate()
        {
            for j in 0..6 {
                let wiggle = 0.01 * (j as f64 - 2.5);
                let mut v = axis.to_vec();
                v[(c + 1) % 3] += wiggle;
                rows.push(l2_normalize(&v).unwrap());
                labels.push(c + 1);
            }
        }
        EmbeddingSet::new(rows, labels).unwrap()
    }

    #[test]
    fn nmi_identical_partition_is_one() {
        let labels = vec![1, 1, 2, 2, 3, 3];
        assert_eq!(nmi::<f64>(&labels, &labels).unwrap(), 1.0);
        // Relabeled but identical partition.
        let relabeled = vec![9, 9, 4, 4, 7, 7];
        assert_eq!(nmi::<f64>(&relabeled, &labels).unwrap(), 1.0);
    }

    #[test]
    fn nmi_single_cluster_is_zero() {
        let clusters = vec![1, 1, 1, 1];
        let labels = vec![1, 1, 2, 2];
        assert_eq!(nmi::<f64>(&clusters, &labels).unwrap(), 0.0);
    }

    #[test]
    fn nmi_trivial_partitions_agree() {
        assert_eq!(nmi::<f64>(&[1, 1], &[5, 5]).unwrap(), 1.0);
    }

    #[test]
    fn well_separated_clusters_reach_nmi_one() {
        let set = cluster_set();
        let score = kmeans_nmi(&set, 3, 4, 10).unwrap();
        assert!((score - 1.0).abs() < 1e-9, "NMI {score}");
    }

    #[test]
    fn kmeans_nmi_is_deterministic() {
        let set = cluster_set();
        let a = kmeans_nmi(&set, 3, 11, 5).unwrap();
        let b = kmeans_nmi(&set, 3, 11, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn k_larger_than_n_is_rejected() {
        let set = cluster_set();
        assert!(kmeans_nmi(&set, set.len() + 1, 0, 1).is_err());
        assert!(kmeans_nmi(&set, 0, 0, 1).is_err());
    }

    proptest! {
        #[test]
        fn nmi_bounded_and_permutation_invariant(seed in 0u64..200) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = rng.gen_range(4..40);
            let a: Vec<usize> = (0..n).map(|_| rng.gen_range(1..=4)).collect();
            let b: Vec<usize> = (0..n).map(|_| rng.gen_range(1..=3)).collect();
            let score: f64 = nmi(&a, &b).unwrap();
            prop_assert!((0.0..=1.0).contains(&score));
            // Relabel clusters of `a` with a permutation.
            let perm = [3usize, 4, 1, 2];
            let a_perm: Vec<usize> = a.iter().map(|&x| perm[x - 1]).collect();
            let score_perm: f64 = nmi(&a_perm, &b).unwrap();
            prop_assert!((score - score_perm).abs() < 1e-12);
        }
    }
}
