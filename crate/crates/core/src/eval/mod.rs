//! Biometric evaluation protocols over frozen embeddings: nearest-neighbor
//! classification, closed-set Rank-K identification, open-set detection and
//! identification, and verification.
//!
//! All matching uses cosine similarity on l2-normalized embeddings; the
//! per-identity gallery score is the maximum over that identity's gallery
//! images. Score thresholds at a target false-acceptance rate follow one
//! convention everywhere: the threshold is the smallest observed score such
//! that the fraction of impostor scores at or above it does not exceed the
//! target (ties count as accepted), so the achieved FAR never exceeds the
//! nominal one. Every similarity tie resolves deterministically (lower
//! identity label, then lower index).

mod kmeans;
mod report;

pub use kmeans::{kmeans_nmi, nmi};
pub use report::{
    closed_set_trials, mean_std, open_set_trials, pooled_verification_scores, run_protocol,
    transfer_eval, Curve, EvalReport, Protocol, ProtocolOptions,
};

use std::collections::{BTreeMap, BTreeSet};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numerics::{dot, l2_normalize};
use crate::scalar::Real;

/// Unit-norm embedding rows with identity labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet<F: Real> {
    vectors: Vec<Vec<F>>,
    labels: Vec<usize>,
}

impl<F: Real> EmbeddingSet<F> {
    /// Validate and wrap: rows must be unit-norm within 1e-9 and labels
    /// 1-based, one per row.
    pub fn new(vectors: Vec<Vec<F>>, labels: Vec<usize>) -> Result<Self> {
        if vectors.is_empty() {
            return Err(Error::EmptyInput {
                context: "embedding set".into(),
            });
        }
        if vectors.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: vectors.len(),
                got: labels.len(),
            });
        }
        let dim = vectors[0].len();
        for (i, v) in vectors.iter().enumerate() {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: v.len(),
                });
            }
            let norm = v.iter().map(|&x| x * x).sum::<F>().sqrt();
            if (norm - F::one()).abs() > F::of(1e-9) {
                return Err(Error::InvalidDistribution {
                    reason: format!("embedding row {i} has norm {norm}, expected 1 within 1e-9"),
                });
            }
        }
        if let Some(&bad) = labels.iter().find(|&&l| l == 0) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                num_classes: usize::MAX,
            });
        }
        Ok(Self { vectors, labels })
    }

    /// l2-normalize a dataset's raw feature rows into an embedding set.
    pub fn from_raw_features(dataset: &Dataset<F>) -> Result<Self> {
        let vectors = dataset
            .samples()
            .iter()
            .enumerate()
            .map(|(index, s)| {
                l2_normalize(&s.features).map_err(|_| Error::ZeroEmbedding { index })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(vectors, dataset.labels())
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors[0].len()
    }

    pub fn vectors(&self) -> &[Vec<F>] {
        &self.vectors
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Rows selected by index, preserving order. Panics on out-of-range
    /// indices, like slice indexing.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            vectors: indices.iter().map(|&i| self.vectors[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn identity_labels(&self) -> BTreeSet<usize> {
        self.labels.iter().copied().collect()
    }

    /// Row indices grouped by label, ascending.
    pub fn class_indices(&self) -> BTreeMap<usize, Vec<usize>> {
        let mut map: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &l) in self.labels.iter().enumerate() {
            map.entry(l).or_default().push(i);
        }
        map
    }
}

fn check_dims<F: Real>(a: &EmbeddingSet<F>, b: &EmbeddingSet<F>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    Ok(())
}

/// Nearest-neighbor classification: each test row takes the label of its
/// most similar training row. Train and test must cover the same identities.
pub fn classify_accuracy<F: Real>(
    train: &EmbeddingSet<F>,
    test: &EmbeddingSet<F>,
) -> Result<F> {
    check_dims(train, test)?;
    if train.identity_labels() != test.identity_labels() {
        return Err(Error::InvalidConfig {
            reason: "classification requires identical train and test identity sets".into(),
        });
    }
    let mut correct = 0usize;
    for (v, &label) in test.vectors.iter().zip(&test.labels) {
        let mut best = 0usize;
        let mut best_sim = F::neg_infinity();
        for (j, t) in train.vectors.iter().enumerate() {
            let sim = dot(v, t);
            if sim > best_sim {
                best_sim = sim;
                best = j;
            }
        }
        if train.labels[best] == label {
            correct += 1;
        }
    }
    Ok(F::of(correct as f64) / F::of(test.len() as f64))
}

/// Per-identity maximum similarity of one probe against the gallery,
/// ascending label order.
fn identity_scores<F: Real>(
    groups: &BTreeMap<usize, Vec<usize>>,
    gallery: &EmbeddingSet<F>,
    probe: &[F],
) -> Vec<(usize, F)> {
    groups
        .iter()
        .map(|(&label, indices)| {
            let score = indices
                .iter()
                .map(|&i| dot(&gallery.vectors[i], probe))
                .fold(F::neg_infinity(), F::max)
;
            (label, score)
        })
        .collect()
}

/// CMC curve: entry `k-1` is the fraction of probes whose true identity is
/// among the `k` highest-scoring gallery identities. Ties rank lower labels
/// first, so results match an explicit sorted-table enumeration.
pub fn closed_set_rank_k<F: Real>(
    gallery: &EmbeddingSet<F>,
    probe: &EmbeddingSet<F>,
    max_rank: usize,
) -> Result<Vec<F>> {
    check_dims(gallery, probe)?;
    if max_rank == 0 {
        return Err(Error::InvalidConfig {
            reason: "max_rank must be >= 1".into(),
        });
    }
    let gallery_ids = gallery.identity_labels();
    if let Some(&missing) = probe.labels.iter().find(|l| !gallery_ids.contains(l)) {
        return Err(Error::ProbeIdentityNotInGallery { label: missing });
    }
    let groups = gallery.class_indices();
    let mut hits_at_rank = vec![0usize; max_rank];
    for (v, &label) in probe.vectors.iter().zip(&probe.labels) {
        let scores = identity_scores(&groups, gallery, v);
        let true_score = scores
            .iter()
            .find(|(l, _)| *l == label)
            .map(|&(_, s)| s)
            .unwrap();
        let rank = 1 + scores
            .iter()
            .filter(|&&(l, s)| s > true_score || (s == true_score && l < label))
            .count();
        if rank <= max_rank {
            hits_at_rank[rank - 1] += 1;
        }
    }
    let n = F::of(probe.len() as f64);
    let mut cmc = Vec::with_capacity(max_rank);
    let mut cumulative = 0usize;
    for hits in hits_at_rank {
        cumulative += hits;
        cmc.push(F::of(cumulative as f64) / n);
    }
    Ok(cmc)
}

/// Threshold at a target false-acceptance rate: the smallest observed score
/// `t` with `|{s : s >= t}| / n <= far`. When even the largest score occurs
/// too often (e.g. massive ties, or `far < 1/n`), the threshold moves just
/// above the maximum, so nothing on the impostor side is accepted and the
/// achieved FAR stays at 0. Acceptance everywhere is `score >= threshold`.
pub fn threshold_at_far<F: Real>(scores: &[F], far: F) -> Result<F> {
    if scores.is_empty() {
        return Err(Error::EmptyInput {
            context: "threshold estimation without impostor scores".into(),
        });
    }
    if !(far > F::zero() && far < F::one()) {
        return Err(Error::InvalidConfig {
            reason: format!("far must be in (0, 1), got {far}"),
        });
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    let n = F::of(sorted.len() as f64);
    let mut i = 0;
    while i < sorted.len() {
        let fraction_ge = F::of((sorted.len() - i) as f64) / n;
        if fraction_ge <= far {
            return Ok(sorted[i]);
        }
        let value = sorted[i];
        while i < sorted.len() && sorted[i] == value {
            i += 1;
        }
    }
    Ok(sorted.last().unwrap().next_up())
}

/// Open-set outcome: DIR at the requested FAR plus the full threshold sweep
/// as `(far, dir)` points, ascending in FAR.
#[derive(Debug, Clone, PartialEq)]
pub struct DirResult<F: Real> {
    pub dir: F,
    pub threshold: F,
    pub sweep: Vec<(F, F)>,
}

/// Max-similarity scores of probes against the whole gallery: unknown
/// probes yield plain scores, known probes `(score, rank-1 correct)`.
pub(crate) fn open_match_scores<F: Real>(
    gallery: &EmbeddingSet<F>,
    probe_known: &EmbeddingSet<F>,
    probe_unknown: &EmbeddingSet<F>,
) -> (Vec<F>, Vec<(F, bool)>) {
    let groups = gallery.class_indices();
    let unknown = probe_unknown
        .vectors
        .iter()
        .map(|v| {
            identity_scores(&groups, gallery, v)
                .into_iter()
                .map(|(_, s)| s)
                .fold(F::neg_infinity(), F::max)
        })
        .collect();
    let known = probe_known
        .vectors
        .iter()
        .zip(&probe_known.labels)
        .map(|(v, &label)| {
            let scores = identity_scores(&groups, gallery, v);
            // Highest score wins; ties take the smaller label.
            let (best_label, best_score) = scores
                .iter()
                .copied()
                .reduce(|acc, cur| if cur.1 > acc.1 { cur } else { acc })
                .unwrap();
            (best_score, best_label == label)
        })
        .collect();
    (unknown, known)
}

/// Sweep `(far, dir)` over every distinct unknown-probe score, descending
/// threshold order (so FAR ascends).
pub(crate) fn sweep_dir<F: Real>(unknown: &[F], known: &[(F, bool)]) -> Vec<(F, F)> {
    let mut u = unknown.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).expect("finite scores"));
    let mut k = known.to_vec();
    k.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite scores"));
    let (n_u, n_k) = (F::of(u.len() as f64), F::of(known.len() as f64));
    let mut points = Vec::new();
    let mut ki = 0;
    let mut correct = 0usize;
    let mut i = 0;
    while i < u.len() {
        let t = u[i];
        let mut j = i;
        while j < u.len() && u[j] == t {
            j += 1;
        }
        while ki < k.len() && k[ki].0 >= t {
            if k[ki].1 {
                correct += 1;
            }
            ki += 1;
        }
        points.push((
            F::of(j as f64) / n_u,
            F::of(correct as f64) / n_k,
        ));
        i = j;
    }
    points
}

/// Detection and identification rate at a fixed FAR: the threshold comes
/// from the unknown probes' maximum gallery similarities, and a known probe
/// counts only if it is accepted *and* its Rank-1 identity is correct.
pub fn open_set_dir<F: Real>(
    gallery: &EmbeddingSet<F>,
    probe_known: &EmbeddingSet<F>,
    probe_unknown: &EmbeddingSet<F>,
    far: F,
) -> Result<DirResult<F>> {
    check_dims(gallery, probe_known)?;
    check_dims(gallery, probe_unknown)?;
    let gallery_ids = gallery.identity_labels();
    if let Some(&enrolled) = probe_unknown
        .labels
        .iter()
        .find(|l| gallery_ids.contains(l))
    {
        return Err(Error::InvalidConfig {
            reason: format!("unknown-probe identity {enrolled} is enrolled in the gallery"),
        });
    }
    if let Some(&missing) = probe_known.labels.iter().find(|l| !gallery_ids.contains(l)) {
        return Err(Error::ProbeIdentityNotInGallery { label: missing });
    }
    let (unknown, known) = open_match_scores(gallery, probe_known, probe_unknown);
    if known.is_empty() {
        return Err(Error::EmptyInput {
            context: "open-set evaluation without known probes".into(),
        });
    }
    let threshold = threshold_at_far(&unknown, far)?;
    let accepted_correct = known
        .iter()
        .filter(|&&(s, correct)| s >= threshold && correct)
        .count();
    Ok(DirResult {
        dir: F::of(accepted_correct as f64) / F::of(known.len() as f64),
        threshold,
        sweep: sweep_dir(&unknown, &known),
    })
}

/// Verification scores of one sample: the positive is the maximum
/// similarity to its own class (self excluded); the negatives hold one
/// maximum per other class, ascending label order.
#[derive(Debug, Clone, PartialEq)]
pub struct VerificationScores<F: Real> {
    pub positive: F,
    pub negatives: Vec<F>,
}

/// Per-sample verification scores over a test set: with `C` identities each
/// sample yields one positive and `C - 1` negatives.
pub fn verification_scores<F: Real>(
    test: &EmbeddingSet<F>,
) -> Result<Vec<VerificationScores<F>>> {
    let groups = test.class_indices();
    if groups.len() < 2 {
        return Err(Error::TooFewIdentities {
            required: 2,
            found: groups.len(),
        });
    }
    for (&label, indices) in &groups {
        if indices.len() < 2 {
            return Err(Error::SingletonIdentity { label });
        }
    }
    let mut out = Vec::with_capacity(test.len());
    for (i, (v, &label)) in test.vectors.iter().zip(&test.labels).enumerate() {
        let mut positive = F::neg_infinity();
        let mut negatives = Vec::with_capacity(groups.len() - 1);
        for (&other, indices) in &groups {
            let best = indices
                .iter()
                .filter(|&&j| j != i)
                .map(|&j| dot(v, &test.vectors[j]))
                .fold(F::neg_infinity(), F::max);
            if other == label {
                positive = best;
            } else {
                negatives.push(best);
            }
        }
        out.push(VerificationScores {
            positive,
            negatives,
        });
    }
    Ok(out)
}

/// Verification outcome: TAR at the requested FAR plus the ROC sampled at
/// every score breakpoint, `(far, tar)` ascending in FAR.
#[derive(Debug, Clone, PartialEq)]
pub struct TarResult<F: Real> {
    pub tar: F,
    pub threshold: F,
    pub curve: Vec<(F, F)>,
}

/// TAR at a fixed FAR with the full ROC sweep.
pub fn tar_at_far<F: Real>(positives: &[F], negatives: &[F], far: F) -> Result<TarResult<F>> {
    if positives.is_empty() {
        return Err(Error::EmptyInput {
            context: "TAR estimation without genuine scores".into(),
        });
    }
    let threshold = threshold_at_far(negatives, far)?;
    let accepted = positives.iter().filter(|&&s| s >= threshold).count();
    let tar = F::of(accepted as f64) / F::of(positives.len() as f64);

    // Sweep every breakpoint: thresholds descending over the union of
    // observed scores.
    let mut thresholds: Vec<F> = positives.iter().chain(negatives).copied().collect();
    thresholds.sort_by(|a, b| b.partial_cmp(a).expect("finite scores"));
    thresholds.dedup();
    let mut pos = positives.to_vec();
    pos.sort_by(|a, b| b.partial_cmp(a).expect("finite scores"));
    let mut neg = negatives.to_vec();
    neg.sort_by(|a, b| b.partial_cmp(a).expect("finite scores"));
    let (n_p, n_n) = (
        F::of(pos.len() as f64),
        F::of(neg.len() as f64),
    );
    let mut curve = Vec::with_capacity(thresholds.len());
    let (mut pi, mut ni) = (0usize, 0usize);
    for t in thresholds {
        while pi < pos.len() && pos[pi] >= t {
            pi += 1;
        }
        while ni < neg.len() && neg[ni] >= t {
            ni += 1;
        }
        curve.push((F::of(ni as f64) / n_n, F::of(pi as f64) / n_p));
    }
    Ok(TarResult {
        tar,
        threshold,
        curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(v: Vec<f64>) -> Vec<f64> {
        l2_normalize(&v).unwrap()
    }

    fn set(rows: Vec<Vec<f64>>, labels: Vec<usize>) -> EmbeddingSet<f64> {
        EmbeddingSet::new(rows.into_iter().map(unit).collect(), labels).unwrap()
    }

    #[test]
    fn embedding_set_validates_norms() {
        let bad = EmbeddingSet::new(vec![vec![0.5f64, 0.5]], vec![1]);
        assert!(bad.is_err());
        let ok = EmbeddingSet::new(vec![vec![1.0f64, 0.0]], vec![1]);
        assert!(ok.is_ok());
    }

    #[test]
    fn classify_self_match_is_perfect() {
        let s = set(
            vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]],
            vec![1, 2, 1],
        );
        assert_eq!(classify_accuracy(&s, &s).unwrap(), 1.0);
    }

    #[test]
    fn classify_well_separated_clusters() {
        // Two tight clusters around orthogonal axes.
        let train = set(
            vec![vec![1.0, 0.01], vec![1.0, -0.01], vec![0.01, 1.0], vec![-0.01, 1.0]],
            vec![1, 1, 2, 2],
        );
        let test = set(vec![vec![1.0, 0.02], vec![0.02, 1.0]], vec![1, 2]);
        assert_eq!(classify_accuracy(&train, &test).unwrap(), 1.0);
    }

    #[test]
    fn classify_rejects_mismatched_identity_sets() {
        let train = set(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![1, 2]);
        let test = set(vec![vec![1.0, 0.0]], vec![3]);
        assert!(classify_accuracy(&train, &test).is_err());
    }

    #[test]
    fn rank_k_probe_equals_gallery() {
        let g = set(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![1, 2]);
        let cmc = closed_set_rank_k(&g, &g, 2).unwrap();
        assert_eq!(cmc, vec![1.0, 1.0]);
    }

    #[test]
    fn rank_exhaustion_reaches_one() {
        let g = set(
            vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
            vec![1, 2, 3],
        );
        // Probes deliberately closest to the wrong identities.
        let p = set(
            vec![vec![0.1, 1.0, 0.2], vec![1.0, 0.1, 0.3]],
            vec![1, 2],
        );
        let cmc = closed_set_rank_k(&g, &p, 3).unwrap();
        assert_eq!(*cmc.last().unwrap(), 1.0);
        for w in cmc.windows(2) {
            assert!(w[1] >= w[0], "CMC must be non-decreasing: {cmc:?}");
        }
    }

    #[test]
    fn rank_k_rejects_unenrolled_probe() {
        let g = set(vec![vec![1.0, 0.0]], vec![1]);
        let p = set(vec![vec![0.0, 1.0]], vec![2]);
        assert!(matches!(
            closed_set_rank_k(&g, &p, 1),
            Err(Error::ProbeIdentityNotInGallery { label: 2 })
        ));
    }

    #[test]
    fn rank_k_matches_brute_force_on_hand_placed_embeddings() {
        // 3 identities, 2 gallery images each, 4 probes.
        let g = set(
            vec![
                vec![1.0, 0.0, 0.0],
                vec![0.9, 0.1, 0.0],
                vec![0.0, 1.0, 0.0],
                vec![0.1, 0.9, 0.1],
                vec![0.0, 0.0, 1.0],
                vec![0.1, 0.0, 0.9],
            ],
            vec![1, 1, 2, 2, 3, 3],
        );
        let p = set(
            vec![
                vec![0.8, 0.2, 0.1],
                vec![0.2, 0.8, 0.2],
                vec![0.3, 0.3, 0.8],
                vec![0.5, 0.5, 0.0],
            ],
            vec![1, 2, 3, 2],
        );
        let cmc = closed_set_rank_k(&g, &p, 3).unwrap();

        // Independent oracle: explicit sorted similarity tables.
        let mut hits = vec![0usize; 3];
        for (v, &label) in p.vectors().iter().zip(p.labels()) {
            let mut table: Vec<(usize, f64)> = g
                .class_indices()
                .iter()
                .map(|(&l, idx)| {
                    let best = idx
                        .iter()
                        .map(|&i| dot(v, &g.vectors()[i]))
                        .fold(f64::NEG_INFINITY, f64::max);
                    (l, best)
                })
                .collect();
            table.sort_by(|a, b| {
                b.1.partial_cmp(&a.1)
                    .unwrap()
                    .then(a.0.cmp(&b.0))
            });
            let rank = table.iter().position(|&(l, _)| l == label).unwrap() + 1;
            for k in rank..=3 {
                hits[k - 1] += 1;
            }
        }
        let expect: Vec<f64> = hits.iter().map(|&h| h as f64 / 4.0).collect();
        assert_eq!(cmc, expect);
    }

    #[test]
    fn threshold_convention() {
        // 10 scores; far 0.2 admits the top 2.
        let scores: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
        let t = threshold_at_far(&scores, 0.2).unwrap();
        assert_eq!(t, 0.9);
        assert_eq!(scores.iter().filter(|&&s| s >= t).count(), 2);
        // No observed score is infrequent enough: threshold moves just
        // above the maximum, achieved FAR drops to 0.
        let ties = [0.5f64, 0.5, 0.5];
        let t = threshold_at_far(&ties, 0.2).unwrap();
        assert!(t > 0.5 && t.is_finite());
        assert_eq!(ties.iter().filter(|&&s| s >= t).count(), 0);
        assert!(threshold_at_far(&[] as &[f64], 0.1).is_err());
        assert!(threshold_at_far(&[0.1f64], 0.0).is_err());
    }

    #[test]
    fn open_set_perfect_separation() {
        let g = set(vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]], vec![1, 2]);
        let known = set(vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]], vec![1, 2]);
        let unknown = set(vec![vec![0.0, 0.0, 1.0]; 4], vec![3, 3, 3, 3]);
        let out = open_set_dir(&g, &known, &unknown, 0.25).unwrap();
        assert_eq!(out.dir, 1.0);
    }

    #[test]
    fn open_set_total_failure() {
        // Known probes all score below every unknown probe.
        let g = set(vec![vec![1.0, 0.0]], vec![1]);
        let known = set(vec![vec![-1.0, 0.0]], vec![1]);
        let unknown = set(vec![vec![1.0, 0.1], vec![1.0, -0.1], vec![0.9, 0.2], vec![0.9, -0.2]], vec![9, 9, 9, 9]);
        let out = open_set_dir(&g, &known, &unknown, 0.25).unwrap();
        assert_eq!(out.dir, 0.0);
    }

    #[test]
    fn open_set_rejects_enrolled_unknowns_and_needs_unknowns() {
        let g = set(vec![vec![1.0, 0.0]], vec![1]);
        let known = set(vec![vec![1.0, 0.0]], vec![1]);
        let enrolled = set(vec![vec![0.0, 1.0]], vec![1]);
        assert!(open_set_dir(&g, &known, &enrolled, 0.1).is_err());
    }

    #[test]
    fn dir_sweep_is_monotone_in_far() {
        let g = set(vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]], vec![1, 2]);
        let known = set(
            vec![vec![0.9, 0.1, 0.1], vec![0.2, 0.9, 0.1], vec![0.7, 0.2, 0.4]],
            vec![1, 2, 1],
        );
        let unknown = set(
            vec![vec![0.5, 0.5, 0.5], vec![0.3, 0.2, 0.9], vec![0.6, 0.1, 0.8], vec![0.2, 0.6, 0.7]],
            vec![7, 7, 8, 8],
        );
        let out = open_set_dir(&g, &known, &unknown, 0.25).unwrap();
        for w in out.sweep.windows(2) {
            assert!(w[1].0 >= w[0].0);
            assert!(w[1].1 >= w[0].1, "DIR must not decrease with FAR");
        }
    }

    #[test]
    fn verification_counts_and_duplicates() {
        // 3 identities, 2 samples each.
        let s = set(
            vec![
                vec![1.0, 0.0, 0.0],
                vec![1.0, 0.0, 0.0],
                vec![0.0, 1.0, 0.0],
                vec![0.0, 0.9, 0.1],
                vec![0.0, 0.0, 1.0],
                vec![0.2, 0.0, 1.0],
            ],
            vec![1, 1, 2, 2, 3, 3],
        );
        let scores = verification_scores(&s).unwrap();
        assert_eq!(scores.len(), 6);
        for v in &scores {
            assert_eq!(v.negatives.len(), 2);
        }
        // Duplicated sample in the same class gives positive = 1.
        assert!((scores[0].positive - 1.0).abs() < 1e-12);

        // Brute-force oracle: full pairwise similarity table.
        for (i, v) in scores.iter().enumerate() {
            let mine = s.labels()[i];
            let mut best_same = f64::NEG_INFINITY;
            let mut best_other: BTreeMap<usize, f64> = BTreeMap::new();
            for j in 0..s.len() {
                if i == j {
                    continue;
                }
                let sim = dot(&s.vectors()[i], &s.vectors()[j]);
                if s.labels()[j] == mine {
                    best_same = best_same.max(sim);
                } else {
                    let e = best_other.entry(s.labels()[j]).or_insert(f64::NEG_INFINITY);
                    *e = e.max(sim);
                }
            }
            assert_eq!(v.positive, best_same);
            let expect: Vec<f64> = best_other.into_values().collect();
            assert_eq!(v.negatives, expect);
        }
    }

    #[test]
    fn verification_rejects_singletons() {
        let s = set(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]], vec![1, 1, 2]);
        assert!(matches!(
            verification_scores(&s),
            Err(Error::SingletonIdentity { label: 2 })
        ));
    }

    #[test]
    fn tar_perfect_separation() {
        let pos = vec![0.9f64, 0.95, 0.99];
        let neg = vec![0.1f64, 0.2, 0.3, 0.4];
        // Includes a FAR below 1/|negatives| to exercise the above-max
        // threshold fallback.
        for far in [0.1, 0.26, 0.5, 0.75] {
            assert_eq!(tar_at_far(&pos, &neg, far).unwrap().tar, 1.0);
        }
    }

    #[test]
    fn tar_matches_brute_force_sweep_on_hand_scores() {
        let pos = vec![0.8f64, 0.6, 0.4, 0.9, 0.55];
        let neg = vec![0.7f64, 0.5, 0.3, 0.2, 0.65];
        let far = 0.2;
        let out = tar_at_far(&pos, &neg, far).unwrap();
        // Oracle: exhaustive sweep over all observed scores.
        let mut candidates: Vec<f64> = pos.iter().chain(&neg).copied().collect();
        candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut best = None;
        for &t in &candidates {
            let f = neg.iter().filter(|&&s| s >= t).count() as f64 / neg.len() as f64;
            if f <= far {
                best = Some(t);
                break;
            }
        }
        let t = best.unwrap();
        assert_eq!(out.threshold, t);
        let expect = pos.iter().filter(|&&s| s >= t).count() as f64 / pos.len() as f64;
        assert_eq!(out.tar, expect);
        // ROC monotonicity.
        for w in out.curve.windows(2) {
            assert!(w[1].0 >= w[0].0 && w[1].1 >= w[0].1);
        }
    }

    #[test]
    fn tar_approximates_far_for_identical_distributions() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let pos: Vec<f64> = (0..10_000).map(|_| rng.gen::<f64>()).collect();
        let neg: Vec<f64> = (0..10_000).map(|_| rng.gen::<f64>()).collect();
        for far in [0.01, 0.05, 0.1] {
            let out = tar_at_far(&pos, &neg, far).unwrap();
            assert!(
                (out.tar - far).abs() <= 0.02,
                "far {far}: tar {} deviates",
                out.tar
            );
        }
    }
}
