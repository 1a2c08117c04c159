//! Mini-batch pair construction and dataset splitting.
//!
//! A training batch is built as `pairs_per_batch` (anchor, same-class
//! partner) pairs laid out as `2 * pairs_per_batch` slots; the similar set
//! holds the constructed pairs and the dissimilar set is the exhaustive
//! cross-label pairing of the batch slots. Splits and trials are pure
//! functions of `(labels, parameters, seed)`.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// A mini-batch with its similar and dissimilar pair sets.
///
/// `members` are dataset indices, two per constructed pair (anchor first).
/// Pair entries in `similar` / `dissimilar` are *positions* into `members`
/// (the same dataset sample may occupy several slots), kept in construction
/// order so batch-loss summation is reproducible.
#[derive(Debug, Clone, PartialEq)]
pub struct PairBatch {
    members: Vec<usize>,
    similar: Vec<(usize, usize)>,
    dissimilar: Vec<(usize, usize)>,
}

impl PairBatch {
    /// Validate a batch against the slot labels: similar pairs must share a
    /// label, dissimilar pairs must not, positions must be in range and no
    /// pair may reference one slot twice.
    pub fn new(
        members: Vec<usize>,
        similar: Vec<(usize, usize)>,
        dissimilar: Vec<(usize, usize)>,
        slot_labels: &[usize],
    ) -> Result<Self> {
        if slot_labels.len() != members.len() {
            return Err(Error::DimensionMismatch {
                expected: members.len(),
                got: slot_labels.len(),
            });
        }
        let len = members.len();
        let check = |&(i, j): &(usize, usize)| -> Result<()> {
            let bad = [i, j].into_iter().find(|&x| x >= len);
            if let Some(index) = bad {
                return Err(Error::PairIndexOutOfRange { index, len });
            }
            if i == j {
                return Err(Error::InvalidConfig {
                    reason: format!("pair ({i},{j}) references the same batch slot"),
                });
            }
            Ok(())
        };
        for p in &similar {
            check(p)?;
            if slot_labels[p.0] != slot_labels[p.1] {
                return Err(Error::InvalidConfig {
                    reason: format!("similar pair {p:?} spans two labels"),
                });
            }
        }
        for p in &dissimilar {
            check(p)?;
            if slot_labels[p.0] == slot_labels[p.1] {
                return Err(Error::InvalidConfig {
                    reason: format!("dissimilar pair {p:?} shares a label"),
                });
            }
        }
        Ok(Self {
            members,
            similar,
            dissimilar,
        })
    }

    /// Dataset indices of the batch slots.
    pub fn members(&self) -> &[usize] {
        &self.members
    }

    /// Similar pairs as positions into `members`.
    pub fn similar(&self) -> &[(usize, usize)] {
        &self.similar
    }

    /// Dissimilar pairs as positions into `members`.
    pub fn dissimilar(&self) -> &[(usize, usize)] {
        &self.dissimilar
    }
}

/// Build one training batch: `pairs_per_batch` anchors drawn uniformly from
/// samples whose class has a same-class partner (without replacement when
/// enough are available), each paired with a distinct same-class sample; the
/// dissimilar set is every cross-label slot pair `(s, t)`, `s < t`.
pub fn build_pair_batch<F: Real, R: Rng>(
    dataset: &Dataset<F>,
    pairs_per_batch: usize,
    rng: &mut R,
) -> Result<PairBatch> {
    if pairs_per_batch == 0 {
        return Err(Error::InvalidConfig {
            reason: "pairs_per_batch must be >= 1".into(),
        });
    }
    let by_class = dataset.class_indices();
    let eligible: Vec<usize> = by_class
        .values()
        .filter(|v| v.len() >= 2)
        .flat_map(|v| v.iter().copied())
        .collect();
    if eligible.is_empty() {
        return Err(Error::NoPairableClass);
    }

    let anchors: Vec<usize> = if eligible.len() >= pairs_per_batch {
        let mut pool = eligible.clone();
        let (chosen, _) = pool.partial_shuffle(rng, pairs_per_batch);
        chosen.to_vec()
    } else {
        (0..pairs_per_batch)
            .map(|_| eligible[rng.gen_range(0..eligible.len())])
            .collect()
    };

    let labels = dataset.labels();
    let mut members = Vec::with_capacity(2 * pairs_per_batch);
    let mut similar = Vec::with_capacity(pairs_per_batch);
    for anchor in anchors {
        let classmates = &by_class[&labels[anchor]];
        let partner = loop {
            let candidate = classmates[rng.gen_range(0..classmates.len())];
            if candidate != anchor {
                break candidate;
            }
        };
        similar.push((members.len(), members.len() + 1));
        members.push(anchor);
        members.push(partner);
    }

    let slot_labels: Vec<usize> = members.iter().map(|&i| labels[i]).collect();
    let mut dissimilar = Vec::new();
    for s in 0..members.len() {
        for t in (s + 1)..members.len() {
            if slot_labels[s] != slot_labels[t] {
                dissimilar.push((s, t));
            }
        }
    }
    PairBatch::new(members, similar, dissimilar, &slot_labels)
}

/// How a split divides the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitKind {
    /// Every identity appears on both sides (unseen samples in test).
    StratifiedBySample,
    /// Identities are partitioned; test identities are unseen in training.
    DisjointByIdentity,
}

/// A deterministic train/test split.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitPlan {
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub kind: SplitKind,
    pub seed: u64,
}

fn rng_for(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}

fn check_fraction(test_fraction: f64) -> Result<()> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidConfig {
            reason: format!("test_fraction must be in (0, 1), got {test_fraction}"),
        });
    }
    Ok(())
}

fn group_by_label(labels: &[usize]) -> BTreeMap<usize, Vec<usize>> {
    let mut map: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        map.entry(l).or_default().push(i);
    }
    map
}

/// Per-class split: each class contributes `round(test_fraction * size)`
/// test samples, at least one. Rejects classes with a single sample.
pub fn stratified_split(labels: &[usize], test_fraction: f64, seed: u64) -> Result<SplitPlan> {
    check_fraction(test_fraction)?;
    let by_class = group_by_label(labels);
    for (&label, indices) in &by_class {
        if indices.len() < 2 {
            return Err(Error::ClassTooSmall {
                label,
                count: indices.len(),
                required: 2,
            });
        }
    }
    let mut rng = rng_for(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for indices in by_class.values() {
        let take = ((test_fraction * indices.len() as f64).round() as usize).max(1);
        let mut shuffled = indices.clone();
        shuffled.shuffle(&mut rng);
        test.extend_from_slice(&shuffled[..take.min(shuffled.len())]);
        train.extend_from_slice(&shuffled[take.min(shuffled.len())..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitPlan {
        train_indices: train,
        test_indices: test,
        kind: SplitKind::StratifiedBySample,
        seed,
    })
}

/// Identity-disjoint split: `round(test_fraction * C)` identities (clamped
/// to `1..=C-1`) move every one of their samples to the test side.
pub fn identity_split(labels: &[usize], test_fraction: f64, seed: u64) -> Result<SplitPlan> {
    check_fraction(test_fraction)?;
    let by_class = group_by_label(labels);
    let identities: Vec<usize> = by_class.keys().copied().collect();
    if identities.len() < 2 {
        return Err(Error::TooFewIdentities {
            required: 2,
            found: identities.len(),
        });
    }
    let take = ((test_fraction * identities.len() as f64).round() as usize)
        .clamp(1, identities.len() - 1);
    let mut rng = rng_for(seed);
    let mut shuffled = identities;
    shuffled.shuffle(&mut rng);
    let test_ids: std::collections::BTreeSet<usize> = shuffled[..take].iter().copied().collect();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (label, indices) in by_class {
        if test_ids.contains(&label) {
            test.extend(indices);
        } else {
            train.extend(indices);
        }
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitPlan {
        train_indices: train,
        test_indices: test,
        kind: SplitKind::DisjointByIdentity,
        seed,
    })
}

/// Probe/gallery composition mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrialMode {
    /// Every probe identity is enrolled in the gallery.
    Closed,
    /// Identities at odd ordinal positions (1st, 3rd, ... in ascending label
    /// order) contribute all images as probes and none to the gallery.
    Open,
}

/// One probe/gallery trial. Indices refer to the label slice the trial was
/// generated from.
#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub gallery: Vec<usize>,
    pub probe: Vec<usize>,
}

/// Draw one trial over a test set: per enrolled identity one uniformly
/// chosen gallery image, the remainder probes. In open mode, odd-ordinal
/// identities are withheld from the gallery entirely.
pub fn probe_gallery_trial<R: Rng>(
    labels: &[usize],
    rng: &mut R,
    mode: TrialMode,
) -> Result<Trial> {
    let by_class = group_by_label(labels);
    let mut gallery = Vec::new();
    let mut probe = Vec::new();
    for (ordinal, (&label, indices)) in by_class.iter().enumerate() {
        let withheld = mode == TrialMode::Open && ordinal % 2 == 0;
        if withheld {
            probe.extend(indices.iter().copied());
            continue;
        }
        if indices.len() < 2 {
            return Err(Error::SingletonIdentity { label });
        }
        let g = rng.gen_range(0..indices.len());
        for (k, &i) in indices.iter().enumerate() {
            if k == g {
                gallery.push(i);
            } else {
                probe.push(i);
            }
        }
    }
    gallery.sort_unstable();
    probe.sort_unstable();
    Ok(Trial { gallery, probe })
}
