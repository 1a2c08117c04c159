//! Labeled feature-vector datasets: synthetic identity-manifold generation
//! and CSV-style file ingestion.
//!
//! The synthetic generator places each identity at a random unit prototype
//! and spreads its samples over a spherical cap around it: every sample is
//! the prototype rotated by a random angle (up to `nuisance_scale` radians)
//! inside an identity-specific nuisance subspace, plus isotropic noise.
//! Identities are therefore sub-manifolds whose spread is controlled
//! independently of their separation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numerics::l2_normalize;
use crate::scalar::Real;

/// One labeled feature vector. Identity labels are 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<F: Real> {
    pub features: Vec<F>,
    pub label: usize,
}

/// A collection of samples with dense-ish labels in `1..=num_classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<F: Real> {
    samples: Vec<Sample<F>>,
    num_classes: usize,
    class_counts: Vec<usize>,
}

impl<F: Real> Dataset<F> {
    /// Validate and wrap a sample list. `num_classes` is the largest label.
    pub fn new(samples: Vec<Sample<F>>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyInput {
                context: "dataset has no samples".into(),
            });
        }
        let dim = samples[0].features.len();
        let mut num_classes = 0;
        for (i, s) in samples.iter().enumerate() {
            if s.label == 0 {
                return Err(Error::LabelOutOfRange {
                    label: 0,
                    num_classes: usize::MAX,
                });
            }
            if s.features.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: s.features.len(),
                });
            }
            if let Some(&bad) = s.features.iter().find(|x| !x.is_finite()) {
                return Err(Error::NonFinite {
                    context: format!("feature of sample {i} is {bad}"),
                });
            }
            num_classes = num_classes.max(s.label);
        }
        let mut class_counts = vec![0usize; num_classes];
        for s in &samples {
            class_counts[s.label - 1] += 1;
        }
        Ok(Self {
            samples,
            num_classes,
            class_counts,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.samples[0].features.len()
    }

    /// Largest label value; equals the identity count for dense datasets.
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Per-identity sizes indexed by `label - 1`.
    pub fn class_counts(&self) -> &[usize] {
        &self.class_counts
    }

    pub fn samples(&self) -> &[Sample<F>] {
        &self.samples
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Sample indices grouped by label, in ascending label order.
    pub fn class_indices(&self) -> BTreeMap<usize, Vec<usize>> {
        let mut map: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, s) in self.samples.iter().enumerate() {
            map.entry(s.label).or_default().push(i);
        }
        map
    }

    /// Subset keeping original labels (for evaluation-side slices).
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let samples = indices
            .iter()
            .map(|&i| self.samples[i].clone())
            .collect::<Vec<_>>();
        Self::new(samples)
    }

    /// Subset with labels remapped to dense `1..=K` in first-occurrence
    /// order, as required for training a classification head. Returns the
    /// `(original, dense)` mapping alongside.
    pub fn subset_remapped(&self, indices: &[usize]) -> Result<(Self, Vec<(usize, usize)>)> {
        let mut mapping: Vec<(usize, usize)> = Vec::new();
        let mut dense: BTreeMap<usize, usize> = BTreeMap::new();
        let mut samples = Vec::with_capacity(indices.len());
        for &i in indices {
            let s = &self.samples[i];
            let next = dense.len() + 1;
            let d = *dense.entry(s.label).or_insert_with(|| {
                mapping.push((s.label, next));
                next
            });
            samples.push(Sample {
                features: s.features.clone(),
                label: d,
            });
        }
        Ok((Self::new(samples)?, mapping))
    }
}

/// Configuration for the synthetic identity-manifold generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub num_identities: usize,
    /// Inclusive `[min, max]` range of samples per identity.
    pub samples_per_identity: (usize, usize),
    pub feature_dim: usize,
    /// Dimension of the per-identity nuisance subspace; must be < feature_dim.
    pub nuisance_dim: usize,
    /// Maximum rotation angle (radians) a sample strays from its prototype.
    pub nuisance_scale: f64,
    /// Standard deviation of the isotropic feature noise.
    pub noise_scale: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.samples_per_identity;
        if self.num_identities == 0 || lo == 0 || hi < lo {
            return Err(Error::InvalidConfig {
                reason: format!(
                    "need num_identities >= 1 and 1 <= min <= max, got {} identities, range [{lo},{hi}]",
                    self.num_identities
                ),
            });
        }
        if self.feature_dim == 0 || self.nuisance_dim >= self.feature_dim {
            return Err(Error::InvalidConfig {
                reason: format!(
                    "need 0 <= nuisance_dim < feature_dim, got {} and {}",
                    self.nuisance_dim, self.feature_dim
                ),
            });
        }
        if self.nuisance_scale < 0.0 || self.noise_scale < 0.0 {
            return Err(Error::InvalidConfig {
                reason: "nuisance_scale and noise_scale must be nonnegative".into(),
            });
        }
        Ok(())
    }
}

fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

fn unit_gaussian_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v = gaussian_vec(rng, dim);
        if let Ok(u) = l2_normalize(&v) {
            return u;
        }
    }
}

/// Project `v` orthogonally to all rows of `basis` plus `extra`, normalize.
/// Returns None if the residual is numerically zero.
fn orthonormalize(v: &[f64], extra: &[f64], basis: &[Vec<f64>]) -> Option<Vec<f64>> {
    let mut r = v.to_vec();
    for b in std::iter::once(extra).chain(basis.iter().map(|b| b.as_slice())) {
        let d: f64 = r.iter().zip(b).map(|(a, c)| a * c).sum();
        for (ri, bi) in r.iter_mut().zip(b) {
            *ri -= d * bi;
        }
    }
    let norm: f64 = r.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm < 1e-9 {
        return None;
    }
    Some(r.into_iter().map(|x| x / norm).collect())
}

/// Generate a synthetic dataset. Deterministic for a fixed config.
pub fn generate_synthetic<F: Real>(config: &SynthConfig) -> Result<Dataset<F>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let dim = config.feature_dim;
    let (lo, hi) = config.samples_per_identity;
    let mut samples = Vec::new();
    for identity in 1..=config.num_identities {
        let size = rng.gen_range(lo..=hi);
        let prototype = unit_gaussian_vec(&mut rng, dim);
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(config.nuisance_dim);
        while basis.len() < config.nuisance_dim {
            let v = gaussian_vec(&mut rng, dim);
            if let Some(b) = orthonormalize(&v, &prototype, &basis) {
                basis.push(b);
            }
        }
        for _ in 0..size {
            let mut point = prototype.clone();
            if !basis.is_empty() {
                // Random direction inside the nuisance subspace, random
                // rotation angle in [0, nuisance_scale). Drawn even when the
                // scale is zero so datasets across scales share a seed family.
                let coeffs = gaussian_vec(&mut rng, basis.len());
                let angle = config.nuisance_scale * rng.gen::<f64>();
                let mut dir = vec![0.0; dim];
                for (c, b) in coeffs.iter().zip(&basis) {
                    for (d, bi) in dir.iter_mut().zip(b) {
                        *d += c * bi;
                    }
                }
                if let Ok(u) = l2_normalize(&dir) {
                    let (sin, cos) = angle.sin_cos();
                    for ((p, proto), ui) in point.iter_mut().zip(&prototype).zip(&u) {
                        *p = cos * proto + sin * ui;
                    }
                }
            }
            let noise = gaussian_vec(&mut rng, dim);
            for (p, n) in point.iter_mut().zip(&noise) {
                *p += config.noise_scale * n;
            }
            samples.push(Sample {
                features: point.into_iter().map(F::of).collect(),
                label: identity,
            });
        }
    }
    Dataset::new(samples)
}

/// Parse a feature file: comma-separated values, one sample per row, final
/// column an integer label, preceding columns features. An optional header
/// row is auto-detected (any non-numeric field). Labels are remapped to
/// dense `1..=K` preserving first-occurrence order; the `(original, dense)`
/// mapping is returned with the dataset.
pub fn load_feature_file<F: Real>(path: &Path) -> Result<(Dataset<F>, Vec<(i64, usize)>)> {
    let text = std::fs::read_to_string(path)?;
    parse_feature_text(&text, &path.display().to_string())
}

pub(crate) fn parse_feature_text<F: Real>(
    text: &str,
    path: &str,
) -> Result<(Dataset<F>, Vec<(i64, usize)>)> {
    let err = |line: usize, reason: String| Error::FileFormat {
        path: path.to_string(),
        line,
        reason,
    };
    let mut rows: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .collect();
    while matches!(rows.last(), Some((_, l)) if l.trim().is_empty()) {
        rows.pop();
    }
    if rows.is_empty() {
        return Err(err(1, "empty file".into()));
    }
    // Header detection: a first row with any non-numeric field is a header.
    let first_fields: Vec<&str> = rows[0].1.split(',').collect();
    let looks_like_header = first_fields
        .iter()
        .any(|f| f.trim().parse::<f64>().is_err());
    let data_rows = if looks_like_header { &rows[1..] } else { &rows[..] };
    if data_rows.is_empty() {
        return Err(err(rows[0].0, "no data rows after header".into()));
    }

    let mut width = None;
    let mut mapping: Vec<(i64, usize)> = Vec::new();
    let mut dense: BTreeMap<i64, usize> = BTreeMap::new();
    let mut samples = Vec::with_capacity(data_rows.len());
    for &(line, row) in data_rows {
        if row.trim().is_empty() {
            return Err(err(line, "blank row".into()));
        }
        let fields: Vec<&str> = row.split(',').collect();
        match width {
            None => {
                if fields.len() < 2 {
                    return Err(err(line, "need at least one feature column and a label".into()));
                }
                width = Some(fields.len());
            }
            Some(w) if fields.len() != w => {
                return Err(err(
                    line,
                    format!("ragged row: expected {w} fields, got {}", fields.len()),
                ));
            }
            _ => {}
        }
        let (label_field, feature_fields) = fields.split_last().unwrap();
        let mut features = Vec::with_capacity(feature_fields.len());
        for (col, f) in feature_fields.iter().enumerate() {
            match F::parse(f.trim()) {
                Some(v) if v.is_finite() => features.push(v),
                _ => {
                    return Err(err(
                        line,
                        format!("non-numeric feature field {:?} in column {}", f, col + 1),
                    ))
                }
            }
        }
        let original: i64 = label_field.trim().parse().map_err(|_| {
            err(
                line,
                format!("non-integer label field {:?}", label_field),
            )
        })?;
        let next = dense.len() + 1;
        let label = *dense.entry(original).or_insert_with(|| {
            mapping.push((original, next));
            next
        });
        samples.push(Sample { features, label });
    }
    Ok((Dataset::new(samples)?, mapping))
}

/// Serialize a dataset in the feature-file format, full precision, no header.
pub fn feature_file_text<F: Real>(dataset: &Dataset<F>) -> String {
    let mut out = String::new();
    for s in dataset.samples() {
        for f in &s.features {
            let _ = write!(out, "{f},");
        }
        let _ = writeln!(out, "{}", s.label);
    }
    out
}

/// Write a dataset to disk in the feature-file format.
pub fn save_feature_file<F: Real>(path: &Path, dataset: &Dataset<F>) -> Result<()> {
    std::fs::write(path, feature_file_text(dataset))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> SynthConfig {
        SynthConfig {
            num_identities: 5,
            samples_per_identity: (4, 8),
            feature_dim: 12,
            nuisance_dim: 3,
            nuisance_scale: 0.4,
            noise_scale: 0.02,
            seed: 11,
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a: Dataset<f64> = generate_synthetic(&small_config()).unwrap();
        let b: Dataset<f64> = generate_synthetic(&small_config()).unwrap();
        assert_eq!(a, b);
        let c: Dataset<f64> = generate_synthetic(&SynthConfig {
            seed: 12,
            ..small_config()
        })
        .unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn class_sizes_within_range() {
        let cfg = SynthConfig {
            num_identities: 20,
            samples_per_identity: (4, 192),
            ..small_config()
        };
        let ds: Dataset<f64> = generate_synthetic(&cfg).unwrap();
        assert_eq!(ds.num_classes(), 20);
        for &c in ds.class_counts() {
            assert!((4..=192).contains(&c), "class size {c} outside [4,192]");
        }
    }

    #[test]
    fn zero_scales_make_identical_samples() {
        let cfg = SynthConfig {
            nuisance_scale: 0.0,
            noise_scale: 0.0,
            ..small_config()
        };
        let ds: Dataset<f64> = generate_synthetic(&cfg).unwrap();
        for indices in ds.class_indices().values() {
            let first = &ds.samples()[indices[0]].features;
            for &i in indices {
                assert_eq!(&ds.samples()[i].features, first);
            }
        }
    }

    /// Leave-one-out 1-NN accuracy on raw features, cosine similarity.
    fn loo_1nn_accuracy(ds: &Dataset<f64>) -> f64 {
        let normed: Vec<Vec<f64>> = ds
            .samples()
            .iter()
            .map(|s| l2_normalize(&s.features).unwrap())
            .collect();
        let mut correct = 0;
        for i in 0..ds.len() {
            let mut best = None;
            let mut best_sim = f64::NEG_INFINITY;
            for j in 0..ds.len() {
                if i == j {
                    continue;
                }
                let sim: f64 = normed[i].iter().zip(&normed[j]).map(|(a, b)| a * b).sum();
                if sim > best_sim {
                    best_sim = sim;
                    best = Some(j);
                }
            }
            if ds.samples()[best.unwrap()].label == ds.samples()[i].label {
                correct += 1;
            }
        }
        correct as f64 / ds.len() as f64
    }

    #[test]
    fn zero_nuisance_gives_perfect_knn() {
        let cfg = SynthConfig {
            nuisance_scale: 0.0,
            noise_scale: 0.0,
            ..small_config()
        };
        let ds: Dataset<f64> = generate_synthetic(&cfg).unwrap();
        assert_eq!(loo_1nn_accuracy(&ds), 1.0);
    }

    #[test]
    fn nuisance_scale_degrades_knn_monotonically() {
        let scales = [0.3, 0.7, 1.1, 1.5, 1.9];
        let accs: Vec<f64> = scales
            .iter()
            .map(|&s| {
                let cfg = SynthConfig {
                    num_identities: 8,
                    samples_per_identity: (10, 10),
                    nuisance_scale: s,
                    noise_scale: 0.0,
                    ..small_config()
                };
                loo_1nn_accuracy(&generate_synthetic(&cfg).unwrap())
            })
            .collect();
        for w in accs.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "trend violated: {accs:?}");
        }
        assert!(
            accs.last().unwrap() < accs.first().unwrap(),
            "no degradation across scales: {accs:?}"
        );
    }

    #[test]
    fn load_remaps_sparse_labels() {
        let (ds, mapping) =
            parse_feature_text::<f64>("1.0,2.0,7\n3.0,4.0,7\n5.0,6.0,42\n", "test.csv").unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.num_classes(), 2);
        assert_eq!(ds.labels(), vec![1, 1, 2]);
        assert_eq!(mapping, vec![(7, 1), (42, 2)]);
    }

    #[test]
    fn load_counts_rows_and_classes() {
        let (ds, _) = parse_feature_text::<f64>("0.5,1\n0.25,1\n0.125,2\n", "t").unwrap();
        assert_eq!((ds.len(), ds.num_classes()), (3, 2));
    }

    #[test]
    fn header_is_auto_detected() {
        let (ds, _) =
            parse_feature_text::<f64>("f0,f1,label\n1.0,2.0,1\n3.0,4.0,2\n", "t").unwrap();
        assert_eq!(ds.len(), 2);
    }

    #[test]
    fn load_errors_carry_line_numbers() {
        let ragged = parse_feature_text::<f64>("1.0,2.0,1\n1.0,2\n", "t").unwrap_err();
        assert!(matches!(ragged, Error::FileFormat { line: 2, .. }), "{ragged}");
        let bad = parse_feature_text::<f64>("1.0,x,1\n", "t").unwrap_err();
        assert!(matches!(bad, Error::FileFormat { line: 1, .. }), "{bad}");
        let empty = parse_feature_text::<f64>("", "t").unwrap_err();
        assert!(matches!(empty, Error::FileFormat { .. }), "{empty}");
        let float_label = parse_feature_text::<f64>("1.0,2.0,1.5\n", "t").unwrap_err();
        assert!(matches!(float_label, Error::FileFormat { line: 1, .. }));
    }

    #[test]
    fn save_load_round_trip_is_exact() {
        let ds: Dataset<f64> = generate_synthetic(&small_config()).unwrap();
        let text = feature_file_text(&ds);
        let (back, _) = parse_feature_text::<f64>(&text, "t").unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn subset_remapped_densifies() {
        let (ds, _) =
            parse_feature_text::<f64>("1,1\n2,2\n3,3\n4,3\n5,2\n", "t").unwrap();
        let (sub, mapping) = ds.subset_remapped(&[2, 3, 4]).unwrap();
        assert_eq!(sub.labels(), vec![1, 1, 2]);
        assert_eq!(mapping, vec![(3, 1), (2, 2)]);
    }
}
