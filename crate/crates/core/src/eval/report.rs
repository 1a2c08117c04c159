//! Protocol orchestration: stratified / identity splits, repeated
//! probe-gallery trials, and mean ± std aggregation into reports.
//!
//! Derived-seed rules, fixed so every report is reproducible from one base
//! seed: split `s` uses `seed + s`; trial `t` uses `seed + 1000 + t`.
//! Aggregation runs in ascending split then trial order; the standard
//! deviation is the population form (so a single value reports 0).

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{embed_dataset, Network};
use crate::pairing::{identity_split, probe_gallery_trial, stratified_split, TrialMode};
use crate::scalar::Real;

use super::{
    classify_accuracy, closed_set_rank_k, open_match_scores, open_set_dir, sweep_dir, tar_at_far,
    verification_scores, EmbeddingSet,
};

/// The four evaluation protocols.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    /// Seen identities, unseen samples; nearest-neighbor accuracy.
    Classification,
    /// Unseen identities, every probe enrolled; Rank-1 accuracy and CMC.
    ClosedSet,
    /// Unseen identities, half withheld from the gallery; DIR at fixed FAR.
    OpenSet,
    /// Unseen identities, genuine/impostor scores; TAR at fixed FAR.
    Verification,
}

impl Protocol {
    pub const ALL: [Protocol; 4] = [
        Protocol::Classification,
        Protocol::ClosedSet,
        Protocol::OpenSet,
        Protocol::Verification,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Protocol::Classification => "classification",
            Protocol::ClosedSet => "closed",
            Protocol::OpenSet => "open",
            Protocol::Verification => "verification",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classification" => Ok(Protocol::Classification),
            "closed" => Ok(Protocol::ClosedSet),
            "open" => Ok(Protocol::OpenSet),
            "verification" => Ok(Protocol::Verification),
            other => Err(Error::InvalidConfig {
                reason: format!(
                    "unknown protocol {other:?}; expected classification, closed, open or verification"
                ),
            }),
        }
    }
}

/// Split/trial counts and thresholds for a protocol run.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolOptions<F: Real> {
    pub splits: usize,
    pub trials: usize,
    pub far: F,
    pub test_fraction: f64,
    /// CMC depth; defaults to the number of test identities.
    pub max_rank: Option<usize>,
    pub seed: u64,
}

impl<F: Real> Default for ProtocolOptions<F> {
    /// 5 splits, 100 trials, FAR 1%, 20% test fraction.
    fn default() -> Self {
        Self {
            splits: 5,
            trials: 100,
            far: F::of(0.01),
            test_fraction: 0.2,
            max_rank: None,
            seed: 0,
        }
    }
}

impl<F: Real> ProtocolOptions<F> {
    pub fn validate(&self) -> Result<()> {
        if self.splits == 0 || self.trials == 0 {
            return Err(Error::InvalidConfig {
                reason: "splits and trials must be >= 1".into(),
            });
        }
        if !(self.far > F::zero() && self.far < F::one()) {
            return Err(Error::InvalidConfig {
                reason: format!("far must be in (0, 1), got {}", self.far),
            });
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::InvalidConfig {
                reason: format!("test_fraction must be in (0, 1), got {}", self.test_fraction),
            });
        }
        Ok(())
    }
}

/// A named curve for file emission (`x_label,y_label` become the CSV
/// header).
#[derive(Debug, Clone, PartialEq)]
pub struct Curve<F: Real> {
    pub name: &'static str,
    pub x_label: &'static str,
    pub y_label: &'static str,
    pub points: Vec<(F, F)>,
}

/// Aggregated results of one protocol run.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport<F: Real> {
    pub protocol: Protocol,
    pub splits: usize,
    pub trials: usize,
    pub far: F,
    pub test_fraction: f64,
    pub seed: u64,
    /// Metric values per split (one entry per trial, or a single entry for
    /// split-level protocols).
    pub per_split: Vec<Vec<F>>,
    pub mean: F,
    pub std: F,
    pub curves: Vec<Curve<F>>,
}

impl<F: Real> EvalReport<F> {
    /// `mean ± std` in percent, two decimals.
    pub fn summary_percent(&self) -> String {
        format!(
            "{:.2} ± {:.2}",
            self.mean.to_f64().unwrap_or(f64::NAN) * 100.0,
            self.std.to_f64().unwrap_or(f64::NAN) * 100.0
        )
    }
}

impl<F: Real> fmt::Display for EvalReport<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "report v1")?;
        writeln!(f, "protocol {}", self.protocol)?;
        writeln!(f, "splits {}", self.splits)?;
        writeln!(f, "trials {}", self.trials)?;
        writeln!(f, "far {}", self.far)?;
        writeln!(f, "test_fraction {}", self.test_fraction)?;
        writeln!(f, "seed {}", self.seed)?;
        for (s, values) in self.per_split.iter().enumerate() {
            write!(f, "split {s} values")?;
            for v in values {
                write!(f, " {v}")?;
            }
            writeln!(f)?;
        }
        writeln!(f, "mean {}", self.mean)?;
        writeln!(f, "std {}", self.std)?;
        writeln!(f, "summary {} %", self.summary_percent())?;
        writeln!(f, "end")
    }
}

/// Collapse runs of equal x to their last point (the largest y, since
/// sweeps emit non-decreasing y within a fixed x), so emitted curves have a
/// strictly increasing first column.
fn staircase_envelope<F: Real>(points: Vec<(F, F)>) -> Vec<(F, F)> {
    let mut out: Vec<(F, F)> = Vec::with_capacity(points.len());
    for p in points {
        match out.last_mut() {
            Some(last) if last.0 == p.0 => *last = p,
            _ => out.push(p),
        }
    }
    out
}

/// Mean and population standard deviation.
pub fn mean_std<F: Real>(values: &[F]) -> (F, F) {
    let n = F::of(values.len() as f64);
    let mean = values.iter().copied().sum::<F>() / n;
    let var = values
        .iter()
        .map(|&v| (v - mean) * (v - mean))
        .sum::<F>()
        / n;
    (mean, var.sqrt())
}

fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed + 1000 + trial as u64)
}

/// Closed-set trials over a test embedding set. Returns per-trial Rank-1
/// accuracies and per-trial CMC curves (depth `max_rank`, default the
/// test identity count).
pub fn closed_set_trials<F: Real>(
    test: &EmbeddingSet<F>,
    trials: usize,
    seed: u64,
    max_rank: Option<usize>,
) -> Result<(Vec<F>, Vec<Vec<F>>)> {
    let identities = test.identity_labels().len();
    let depth = max_rank.unwrap_or(identities);
    let mut rank1 = Vec::with_capacity(trials);
    let mut cmcs = Vec::with_capacity(trials);
    for t in 0..trials {
        let mut rng = trial_rng(seed, t);
        let trial = probe_gallery_trial(test.labels(), &mut rng, TrialMode::Closed)?;
        let gallery = test.subset(&trial.gallery);
        let probe = test.subset(&trial.probe);
        let cmc = closed_set_rank_k(&gallery, &probe, depth)?;
        rank1.push(cmc[0]);
        cmcs.push(cmc);
    }
    Ok((rank1, cmcs))
}

/// Per-trial DIR values plus the trials' pooled unknown/known score lists.
fn open_trials_scored<F: Real>(
    test: &EmbeddingSet<F>,
    trials: usize,
    far: F,
    seed: u64,
) -> Result<(Vec<F>, Vec<F>, Vec<(F, bool)>)> {
    let mut dirs = Vec::with_capacity(trials);
    let mut pooled_unknown = Vec::new();
    let mut pooled_known = Vec::new();
    for t in 0..trials {
        let mut rng = trial_rng(seed, t);
        let trial = probe_gallery_trial(test.labels(), &mut rng, TrialMode::Open)?;
        let gallery = test.subset(&trial.gallery);
        let enrolled = gallery.identity_labels();
        let (known_idx, unknown_idx): (Vec<usize>, Vec<usize>) = trial
            .probe
            .iter()
            .partition(|&&i| enrolled.contains(&test.labels()[i]));
        let known = test.subset(&known_idx);
        let unknown = test.subset(&unknown_idx);
        let out = open_set_dir(&gallery, &known, &unknown, far)?;
        dirs.push(out.dir);
        let (mut u, mut k) = open_match_scores(&gallery, &known, &unknown);
        pooled_unknown.append(&mut u);
        pooled_known.append(&mut k);
    }
    Ok((dirs, pooled_unknown, pooled_known))
}

/// Open-set trials over a test embedding set. Returns per-trial DIR values
/// at `far` and the pooled `(far, dir)` sweep over all trials' scores.
pub fn open_set_trials<F: Real>(
    test: &EmbeddingSet<F>,
    trials: usize,
    far: F,
    seed: u64,
) -> Result<(Vec<F>, Vec<(F, F)>)> {
    let (dirs, unknown, known) = open_trials_scored(test, trials, far, seed)?;
    Ok((dirs, sweep_dir(&unknown, &known)))
}

/// Flattened genuine and impostor score pools for a test set.
pub fn pooled_verification_scores<F: Real>(test: &EmbeddingSet<F>) -> Result<(Vec<F>, Vec<F>)> {
    let scores = verification_scores(test)?;
    let mut positives = Vec::with_capacity(scores.len());
    let mut negatives = Vec::new();
    for s in scores {
        positives.push(s.positive);
        negatives.extend(s.negatives);
    }
    Ok((positives, negatives))
}

/// Run one protocol over embeddings of a full dataset: split (stratified for
/// classification, by identity otherwise), run the trials, and aggregate
/// mean ± std over every value in split-then-trial order.
pub fn run_protocol<F: Real>(
    embeddings: &EmbeddingSet<F>,
    protocol: Protocol,
    opts: &ProtocolOptions<F>,
) -> Result<EvalReport<F>> {
    opts.validate()?;
    let labels = embeddings.labels().to_vec();
    let mut per_split: Vec<Vec<F>> = Vec::with_capacity(opts.splits);
    let mut curves = Vec::new();

    let mut cmc_sum: Vec<F> = Vec::new();
    let mut cmc_count = 0usize;
    let mut pooled_positives = Vec::new();
    let mut pooled_negatives = Vec::new();
    let mut pooled_dir_points: Option<Vec<(F, F)>> = None;
    let mut pooled_unknown: Vec<F> = Vec::new();
    let mut pooled_known: Vec<(F, bool)> = Vec::new();

    for s in 0..opts.splits {
        let split_seed = opts.seed + s as u64;
        match protocol {
            Protocol::Classification => {
                let plan = stratified_split(&labels, opts.test_fraction, split_seed)?;
                let train = embeddings.subset(&plan.train_indices);
                let test = embeddings.subset(&plan.test_indices);
                per_split.push(vec![classify_accuracy(&train, &test)?]);
            }
            Protocol::ClosedSet => {
                let plan = identity_split(&labels, opts.test_fraction, split_seed)?;
                let test = embeddings.subset(&plan.test_indices);
                let (rank1, cmcs) =
                    closed_set_trials(&test, opts.trials, opts.seed, opts.max_rank)?;
                for cmc in &cmcs {
                    if cmc_sum.is_empty() {
                        cmc_sum = vec![F::zero(); cmc.len()];
                    }
                    for (acc, &v) in cmc_sum.iter_mut().zip(cmc) {
                        *acc = *acc + v;
                    }
                    cmc_count += 1;
                }
                per_split.push(rank1);
            }
            Protocol::OpenSet => {
                let plan = identity_split(&labels, opts.test_fraction, split_seed)?;
                let test = embeddings.subset(&plan.test_indices);
                let (dirs, mut unknown, mut known) =
                    open_trials_scored(&test, opts.trials, opts.far, opts.seed)?;
                pooled_unknown.append(&mut unknown);
                pooled_known.append(&mut known);
                per_split.push(dirs);
            }
            Protocol::Verification => {
                let plan = identity_split(&labels, opts.test_fraction, split_seed)?;
                let test = embeddings.subset(&plan.test_indices);
                let (positives, negatives) = pooled_verification_scores(&test)?;
                let out = tar_at_far(&positives, &negatives, opts.far)?;
                per_split.push(vec![out.tar]);
                pooled_positives.extend(positives);
                pooled_negatives.extend(negatives);
            }
        }
    }

    match protocol {
        Protocol::ClosedSet if cmc_count > 0 => {
            let n = F::of(cmc_count as f64);
            curves.push(Curve {
                name: "cmc",
                x_label: "rank",
                y_label: "accuracy",
                points: cmc_sum
                    .iter()
                    .enumerate()
                    .map(|(k, &v)| (F::of((k + 1) as f64), v / n))
                    .collect(),
            });
        }
        Protocol::OpenSet => {
            pooled_dir_points = Some(staircase_envelope(sweep_dir(
                &pooled_unknown,
                &pooled_known,
            )));
        }
        Protocol::Verification => {
            let roc = tar_at_far(&pooled_positives, &pooled_negatives, opts.far)?;
            curves.push(Curve {
                name: "roc",
                x_label: "far",
                y_label: "tar",
                points: staircase_envelope(roc.curve),
            });
        }
        _ => {}
    }
    if let Some(points) = pooled_dir_points {
        curves.push(Curve {
            name: "dir_sweep",
            x_label: "far",
            y_label: "dir",
            points,
        });
    }

    let values: Vec<F> = per_split.iter().flatten().copied().collect();
    let (mean, std) = mean_std(&values);
    Ok(EvalReport {
        protocol,
        splits: opts.splits,
        trials: opts.trials,
        far: opts.far,
        test_fraction: opts.test_fraction,
        seed: opts.seed,
        per_split,
        mean,
        std,
        curves,
    })
}

/// Evaluate a model trained on one dataset against another: embed `dataset`
/// with `net` and run the closed-set, open-set and verification protocols
/// on its identity-split test side.
pub fn transfer_eval<F: Real>(
    net: &Network<F>,
    dataset: &Dataset<F>,
    opts: &ProtocolOptions<F>,
) -> Result<Vec<EvalReport<F>>> {
    if dataset.feature_dim() != net.config().input_dim {
        return Err(Error::DimensionMismatch {
            expected: net.config().input_dim,
            got: dataset.feature_dim(),
        });
    }
    let embeddings = embed_dataset(net, dataset)?;
    [Protocol::ClosedSet, Protocol::OpenSet, Protocol::Verification]
        .iter()
        .map(|&p| run_protocol(&embeddings, p, opts))
        .collect()
}
