//! Seeded synthetic data: feature vectors, simulated annotator votes and the
//! latent label distribution each sample's votes were drawn from.
//!
//! Features of a sample of class `c` in group `g` are `center_c + shift_g +
//! noise`. Annotators see the scene without the group shift: their latent
//! distribution mixes a point mass on `c` with the Gaussian class posterior of
//! the unshifted features, with mixing weight `1 - exp(-ambiguity)`. Votes are
//! independent draws from that latent distribution.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::labels::{
    distributional_label, majority_label, tally_votes, vote_entropy, ClassDistribution, VoteRecord,
};
use crate::rng::{derive_seed, stream_rng, StreamRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub group_id: String,
    /// Number of samples to draw for each class.
    pub samples_per_class: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub class_count: usize,
    pub feature_dim: usize,
    pub groups: Vec<GroupSpec>,
    pub annotators: usize,
    /// Distance scale between class centers.
    pub class_separation: f64,
    /// 0 gives unanimous votes; larger values spread the latent distribution.
    pub ambiguity: f64,
    /// Length of each group's feature-space offset.
    #[serde(default)]
    pub group_shift: f64,
    /// Standard deviation of the isotropic feature noise.
    #[serde(default = "default_noise")]
    pub feature_noise: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_noise() -> f64 {
    1.0
}

impl GeneratorConfig {
    /// Every group gets `per_class` samples of each class.
    pub fn balanced(
        class_count: usize,
        feature_dim: usize,
        group_ids: &[&str],
        per_class: usize,
    ) -> Self {
        Self {
            class_count,
            feature_dim,
            groups: group_ids
                .iter()
                .map(|g| GroupSpec {
                    group_id: g.to_string(),
                    samples_per_class: vec![per_class; class_count],
                })
                .collect(),
            annotators: 10,
            class_separation: 3.0,
            ambiguity: 1.0,
            group_shift: 0.0,
            feature_noise: 1.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_count < 2 {
            return Err(Error::config("class_count must be at least 2"));
        }
        if self.feature_dim == 0 {
            return Err(Error::config("feature_dim must be positive"));
        }
        // centers lie on a sphere; in one dimension it has only two points
        if self.feature_dim == 1 && self.class_count > 2 {
            return Err(Error::config(format!(
                "{} classes exceed the capacity of a one-dimensional feature space",
                self.class_count
            )));
        }
        if self.annotators == 0 {
            return Err(Error::config("annotators must be at least 1"));
        }
        if !(self.class_separation > 0.0 && self.class_separation.is_finite()) {
            return Err(Error::config("class_separation must be positive"));
        }
        if !(self.ambiguity >= 0.0 && self.ambiguity.is_finite()) {
            return Err(Error::config("ambiguity must be finite and non-negative"));
        }
        if !(self.group_shift >= 0.0 && self.group_shift.is_finite()) {
            return Err(Error::config("group_shift must be finite and non-negative"));
        }
        if !(self.feature_noise > 0.0 && self.feature_noise.is_finite()) {
            return Err(Error::config("feature_noise must be positive"));
        }
        if self.groups.is_empty() {
            return Err(Error::config("at least one group is required"));
        }
        let mut seen = BTreeSet::new();
        for g in &self.groups {
            if !seen.insert(g.group_id.as_str()) {
                return Err(Error::config(format!("duplicate group id {}", g.group_id)));
            }
            if g.samples_per_class.len() != self.class_count {
                return Err(Error::config(format!(
                    "group {}: samples_per_class has {} entries, expected {}",
                    g.group_id,
                    g.samples_per_class.len(),
                    self.class_count
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub record: VoteRecord,
    pub features: Vec<f64>,
    /// Distribution the votes were drawn from, when known.
    pub latent: Option<ClassDistribution>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub class_count: usize,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = &VoteRecord> {
        self.samples.iter().map(|s| &s.record)
    }

    fn subset(&self, samples: Vec<Sample>) -> Dataset {
        Dataset {
            class_count: self.class_count,
            samples,
        }
    }

    /// SHA-256 over sample ids, groups, votes and feature bit patterns.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.class_count as u64).to_le_bytes());
        for s in &self.samples {
            h.update(s.record.sample_id.as_bytes());
            h.update([0]);
            h.update(s.record.group_id.as_bytes());
            h.update([0]);
            for &v in &s.record.votes {
                h.update((v as u64).to_le_bytes());
            }
            h.update([1]);
            for &f in &s.features {
                h.update(f.to_bits().to_le_bytes());
            }
            h.update([2]);
        }
        hex::encode(h.finalize())
    }
}

const CENTER_STREAM: u64 = 0;
const GROUP_STREAM: u64 = 1;
const SAMPLE_STREAM: u64 = 2;

fn unit_vector(rng: &mut StreamRng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Class centers on a sphere of radius `class_separation / sqrt(2)`, redrawn
/// until they are pairwise distinct.
fn class_centers(config: &GeneratorConfig) -> Vec<Vec<f64>> {
    let radius = config.class_separation / std::f64::consts::SQRT_2;
    let mut rng = stream_rng(derive_seed(config.seed, CENTER_STREAM), 0);
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(config.class_count);
    while centers.len() < config.class_count {
        let c: Vec<f64> = unit_vector(&mut rng, config.feature_dim)
            .into_iter()
            .map(|x| x * radius)
            .collect();
        let distinct = centers
            .iter()
            .all(|o| o.iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum::<f64>() > 1e-12);
        if distinct {
            centers.push(c);
        }
    }
    centers
}

fn sample_categorical(rng: &mut StreamRng, probs: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (j, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = j;
            acc += p;
            if u < acc {
                return j;
            }
        }
    }
    last_positive
}

fn latent_distribution(
    config: &GeneratorConfig,
    centers: &[Vec<f64>],
    unshifted: &[f64],
    class: usize,
) -> ClassDistribution {
    let weight = 1.0 - (-config.ambiguity).exp();
    let var = config.feature_noise * config.feature_noise;
    let scores: Vec<f64> = centers
        .iter()
        .map(|c| {
            -c.iter()
                .zip(unshifted)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                / (2.0 * var)
        })
        .collect();
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let probs = exps
        .iter()
        .enumerate()
        .map(|(j, e)| {
            let point = if j == class { 1.0 - weight } else { 0.0 };
            point + weight * (e / sum)
        })
        .collect();
    ClassDistribution::new_unchecked(probs)
}

/// Draws a data set. Sample `i` uses its own random stream, so output is
/// independent of generation order.
pub fn generate(config: &GeneratorConfig) -> Result<Dataset> {
    config.validate()?;
    let centers = class_centers(config);
    let shifts: Vec<Vec<f64>> = (0..config.groups.len())
        .map(|g| {
            let mut rng = stream_rng(derive_seed(config.seed, GROUP_STREAM), g as u64);
            unit_vector(&mut rng, config.feature_dim)
                .into_iter()
                .map(|x| x * config.group_shift)
                .collect()
        })
        .collect();
    let sample_seed = derive_seed(config.seed, SAMPLE_STREAM);

    let total: usize = config
        .groups
        .iter()
        .flat_map(|g| &g.samples_per_class)
        .sum();
    let width = total.saturating_sub(1).to_string().len().max(6);
    let mut samples = Vec::with_capacity(total);
    for (g, group) in config.groups.iter().enumerate() {
        for (class, &count) in group.samples_per_class.iter().enumerate() {
            for _ in 0..count {
                let index = samples.len();
                let mut rng = stream_rng(sample_seed, index as u64);
                let unshifted: Vec<f64> = centers[class]
                    .iter()
                    .map(|c| c + config.feature_noise * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let latent = latent_distribution(config, &centers, &unshifted, class);
                let votes = (0..config.annotators)
                    .map(|_| sample_categorical(&mut rng, latent.as_slice()))
                    .collect();
                let features = unshifted
                    .iter()
                    .zip(&shifts[g])
                    .map(|(x, s)| x + s)
                    .collect();
                samples.push(Sample {
                    record: VoteRecord::new(
                        format!("s{index:0width$}"),
                        group.group_id.clone(),
                        votes,
                    ),
                    features,
                    latent: Some(latent),
                });
            }
        }
    }
    Ok(Dataset {
        class_count: config.class_count,
        samples,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_groups: Vec<String>,
    pub holdout_groups: Vec<String>,
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_val_fraction() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSplit {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

/// Group-level split: training groups go to `train`; holdout samples are
/// assigned to validation with probability `val_fraction`, else to test.
pub fn split(data: &Dataset, spec: &SplitSpec) -> Result<DataSplit> {
    if !(0.0..=1.0).contains(&spec.val_fraction) {
        return Err(Error::Split(format!(
            "val_fraction {} outside [0, 1]",
            spec.val_fraction
        )));
    }
    let train: BTreeSet<&str> = spec.train_groups.iter().map(String::as_str).collect();
    let holdout: BTreeSet<&str> = spec.holdout_groups.iter().map(String::as_str).collect();
    if let Some(g) = train.intersection(&holdout).next() {
        return Err(Error::Split(format!(
            "group {g} is both a training and a holdout group"
        )));
    }
    let mut rng = stream_rng(derive_seed(spec.seed, 3), 0);
    let (mut tr, mut va, mut te) = (Vec::new(), Vec::new(), Vec::new());
    for s in &data.samples {
        let g = s.record.group_id.as_str();
        if train.contains(g) {
            tr.push(s.clone());
        } else if holdout.contains(g) {
            if rng.gen::<f64>() < spec.val_fraction {
                va.push(s.clone());
            } else {
                te.push(s.clone());
            }
        } else {
            return Err(Error::Split(format!(
                "sample {} belongs to unknown group {g}",
                s.record.sample_id
            )));
        }
    }
    Ok(DataSplit {
        train: data.subset(tr),
        validation: data.subset(va),
        test: data.subset(te),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassFrequencyRow {
    /// Zero-based class index.
    pub class: usize,
    /// Samples of this class in train, validation and test.
    pub counts: [usize; 3],
    /// `counts / total`; all zero for an unsupported class.
    pub fractions: [f64; 3],
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassFrequencyReport {
    pub rows: Vec<ClassFrequencyRow>,
    pub set_totals: [usize; 3],
}

/// Share of each majority class falling into train, validation and test.
pub fn class_frequency_report(
    train: &Dataset,
    val: &Dataset,
    test: &Dataset,
) -> Result<ClassFrequencyReport> {
    let k = train.class_count;
    let mut counts = vec![[0usize; 3]; k];
    let mut set_totals = [0usize; 3];
    for (set, data) in [train, val, test].into_iter().enumerate() {
        for record in data.records() {
            let winner = majority_label(&tally_votes(record, k)?)?.winner;
            counts[winner][set] += 1;
            set_totals[set] += 1;
        }
    }
    let rows = counts
        .into_iter()
        .enumerate()
        .map(|(class, c)| {
            let total: usize = c.iter().sum();
            let fractions = if total == 0 {
                [0.0; 3]
            } else {
                c.map(|v| v as f64 / total as f64)
            };
            ClassFrequencyRow {
                class,
                counts: c,
                fractions,
                total,
            }
        })
        .collect();
    Ok(ClassFrequencyReport { rows, set_totals })
}

/// A named subset of classes, e.g. the urban classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassGroup {
    pub name: String,
    pub classes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyHistogram {
    pub name: String,
    /// Upper edge of each bucket; the first bucket is `[0, edge_0]`.
    pub bucket_upper: Vec<f64>,
    pub counts: Vec<usize>,
    pub n: usize,
    pub mean_entropy: Option<f64>,
}

/// Histogram of vote entropies for samples whose majority class lies in each
/// group. Buckets split `[0, ln min(J, K)]` evenly.
pub fn entropy_summary(
    data: &Dataset,
    groups: &[ClassGroup],
    buckets: usize,
) -> Result<Vec<EntropyHistogram>> {
    if buckets == 0 {
        return Err(Error::domain("entropy histogram needs at least one bucket"));
    }
    let k = data.class_count;
    let max_votes = data.records().map(|r| r.votes.len()).max().unwrap_or(1);
    let max_entropy = (max_votes.min(k) as f64).ln();
    let width = if max_entropy > 0.0 {
        max_entropy / buckets as f64
    } else {
        1.0
    };
    let mut per_winner: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for record in data.records() {
        let counts = tally_votes(record, k)?;
        let winner = majority_label(&counts)?.winner;
        per_winner
            .entry(winner)
            .or_default()
            .push(vote_entropy(&distributional_label(&counts)?));
    }
    groups
        .iter()
        .map(|group| {
            if group.classes.is_empty() {
                return Err(Error::domain(format!(
                    "class group {} is empty",
                    group.name
                )));
            }
            let mut counts = vec![0usize; buckets];
            let mut sum = 0.0;
            let mut n = 0;
            for h in group
                .classes
                .iter()
                .filter_map(|c| per_winner.get(c))
                .flatten()
            {
                let b = if *h <= 0.0 {
                    0
                } else {
                    ((h / width).ceil() as usize).clamp(1, buckets) - 1
                };
                counts[b] += 1;
                sum += h;
                n += 1;
            }
            Ok(EntropyHistogram {
                name: group.name.clone(),
                bucket_upper: (1..=buckets).map(|b| b as f64 * width).collect(),
                counts,
                n,
                mean_entropy: (n > 0).then(|| sum / n as f64),
            })
        })
        .collect()
}
