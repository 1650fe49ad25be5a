//! Label construction from annotator votes.
//!
//! Class indices are zero-based throughout the library. File formats and
//! rendered reports use one-based indices; the conversion happens in [`crate::io`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::ConfusionMatrix;

/// Tolerance on the sum of a [`ClassDistribution`].
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

/// Raw votes for one sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteRecord {
    pub sample_id: String,
    pub group_id: String,
    /// One class index per annotator.
    pub votes: Vec<usize>,
}

impl VoteRecord {
    pub fn new(
        sample_id: impl Into<String>,
        group_id: impl Into<String>,
        votes: Vec<usize>,
    ) -> Self {
        Self {
            sample_id: sample_id.into(),
            group_id: group_id.into(),
            votes,
        }
    }

    /// Expands a count vector into votes ordered by class.
    pub fn from_counts(
        sample_id: impl Into<String>,
        group_id: impl Into<String>,
        counts: &VoteCounts,
    ) -> Self {
        let votes = counts
            .as_slice()
            .iter()
            .enumerate()
            .flat_map(|(class, &n)| std::iter::repeat_n(class, n as usize))
            .collect();
        Self::new(sample_id, group_id, votes)
    }
}

/// Per-class vote tally of one sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VoteCounts(Vec<u32>);

impl VoteCounts {
    pub fn new(counts: Vec<u32>) -> Self {
        Self(counts)
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    pub fn class_count(&self) -> usize {
        self.0.len()
    }

    /// Total number of votes, `M`.
    pub fn total(&self) -> u64 {
        self.0.iter().map(|&c| u64::from(c)).sum()
    }
}

/// A probability vector over `K` classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ClassDistribution(Vec<f64>);

impl ClassDistribution {
    /// Validates that `probs` lies on the simplex.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::domain(
                "class distribution must have at least one entry",
            ));
        }
        if let Some((i, p)) = probs
            .iter()
            .enumerate()
            .find(|(_, p)| !(0.0..=1.0).contains(*p))
        {
            return Err(Error::domain(format!(
                "probability {p} at class {i} is outside [0, 1]"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(Error::domain(format!(
                "probabilities sum to {sum}, expected 1"
            )));
        }
        Ok(Self(probs))
    }

    /// Wraps a vector already known to be on the simplex.
    pub(crate) fn new_unchecked(probs: Vec<f64>) -> Self {
        debug_assert!(!probs.is_empty());
        Self(probs)
    }

    pub fn one_hot(class_count: usize, class: usize) -> Result<Self> {
        if class >= class_count {
            return Err(Error::domain(format!(
                "class {class} out of range for {class_count} classes"
            )));
        }
        let mut probs = vec![0.0; class_count];
        probs[class] = 1.0;
        Ok(Self(probs))
    }

    pub fn uniform(class_count: usize) -> Result<Self> {
        if class_count == 0 {
            return Err(Error::domain(
                "uniform distribution needs at least one class",
            ));
        }
        Ok(Self(vec![1.0 / class_count as f64; class_count]))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn class_count(&self) -> usize {
        self.0.len()
    }

    /// Index of the largest probability; the lowest index wins ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn max(&self) -> f64 {
        self.0[self.argmax()]
    }
}

impl TryFrom<Vec<f64>> for ClassDistribution {
    type Error = Error;

    fn try_from(value: Vec<f64>) -> Result<Self> {
        Self::new(value)
    }
}

impl From<ClassDistribution> for Vec<f64> {
    fn from(value: ClassDistribution) -> Self {
        value.0
    }
}

/// Lowest index attaining the maximum.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MajorityResult {
    pub label: ClassDistribution,
    pub winner: usize,
    /// At least two classes reached the maximum count.
    pub tied: bool,
}

/// Counts the votes of `record` over `k` classes.
pub fn tally_votes(record: &VoteRecord, k: usize) -> Result<VoteCounts> {
    let mut counts = vec![0u32; k];
    for &vote in &record.votes {
        match counts.get_mut(vote) {
            Some(slot) => *slot += 1,
            None => {
                return Err(Error::domain(format!(
                    "sample {}: vote for class {} outside 1..={k}",
                    record.sample_id,
                    vote + 1
                )))
            }
        }
    }
    Ok(VoteCounts(counts))
}

/// One-hot label at the most voted class. Ties go to the lowest class index
/// and set [`MajorityResult::tied`].
pub fn majority_label(counts: &VoteCounts) -> Result<MajorityResult> {
    let slice = counts.as_slice();
    let top = slice.iter().copied().max().unwrap_or(0);
    if top == 0 {
        return Err(Error::domain("majority vote of an empty tally"));
    }
    let winner = slice.iter().position(|&c| c == top).unwrap_or_default();
    let tied = slice.iter().filter(|&&c| c == top).count() > 1;
    Ok(MajorityResult {
        label: ClassDistribution::one_hot(slice.len(), winner)?,
        winner,
        tied,
    })
}

/// Empirical vote distribution `counts / M`.
pub fn distributional_label(counts: &VoteCounts) -> Result<ClassDistribution> {
    let total = counts.total();
    if total == 0 {
        return Err(Error::domain("distributional label of an empty tally"));
    }
    let m = total as f64;
    Ok(ClassDistribution::new_unchecked(
        counts
            .as_slice()
            .iter()
            .map(|&c| f64::from(c) / m)
            .collect(),
    ))
}

/// Mixes `label` with the uniform distribution: `alpha / K + (1 - alpha) * label`.
pub fn smooth_label(label: &ClassDistribution, alpha: f64) -> Result<ClassDistribution> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::domain(format!(
            "smoothing alpha {alpha} outside [0, 1]"
        )));
    }
    let uniform_mass = alpha / label.class_count() as f64;
    Ok(ClassDistribution::new_unchecked(
        label
            .as_slice()
            .iter()
            .map(|&p| uniform_mass + (1.0 - alpha) * p)
            .collect(),
    ))
}

/// Shannon entropy in nats. Zero-probability classes contribute nothing.
pub fn vote_entropy(label: &ClassDistribution) -> f64 {
    let h: f64 = label
        .as_slice()
        .iter()
        .map(|&p| if p > 0.0 { -p * p.ln() } else { 0.0 })
        .sum();
    // -p ln p summed over a one-hot vector is -0.0
    h.max(0.0)
}

/// Majority-vote class against individual votes: entry `(r, c)` counts votes
/// for class `c` among samples whose majority winner is `r`.
pub fn voter_confusion(records: &[VoteRecord], k: usize) -> Result<ConfusionMatrix> {
    if records.is_empty() {
        return Err(Error::domain("voter confusion of an empty record set"));
    }
    let mut matrix = ConfusionMatrix::zeros(k);
    for record in records {
        let counts = tally_votes(record, k)?;
        let winner = majority_label(&counts)?.winner;
        for &vote in &record.votes {
            matrix.increment(winner, vote);
        }
    }
    Ok(matrix)
}

/// Restricts votes to a subset of classes.
///
/// Samples whose majority (over all their votes) falls outside `classes` are
/// dropped. Remaining samples lose their out-of-subset votes, so `M` may
/// differ between samples afterwards. Class indices are not remapped.
pub fn filter_to_classes(
    records: &[VoteRecord],
    k: usize,
    classes: &[usize],
) -> Result<Vec<VoteRecord>> {
    if classes.is_empty() {
        return Err(Error::domain("class filter must keep at least one class"));
    }
    let mut keep = vec![false; k];
    for &c in classes {
        *keep
            .get_mut(c)
            .ok_or_else(|| Error::domain(format!("filter class {} outside 1..={k}", c + 1)))? =
            true;
    }
    let mut out = Vec::with_capacity(records.len());
    for record in records {
        let winner = majority_label(&tally_votes(record, k)?)?.winner;
        if !keep[winner] {
            continue;
        }
        out.push(VoteRecord {
            sample_id: record.sample_id.clone(),
            group_id: record.group_id.clone(),
            votes: record.votes.iter().copied().filter(|&v| keep[v]).collect(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts_of(v: &[u32]) -> VoteCounts {
        VoteCounts::new(v.to_vec())
    }

    // Converts one-based vote lists from the worked examples.
    fn record(votes: &[usize]) -> VoteRecord {
        VoteRecord::new("s", "g", votes.iter().map(|v| v - 1).collect())
    }

    #[test]
    fn tally_counts_each_class() {
        let c = tally_votes(&record(&[3, 3, 3, 7, 3, 3, 7, 3, 3, 7]), 10).unwrap();
        assert_eq!(c.as_slice(), &[0, 0, 7, 0, 0, 0, 3, 0, 0, 0]);

        let c = tally_votes(&record(&[8; 10]), 10).unwrap();
        assert_eq!(c.as_slice()[7], 10);
        assert_eq!(c.total(), 10);

        let c = tally_votes(&record(&[1, 2]), 17).unwrap();
        let mut expected = vec![0; 17];
        expected[0] = 1;
        expected[1] = 1;
        assert_eq!(c.as_slice(), expected.as_slice());
    }

    #[test]
    fn tally_rejects_out_of_range_vote_and_names_sample() {
        let r = VoteRecord::new("patch-42", "g", vec![0, 5]);
        let err = tally_votes(&r, 5).unwrap_err();
        assert!(matches!(err, Error::InputDomain(_)));
        assert!(err.to_string().contains("patch-42"));
    }

    #[test]
    fn majority_examples() {
        let m = majority_label(&counts_of(&[0, 0, 7, 0, 0, 0, 3, 0, 0, 0])).unwrap();
        assert_eq!(m.winner, 2);
        assert!(!m.tied);
        assert_eq!(m.label.as_slice()[2], 1.0);

        let mut tie = vec![0; 17];
        tie[0] = 5;
        tie[1] = 5;
        let m = majority_label(&counts_of(&tie)).unwrap();
        assert_eq!(m.winner, 0);
        assert!(m.tied);

        let mut last = vec![0; 10];
        last[9] = 10;
        let m = majority_label(&counts_of(&last)).unwrap();
        assert_eq!(m.winner, 9);
        assert_eq!(m.label.as_slice().iter().filter(|&&p| p == 1.0).count(), 1);
    }

    #[test]
    fn majority_of_empty_tally_fails() {
        assert!(majority_label(&counts_of(&[0, 0, 0])).is_err());
        assert!(distributional_label(&counts_of(&[0, 0])).is_err());
    }

    #[test]
    fn distributional_examples() {
        assert_eq!(
            distributional_label(&counts_of(&[2, 8]))
                .unwrap()
                .as_slice(),
            &[0.2, 0.8]
        );
        let mut unanimous = vec![0; 17];
        unanimous[0] = 10;
        let d = distributional_label(&counts_of(&unanimous)).unwrap();
        assert_eq!(d, ClassDistribution::one_hot(17, 0).unwrap());
        assert_eq!(
            distributional_label(&counts_of(&[3, 3, 4]))
                .unwrap()
                .as_slice(),
            &[0.3, 0.3, 0.4]
        );
    }

    #[test]
    fn smoothing_examples() {
        let y = ClassDistribution::one_hot(10, 1).unwrap();
        let s = smooth_label(&y, 0.1).unwrap();
        for (i, &p) in s.as_slice().iter().enumerate() {
            assert_eq!(p, if i == 1 { 0.91 } else { 0.01 });
        }

        let y = ClassDistribution::new(vec![0.2, 0.5, 0.3]).unwrap();
        assert_eq!(smooth_label(&y, 0.0).unwrap(), y);

        let y = ClassDistribution::new(vec![0.3, 0.7]).unwrap();
        let s = smooth_label(&y, 0.1).unwrap();
        assert!((s.as_slice()[0] - 0.32).abs() < 1e-15);
        assert!((s.as_slice()[1] - 0.68).abs() < 1e-15);

        assert!(smooth_label(&y, 1.5).is_err());
        assert!(smooth_label(&y, -0.1).is_err());
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(
            vote_entropy(&ClassDistribution::one_hot(10, 3).unwrap()),
            0.0
        );
        let even = ClassDistribution::new(vec![0.5, 0.5, 0.0, 0.0]).unwrap();
        assert!((vote_entropy(&even) - std::f64::consts::LN_2).abs() < 1e-15);
        // -0.3 ln 0.3 - 0.7 ln 0.7
        let d = ClassDistribution::new(vec![0.3, 0.7]).unwrap();
        assert!((vote_entropy(&d) - 0.610_864_302_054_893_5).abs() < 1e-12);
    }

    #[test]
    fn voter_confusion_examples() {
        let m = voter_confusion(&[record(&[2; 10])], 10).unwrap();
        assert_eq!(m.get(1, 1), 10);
        assert_eq!(m.total(), 10);

        let m = voter_confusion(&[record(&[3, 3, 3, 7, 3, 3, 7, 3, 3, 7])], 10).unwrap();
        assert_eq!(m.get(2, 2), 7);
        assert_eq!(m.get(2, 6), 3);
        assert_eq!(m.row_sums()[2], 10);

        let m = voter_confusion(
            &[record(&[1; 10]), record(&[2, 2, 2, 2, 2, 2, 1, 1, 3, 3])],
            3,
        )
        .unwrap();
        assert_eq!(m.row_sums(), vec![10, 10, 0]);

        assert!(voter_confusion(&[], 3).is_err());
    }

    #[test]
    fn class_filter_drops_votes_and_samples() {
        let records = vec![record(&[1, 1, 1, 2, 3]), record(&[3, 3, 3, 1, 1])];
        let kept = filter_to_classes(&records, 3, &[0, 1]).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].votes, vec![0, 0, 0, 1]);
        let d = distributional_label(&tally_votes(&kept[0], 3).unwrap()).unwrap();
        assert_eq!(d.as_slice(), &[0.75, 0.25, 0.0]);
    }

    #[test]
    fn from_counts_round_trips() {
        let c = counts_of(&[0, 2, 1]);
        let r = VoteRecord::from_counts("a", "b", &c);
        assert_eq!(r.votes, vec![1, 1, 2]);
        assert_eq!(tally_votes(&r, 3).unwrap(), c);
    }

    #[test]
    fn distribution_validation() {
        assert!(ClassDistribution::new(vec![0.5, 0.6]).is_err());
        assert!(ClassDistribution::new(vec![-0.1, 1.1]).is_err());
        assert!(ClassDistribution::new(vec![]).is_err());
        assert!(ClassDistribution::new(vec![0.25, 0.75]).is_ok());
        assert_eq!(
            ClassDistribution::new(vec![0.4, 0.4, 0.2])
                .unwrap()
                .argmax(),
            0
        );
    }
}
