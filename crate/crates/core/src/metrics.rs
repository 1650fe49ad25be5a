//! Agreement and generalization scores against majority-vote labels.

use serde::{Deserialize, Serialize};

use crate::calibration::PredictionRecord;
use crate::error::{Error, Result};
use crate::labels::ClassDistribution;
use crate::model::loss_ce;

/// Square count matrix; rows are reference classes, columns are compared classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(k: usize) -> Self {
        Self {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::domain(
                "confusion matrix rows must all have length K",
            ));
        }
        Ok(Self {
            k,
            counts: rows.concat(),
        })
    }

    pub fn class_count(&self) -> usize {
        self.k
    }

    pub fn get(&self, row: usize, col: usize) -> u64 {
        self.counts[row * self.k + col]
    }

    pub(crate) fn increment(&mut self, row: usize, col: usize) {
        self.counts[row * self.k + col] += 1;
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u64]> {
        self.counts.chunks_exact(self.k.max(1))
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|i| self.get(i, i)).sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.rows().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        (0..self.k)
            .map(|c| (0..self.k).map(|r| self.get(r, c)).sum())
            .collect()
    }

    /// CSV with a one-based class header row and column.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("true\\pred");
        for c in 1..=self.k {
            out.push_str(&format!(",{c}"));
        }
        out.push('\n');
        for (r, row) in self.rows().enumerate() {
            out.push_str(&(r + 1).to_string());
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Prediction against majority vote.
pub fn confusion(records: &[PredictionRecord], k: usize) -> Result<ConfusionMatrix> {
    if records.is_empty() {
        return Err(Error::domain("confusion matrix of an empty record set"));
    }
    let mut cm = ConfusionMatrix::zeros(k);
    for r in records {
        if r.true_class >= k || r.predicted_class >= k {
            return Err(Error::domain(format!(
                "sample {}: class outside 1..={k}",
                r.sample_id
            )));
        }
        cm.increment(r.true_class, r.predicted_class);
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracySuite {
    pub oa: f64,
    pub maa: f64,
    pub waa: f64,
}

/// Overall, macro-average and weighted-average accuracy.
///
/// MAA is the mean recall over classes with non-zero support. WAA weights
/// each class's one-vs-rest accuracy `(TP + TN) / n` by its support.
pub fn accuracy_suite(cm: &ConfusionMatrix) -> Result<AccuracySuite> {
    let n = cm.total();
    if n == 0 {
        return Err(Error::domain("accuracy of an empty confusion matrix"));
    }
    let nf = n as f64;
    let rows = cm.row_sums();
    let cols = cm.col_sums();
    let mut recall_sum = 0.0;
    let mut supported = 0usize;
    let mut waa = 0.0;
    for k in 0..cm.class_count() {
        if rows[k] == 0 {
            continue;
        }
        let tp = cm.get(k, k);
        supported += 1;
        recall_sum += tp as f64 / rows[k] as f64;
        let tn = n + tp - rows[k] - cols[k];
        waa += rows[k] as f64 / nf * ((tp + tn) as f64 / nf);
    }
    Ok(AccuracySuite {
        oa: cm.trace() as f64 / nf,
        maa: recall_sum / supported as f64,
        waa,
    })
}

/// Cohen's kappa. Defined as 0 when chance agreement is 1.
pub fn kappa(cm: &ConfusionMatrix) -> f64 {
    let n = cm.total();
    if n == 0 {
        return 0.0;
    }
    let nf = n as f64;
    let p_o = cm.trace() as f64 / nf;
    let p_e: f64 = cm
        .row_sums()
        .iter()
        .zip(cm.col_sums())
        .map(|(&r, c)| r as f64 * c as f64)
        .sum::<f64>()
        / (nf * nf);
    if p_e >= 1.0 {
        return 0.0;
    }
    (p_o - p_e) / (1.0 - p_e)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossEntropies {
    pub ce_onehot: f64,
    pub ce_distr: f64,
    /// Samples with an infinite cross-entropy against either label.
    pub inf_ce_count: usize,
}

/// Mean test cross-entropy against the majority one-hot and the vote
/// distribution. Any infinite sample makes the corresponding mean infinite.
pub fn generalization_ce(records: &[PredictionRecord]) -> Result<CrossEntropies> {
    if records.is_empty() {
        return Err(Error::domain("cross-entropy of an empty record set"));
    }
    let mut onehot = 0.0;
    let mut distr = 0.0;
    let mut inf = 0;
    for r in records {
        let y_max = ClassDistribution::one_hot(r.pred_dist.class_count(), r.true_class)?;
        let a = loss_ce(&y_max, &r.pred_dist);
        let b = loss_ce(&r.true_dist, &r.pred_dist);
        if a.is_infinite() || b.is_infinite() {
            inf += 1;
        }
        onehot += a;
        distr += b;
    }
    let n = records.len() as f64;
    Ok(CrossEntropies {
        ce_onehot: onehot / n,
        ce_distr: distr / n,
        inf_ce_count: inf,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub oa: f64,
    pub maa: f64,
    pub waa: f64,
    pub kappa: f64,
    /// `null` in JSON when infinite.
    #[serde(with = "infinite_as_null")]
    pub ce_onehot: f64,
    #[serde(with = "infinite_as_null")]
    pub ce_distr: f64,
    pub n: usize,
    pub inf_ce_count: usize,
}

pub fn score(records: &[PredictionRecord], k: usize) -> Result<ScoreReport> {
    let cm = confusion(records, k)?;
    let acc = accuracy_suite(&cm)?;
    let ce = generalization_ce(records)?;
    Ok(ScoreReport {
        oa: acc.oa,
        maa: acc.maa,
        waa: acc.waa,
        kappa: kappa(&cm),
        ce_onehot: ce.ce_onehot,
        ce_distr: ce.ce_distr,
        n: records.len(),
        inf_ce_count: ce.inf_ce_count,
    })
}

mod infinite_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}
