//! Confidence binning, calibration errors, reliability tables and
//! temperature scaling.
//!
//! Bins are the right-closed intervals `((m-1)/M, m/M]` for `m = 1..=M`, with
//! the boundaries computed as `m as f64 / M as f64`. Accuracy and confidence
//! of a bin are within-bin means.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::ClassDistribution;
use crate::model::{softmax, LogitVector};

/// Bin counts evaluated by default.
pub const DEFAULT_BIN_SWEEP: [usize; 4] = [10, 15, 20, 25];
/// Bin count of the headline calibration numbers.
pub const DEFAULT_BINS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub sample_id: String,
    pub pred_dist: ClassDistribution,
    pub confidence: f64,
    pub predicted_class: usize,
    /// Majority-vote class.
    pub true_class: usize,
    pub true_dist: ClassDistribution,
}

impl PredictionRecord {
    pub fn new(
        sample_id: impl Into<String>,
        pred_dist: ClassDistribution,
        true_class: usize,
        true_dist: ClassDistribution,
    ) -> Self {
        let predicted_class = pred_dist.argmax();
        Self {
            sample_id: sample_id.into(),
            confidence: pred_dist.as_slice()[predicted_class],
            predicted_class,
            pred_dist,
            true_class,
            true_dist,
        }
    }

    pub fn correct(&self) -> bool {
        self.predicted_class == self.true_class
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinStatistics {
    /// One-based bin index `m`.
    pub index: usize,
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    /// `None` for empty bins.
    pub mean_accuracy: Option<f64>,
    pub mean_confidence: Option<f64>,
}

impl BinStatistics {
    pub fn gap(&self) -> Option<f64> {
        Some((self.mean_accuracy? - self.mean_confidence?).abs())
    }
}

fn bin_bound(m: usize, bins: usize) -> f64 {
    m as f64 / bins as f64
}

/// One-based bin of `value` in `((m-1)/M, m/M]`; `value` must lie in `(0, 1]`.
/// `closed_first` additionally maps 0 into the first bin.
pub(crate) fn bin_of(value: f64, bins: usize, closed_first: bool) -> Option<usize> {
    let in_domain = if closed_first {
        (0.0..=1.0).contains(&value)
    } else {
        value > 0.0 && value <= 1.0
    };
    if !in_domain {
        return None;
    }
    // ceil(v * M) can land one off due to rounding in the product
    let mut m = ((value * bins as f64).ceil() as usize).clamp(1, bins);
    while m > 1 && value <= bin_bound(m - 1, bins) {
        m -= 1;
    }
    while m < bins && value > bin_bound(m, bins) {
        m += 1;
    }
    Some(m)
}

/// Groups records by confidence into `bins` equal-width bins.
pub fn assign_bins(records: &[PredictionRecord], bins: usize) -> Result<Vec<BinStatistics>> {
    if bins == 0 {
        return Err(Error::domain("number of bins must be positive"));
    }
    if records.is_empty() {
        return Err(Error::domain("cannot bin an empty record set"));
    }
    let mut count = vec![0usize; bins];
    let mut correct = vec![0usize; bins];
    let mut conf_sum = vec![0.0; bins];
    for r in records {
        let m = bin_of(r.confidence, bins, false).ok_or_else(|| {
            Error::domain(format!(
                "sample {}: confidence {} outside (0, 1]",
                r.sample_id, r.confidence
            ))
        })? - 1;
        count[m] += 1;
        correct[m] += usize::from(r.correct());
        conf_sum[m] += r.confidence;
    }
    Ok((0..bins)
        .map(|m| {
            let n = count[m];
            let (acc, conf) = if n == 0 {
                (None, None)
            } else {
                (
                    Some(correct[m] as f64 / n as f64),
                    Some(conf_sum[m] / n as f64),
                )
            };
            BinStatistics {
                index: m + 1,
                lower: bin_bound(m, bins),
                upper: bin_bound(m + 1, bins),
                count: n,
                mean_accuracy: acc,
                mean_confidence: conf,
            }
        })
        .collect())
}

fn total_count(bins: &[BinStatistics]) -> usize {
    bins.iter().map(|b| b.count).sum()
}

/// Expected calibration error: count-weighted mean of per-bin |acc - conf|.
pub fn ece(bins: &[BinStatistics]) -> f64 {
    let n = total_count(bins);
    if n == 0 {
        return 0.0;
    }
    bins.iter()
        .filter_map(|b| b.gap().map(|g| b.count as f64 / n as f64 * g))
        .sum()
}

/// Maximum calibration error over non-empty bins.
pub fn mce(bins: &[BinStatistics]) -> f64 {
    bins.iter()
        .filter_map(BinStatistics::gap)
        .fold(0.0, f64::max)
}

/// Static (class-wise) calibration error.
///
/// For every class `k` the records are binned by their predicted probability
/// for `k`. A probability of exactly 0 falls into the first bin.
pub fn sce(records: &[PredictionRecord], bins: usize, k: usize) -> Result<f64> {
    if bins == 0 || k == 0 {
        return Err(Error::domain("bins and class count must be positive"));
    }
    if records.is_empty() {
        return Err(Error::domain("cannot bin an empty record set"));
    }
    let n = records.len() as f64;
    let mut total = 0.0;
    let mut count = vec![0usize; bins];
    let mut hits = vec![0usize; bins];
    let mut prob_sum = vec![0.0; bins];
    for class in 0..k {
        count.iter_mut().for_each(|c| *c = 0);
        hits.iter_mut().for_each(|c| *c = 0);
        prob_sum.iter_mut().for_each(|c| *c = 0.0);
        for r in records {
            let p = *r.pred_dist.as_slice().get(class).ok_or(Error::Shape {
                expected: k,
                actual: r.pred_dist.class_count(),
            })?;
            let m = bin_of(p, bins, true).ok_or_else(|| {
                Error::domain(format!(
                    "sample {}: probability {p} outside [0, 1]",
                    r.sample_id
                ))
            })? - 1;
            count[m] += 1;
            hits[m] += usize::from(r.true_class == class);
            prob_sum[m] += p;
        }
        for m in 0..bins {
            if count[m] == 0 {
                continue;
            }
            let c = count[m] as f64;
            let gap = (hits[m] as f64 / c - prob_sum[m] / c).abs();
            total += c / n * gap;
        }
    }
    Ok(total / k as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityRow {
    pub bin: usize,
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub accuracy: Option<f64>,
    pub confidence: Option<f64>,
    pub gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilitySummary {
    pub n: usize,
    /// Overall accuracy.
    pub accuracy: f64,
    pub mean_confidence: f64,
}

/// Reliability-diagram data: one row per bin plus a summary row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityReport {
    pub rows: Vec<ReliabilityRow>,
    pub summary: ReliabilitySummary,
}

pub fn reliability_data(bins: &[BinStatistics], records: &[PredictionRecord]) -> ReliabilityReport {
    let rows = bins
        .iter()
        .map(|b| ReliabilityRow {
            bin: b.index,
            lower: b.lower,
            upper: b.upper,
            count: b.count,
            accuracy: b.mean_accuracy,
            confidence: b.mean_confidence,
            gap: b.gap(),
        })
        .collect();
    let n = records.len();
    let (accuracy, mean_confidence) = if n == 0 {
        (0.0, 0.0)
    } else {
        let correct = records.iter().filter(|r| r.correct()).count();
        let conf: f64 = records.iter().map(|r| r.confidence).sum();
        (correct as f64 / n as f64, conf / n as f64)
    };
    ReliabilityReport {
        rows,
        summary: ReliabilitySummary {
            n,
            accuracy,
            mean_confidence,
        },
    }
}

impl ReliabilityReport {
    /// CSV with header `bin,lower,upper,count,accuracy,confidence,gap`;
    /// empty bins leave the three mean columns blank.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin,lower,upper,count,accuracy,confidence,gap\n");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.bin,
                r.lower,
                r.upper,
                r.count,
                opt(r.accuracy),
                opt(r.confidence),
                opt(r.gap)
            ));
        }
        let s = &self.summary;
        out.push_str(&format!(
            "summary,0,1,{},{},{},{}\n",
            s.n,
            s.accuracy,
            s.mean_confidence,
            (s.accuracy - s.mean_confidence).abs()
        ));
        out
    }

    /// Bar chart of per-bin accuracy against the identity diagonal, with the
    /// gap to each bin's mean confidence shaded.
    pub fn to_svg(&self) -> String {
        const W: f64 = 400.0;
        const H: f64 = 400.0;
        const PAD: f64 = 40.0;
        let plot = W - 2.0 * PAD;
        let x = |v: f64| PAD + v * plot;
        let y = |v: f64| H - PAD - v * plot;
        let mut svg = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
             <rect x=\"{PAD}\" y=\"{PAD}\" width=\"{plot}\" height=\"{plot}\" fill=\"white\" stroke=\"black\"/>\n"
        );
        for r in &self.rows {
            let (Some(acc), Some(conf)) = (r.accuracy, r.confidence) else {
                continue;
            };
            let width = (r.upper - r.lower) * plot;
            svg.push_str(&format!(
                "<rect class=\"accuracy\" x=\"{:.3}\" y=\"{:.3}\" width=\"{:.3}\" height=\"{:.3}\" fill=\"#3b6fb6\" stroke=\"black\"/>\n",
                x(r.lower),
                y(acc),
                width,
                acc * plot
            ));
            let (lo, hi) = if acc < conf { (acc, conf) } else { (conf, acc) };
            svg.push_str(&format!(
                "<rect class=\"gap\" x=\"{:.3}\" y=\"{:.3}\" width=\"{:.3}\" height=\"{:.3}\" fill=\"#d9534f\" fill-opacity=\"0.35\" stroke=\"#d9534f\"/>\n",
                x(r.lower),
                y(hi),
                width,
                (hi - lo) * plot
            ));
        }
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"gray\" stroke-dasharray=\"4 4\"/>\n",
            x(0.0),
            y(0.0),
            x(1.0),
            y(1.0)
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\">confidence</text>\n\
             <text x=\"12\" y=\"{}\" font-size=\"12\" transform=\"rotate(-90 12 {})\" text-anchor=\"middle\">accuracy</text>\n",
            W / 2.0,
            H - 10.0,
            H / 2.0,
            H / 2.0
        ));
        svg.push_str("</svg>\n");
        svg
    }
}

/// Calibration errors at one bin count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationMetrics {
    pub bins: usize,
    pub n: usize,
    pub ece: f64,
    pub mce: f64,
    pub sce: f64,
    pub ece_pct: f64,
    pub mce_pct: f64,
    pub sce_pct: f64,
}

pub fn calibration_metrics(
    records: &[PredictionRecord],
    bins: usize,
    k: usize,
) -> Result<CalibrationMetrics> {
    let stats = assign_bins(records, bins)?;
    let (e, m, s) = (ece(&stats), mce(&stats), sce(records, bins, k)?);
    Ok(CalibrationMetrics {
        bins,
        n: records.len(),
        ece: e,
        mce: m,
        sce: s,
        ece_pct: e * 100.0,
        mce_pct: m * 100.0,
        sce_pct: s * 100.0,
    })
}

/// Evaluates every bin count of a sweep.
pub fn calibration_sweep(
    records: &[PredictionRecord],
    bin_counts: &[usize],
    k: usize,
) -> Result<Vec<CalibrationMetrics>> {
    bin_counts
        .iter()
        .map(|&b| calibration_metrics(records, b, k))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Temperature(f64);

impl Temperature {
    pub const ONE: Temperature = Temperature(1.0);

    pub fn new(t: f64) -> Result<Self> {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::domain(format!(
                "temperature {t} must be positive and finite"
            )));
        }
        Ok(Self(t))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Temperature {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        Self::new(value)
    }
}

impl From<Temperature> for f64 {
    fn from(t: Temperature) -> f64 {
        t.0
    }
}

/// `softmax(z / t)`.
pub fn apply_temperature(logits: &LogitVector, t: Temperature) -> Result<ClassDistribution> {
    let scaled = LogitVector::new(logits.as_slice().iter().map(|z| z / t.0).collect())?;
    softmax(&scaled)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub learning_rate: f64,
    pub max_iterations: usize,
    pub min_temperature: f64,
    pub max_temperature: f64,
    /// Stop once |dNLL/dlog T| drops below this.
    pub gradient_tolerance: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            max_iterations: 10_000,
            min_temperature: 0.05,
            max_temperature: 20.0,
            gradient_tolerance: 1e-10,
        }
    }
}

/// Mean negative log-likelihood of `true_class` under `softmax(z / t)`, and
/// its derivative with respect to `ln t`.
pub fn temperature_nll(logits: &[LogitVector], true_class: &[usize], t: f64) -> (f64, f64) {
    let mut nll = 0.0;
    let mut grad = 0.0;
    for (z, &y) in logits.iter().zip(true_class) {
        let z = z.as_slice();
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = z.iter().map(|v| ((v - max) / t).exp()).collect();
        let sum: f64 = exps.iter().sum();
        nll += sum.ln() - (z[y] - max) / t;
        let expected: f64 = exps.iter().zip(z).map(|(e, v)| e * v).sum::<f64>() / sum;
        // d/d(ln t) of [lse(z/t) - z_y/t] = (z_y - E_p[z]) / t
        grad += (z[y] - expected) / t;
    }
    let n = logits.len() as f64;
    (nll / n, grad / n)
}

/// Fits a single temperature on validation logits by gradient descent on
/// `ln t`, clamped to the configured range. Falls back to `t = 1` if the fit
/// does not improve the validation NLL.
pub fn fit_temperature(
    logits: &[LogitVector],
    true_class: &[usize],
    config: &FitConfig,
) -> Result<Temperature> {
    if logits.is_empty() {
        return Err(Error::domain(
            "temperature fit needs a non-empty validation set",
        ));
    }
    if logits.len() != true_class.len() {
        return Err(Error::Shape {
            expected: logits.len(),
            actual: true_class.len(),
        });
    }
    if let Some((i, _)) = logits
        .iter()
        .zip(true_class)
        .enumerate()
        .find(|(_, (z, &y))| y >= z.as_slice().len())
    {
        return Err(Error::domain(format!(
            "validation sample {i}: class out of range"
        )));
    }
    let (nll_one, _) = temperature_nll(logits, true_class, 1.0);
    if !nll_one.is_finite() {
        return Err(Error::domain("validation NLL at t = 1 is not finite"));
    }
    let (lo, hi) = (config.min_temperature.ln(), config.max_temperature.ln());
    let mut log_t = 0.0f64.clamp(lo, hi);
    for _ in 0..config.max_iterations {
        let (_, grad) = temperature_nll(logits, true_class, log_t.exp());
        if !grad.is_finite() || grad.abs() < config.gradient_tolerance {
            break;
        }
        let next = (log_t - config.learning_rate * grad).clamp(lo, hi);
        if next == log_t {
            break;
        }
        log_t = next;
    }
    let t = log_t.exp();
    let (nll_fit, _) = temperature_nll(logits, true_class, t);
    if nll_fit.is_finite() && nll_fit <= nll_one {
        Temperature::new(t)
    } else {
        Ok(Temperature::ONE)
    }
}
