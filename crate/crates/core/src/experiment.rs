//! End-to-end experiments: generate, split, label, train, calibrate,
//! evaluate over several seeds, aggregate, and compare runs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::calibration::{
    apply_temperature, assign_bins, calibration_sweep, fit_temperature, reliability_data,
    temperature_nll, CalibrationMetrics, FitConfig, PredictionRecord, ReliabilityReport,
    Temperature, DEFAULT_BINS, DEFAULT_BIN_SWEEP,
};
use crate::error::{Error, Result};
use crate::io;
use crate::labels::{
    distributional_label, majority_label, smooth_label, tally_votes, ClassDistribution,
};
use crate::metrics::{confusion, score, ConfusionMatrix, ScoreReport};
use crate::model::{
    forward, mc_logits, mean_distribution, train, DropoutMode, LabeledSet, LogitVector, LossKind,
    NetworkParams, NetworkSpec, TrainConfig, TrainOutcome,
};
use crate::rng::{derive_seed, GENERATOR_NAME};
use crate::synth::{generate, split, DataSplit, Dataset, GeneratorConfig, SplitSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    /// Majority-vote one-hot labels.
    Onehot,
    /// Empirical vote distributions.
    Distributional,
}

impl LabelMode {
    /// Loss each label mode is trained with unless overridden.
    pub fn paired_loss(self) -> LossKind {
        match self {
            LabelMode::Onehot => LossKind::CeOnehot,
            LabelMode::Distributional => LossKind::KlDistr,
        }
    }
}

/// Optimizer schedule of an experiment; seed and loss come from the
/// experiment itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub batch_size: usize,
    pub initial_lr: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_every_epochs: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub momentum: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        let c = TrainConfig::new(LossKind::CeOnehot);
        Self {
            batch_size: c.batch_size,
            initial_lr: c.initial_lr,
            lr_decay_factor: c.lr_decay_factor,
            lr_decay_every_epochs: c.lr_decay_every_epochs,
            max_epochs: c.max_epochs,
            early_stop_patience: c.early_stop_patience,
            momentum: c.momentum,
        }
    }
}

impl TrainOptions {
    pub fn to_config(&self, loss_kind: LossKind, seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            initial_lr: self.initial_lr,
            lr_decay_factor: self.lr_decay_factor,
            lr_decay_every_epochs: self.lr_decay_every_epochs,
            max_epochs: self.max_epochs,
            early_stop_patience: self.early_stop_patience,
            momentum: self.momentum,
            seed,
            loss_kind,
        }
    }
}

fn default_bins() -> Vec<usize> {
    DEFAULT_BIN_SWEEP.to_vec()
}

fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3, 4, 5]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub generator: GeneratorConfig,
    pub split: SplitSpec,
    pub network: NetworkSpec,
    #[serde(default)]
    pub train: TrainOptions,
    pub label_mode: LabelMode,
    /// Trains with a loss other than the one paired with `label_mode`.
    #[serde(default)]
    pub loss_override: Option<LossKind>,
    #[serde(default)]
    pub smoothing_alpha: Option<f64>,
    #[serde(default)]
    pub temperature_scaling: bool,
    #[serde(default)]
    pub temperature_fit: FitConfig,
    #[serde(default)]
    pub mc_dropout_passes: Option<usize>,
    #[serde(default = "default_bins")]
    pub bin_counts: Vec<usize>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

impl ExperimentConfig {
    pub fn loss_kind(&self) -> LossKind {
        self.loss_override
            .unwrap_or_else(|| self.label_mode.paired_loss())
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.network.validate()?;
        self.train.to_config(self.loss_kind(), 0).validate()?;
        if self.network.input_dim != self.generator.feature_dim {
            return Err(Error::config(format!(
                "network input_dim {} differs from generator feature_dim {}",
                self.network.input_dim, self.generator.feature_dim
            )));
        }
        if self.network.class_count != self.generator.class_count {
            return Err(Error::config(format!(
                "network class_count {} differs from generator class_count {}",
                self.network.class_count, self.generator.class_count
            )));
        }
        if let Some(alpha) = self.smoothing_alpha {
            if !(0.0..=1.0).contains(&alpha) {
                return Err(Error::config(format!(
                    "smoothing_alpha {alpha} outside [0, 1]"
                )));
            }
        }
        if self.mc_dropout_passes == Some(0) {
            return Err(Error::config("mc_dropout_passes must be at least 1"));
        }
        if self.bin_counts.is_empty() || self.bin_counts.contains(&0) {
            return Err(Error::config(
                "bin_counts must be a non-empty list of positive integers",
            ));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("at least one seed is required"));
        }
        let fit = &self.temperature_fit;
        if !(fit.min_temperature > 0.0 && fit.min_temperature <= 1.0 && fit.max_temperature >= 1.0)
        {
            return Err(Error::config(
                "temperature range must contain 1 and be positive",
            ));
        }
        Ok(())
    }

    /// Short description of the label, loss and calibration settings.
    pub fn variant_name(&self) -> String {
        let mut name = match self.label_mode {
            LabelMode::Onehot => "onehot".to_string(),
            LabelMode::Distributional => "distributional".to_string(),
        };
        if self.loss_override.is_some() {
            name.push_str(&format!("[{}]", self.loss_kind().name()));
        }
        if self.smoothing_alpha.is_some() {
            name.push_str("+ls");
        }
        if self.temperature_scaling {
            name.push_str("+ts");
        }
        if self.mc_dropout_passes.is_some() {
            name.push_str("+mc");
        }
        name
    }
}

/// Per-sample training target for a label mode, optionally smoothed.
pub fn build_labeled_set(
    data: &Dataset,
    mode: LabelMode,
    smoothing: Option<f64>,
) -> Result<LabeledSet> {
    let k = data.class_count;
    let mut features = Vec::with_capacity(data.len());
    let mut targets = Vec::with_capacity(data.len());
    for s in &data.samples {
        let counts = tally_votes(&s.record, k)?;
        let label = match mode {
            LabelMode::Onehot => majority_label(&counts)?.label,
            LabelMode::Distributional => distributional_label(&counts)?,
        };
        let label = match smoothing {
            Some(alpha) => smooth_label(&label, alpha)?,
            None => label,
        };
        features.push(s.features.clone());
        targets.push(label);
    }
    LabeledSet::new(features, targets)
}

pub fn load_or_generate(config: &ExperimentConfig, data_dir: Option<&Path>) -> Result<Dataset> {
    match data_dir {
        Some(dir) => io::read_dataset(dir, config.generator.class_count),
        None => generate(&config.generator),
    }
}

pub fn prepare_split(config: &ExperimentConfig, data: &Dataset) -> Result<DataSplit> {
    let parts = split(data, &config.split)?;
    if parts.train.is_empty() || parts.validation.is_empty() || parts.test.is_empty() {
        return Err(Error::Split(format!(
            "train/validation/test sizes {}/{}/{}; all must be non-empty",
            parts.train.len(),
            parts.validation.len(),
            parts.test.len()
        )));
    }
    Ok(parts)
}

pub fn train_model(
    config: &ExperimentConfig,
    parts: &DataSplit,
    seed: u64,
) -> Result<TrainOutcome> {
    let train_set = build_labeled_set(&parts.train, config.label_mode, config.smoothing_alpha)?;
    let val_set = build_labeled_set(&parts.validation, config.label_mode, config.smoothing_alpha)?;
    train(
        &config.network,
        &train_set,
        &val_set,
        &config.train.to_config(config.loss_kind(), seed),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureFit {
    pub temperature: Temperature,
    pub nll_before: f64,
    pub nll_after: f64,
}

/// Fits a temperature to the majority-vote classes of `validation`.
pub fn calibrate_on(
    params: &NetworkParams,
    validation: &Dataset,
    fit: &FitConfig,
) -> Result<TemperatureFit> {
    let k = validation.class_count;
    let mut logits = Vec::with_capacity(validation.len());
    let mut classes = Vec::with_capacity(validation.len());
    for s in &validation.samples {
        logits.push(forward(params, &s.features, DropoutMode::Off)?);
        classes.push(majority_label(&tally_votes(&s.record, k)?)?.winner);
    }
    let temperature = fit_temperature(&logits, &classes, fit)?;
    Ok(TemperatureFit {
        temperature,
        nll_before: temperature_nll(&logits, &classes, 1.0).0,
        nll_after: temperature_nll(&logits, &classes, temperature.value()).0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictOptions {
    pub temperature: Temperature,
    /// `(passes, seed)` for Monte Carlo dropout.
    pub mc_dropout: Option<(usize, u64)>,
}

impl Default for PredictOptions {
    fn default() -> Self {
        Self {
            temperature: Temperature::ONE,
            mc_dropout: None,
        }
    }
}

/// Predictions on `data` paired with majority and distributional labels.
pub fn predict_records(
    params: &NetworkParams,
    data: &Dataset,
    opts: &PredictOptions,
) -> Result<Vec<PredictionRecord>> {
    let k = data.class_count;
    data.samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let pred = match opts.mc_dropout {
                None => apply_temperature(
                    &forward(params, &s.features, DropoutMode::Off)?,
                    opts.temperature,
                )?,
                Some((passes, seed)) => {
                    let dists =
                        mc_logits(params, &s.features, passes, derive_seed(seed, i as u64))?
                            .iter()
                            .map(|z: &LogitVector| apply_temperature(z, opts.temperature))
                            .collect::<Result<Vec<ClassDistribution>>>()?;
                    mean_distribution(&dists)
                }
            };
            let counts = tally_votes(&s.record, k)?;
            Ok(PredictionRecord::new(
                s.record.sample_id.clone(),
                pred,
                majority_label(&counts)?.winner,
                distributional_label(&counts)?,
            ))
        })
        .collect()
}

/// Seed of the dropout masks used at prediction time for a training seed.
pub fn mc_seed(seed: u64) -> u64 {
    derive_seed(seed, 0x4d43)
}

/// Every report computed for one prediction set.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub scores: ScoreReport,
    pub calibration: Vec<CalibrationMetrics>,
    pub reliability: ReliabilityReport,
    pub confusion: ConfusionMatrix,
}

/// Reliability table is drawn at 20 bins when that count is evaluated,
/// otherwise at the first requested count.
pub fn evaluate_records(
    records: &[PredictionRecord],
    k: usize,
    bin_counts: &[usize],
) -> Result<Evaluation> {
    let reliability_bins = if bin_counts.contains(&DEFAULT_BINS) {
        DEFAULT_BINS
    } else {
        *bin_counts
            .first()
            .ok_or_else(|| Error::domain("no bin counts requested"))?
    };
    let bins = assign_bins(records, reliability_bins)?;
    Ok(Evaluation {
        scores: score(records, k)?,
        calibration: calibration_sweep(records, bin_counts, k)?,
        reliability: reliability_data(&bins, records),
        confusion: confusion(records, k)?,
    })
}

pub fn write_evaluation(dir: &Path, eval: &Evaluation) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    io::write_json(&dir.join("scores.json"), &eval.scores)?;
    io::write_json(&dir.join("calibration.json"), &eval.calibration)?;
    io::write_text(&dir.join("reliability.csv"), &eval.reliability.to_csv())?;
    io::write_text(&dir.join("reliability.svg"), &eval.reliability.to_svg())?;
    io::write_text(&dir.join("confusion.csv"), &eval.confusion.to_csv())?;
    Ok(())
}

pub fn write_train_log(path: &Path, outcome: &TrainOutcome) -> Result<()> {
    let mut text = String::from("epoch,train_loss,val_loss,learning_rate,improved\n");
    for e in &outcome.log {
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            e.epoch, e.train_loss, e.val_loss, e.learning_rate, e.improved
        ));
    }
    io::write_text(path, &text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub scores: ScoreReport,
    pub calibration: Vec<CalibrationMetrics>,
    pub temperature: Option<f64>,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub best_val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedFailure {
    pub seed: u64,
    pub error: String,
}

/// Mean and sample standard deviation over completed seeds. Values are
/// absent when any contributing seed produced a non-finite number.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    pub n: usize,
}

impl Aggregate {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 || values.iter().any(|v| !v.is_finite()) {
            return Self {
                mean: None,
                sd: None,
                n,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = (n > 1).then(|| {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        });
        Self {
            mean: Some(mean),
            sd,
            n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub variant: String,
    pub loss_kind: LossKind,
    pub optimizer: String,
    pub rng: String,
    /// Digest of the test split, used to refuse mismatched comparisons.
    pub test_digest: String,
    pub sizes: SplitSizes,
    pub seeds: Vec<SeedReport>,
    pub failures: Vec<SeedFailure>,
    /// Keyed by metric name; calibration metrics as `ece@<bins>` etc.
    pub aggregate: BTreeMap<String, Aggregate>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

/// Metric name to value for one seed, as aggregated in the summary.
pub fn seed_metrics(report: &SeedReport) -> BTreeMap<String, f64> {
    let s = &report.scores;
    let mut m: BTreeMap<String, f64> = [
        ("oa", s.oa),
        ("maa", s.maa),
        ("waa", s.waa),
        ("kappa", s.kappa),
        ("ce_onehot", s.ce_onehot),
        ("ce_distr", s.ce_distr),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    for c in &report.calibration {
        m.insert(format!("ece@{}", c.bins), c.ece);
        m.insert(format!("mce@{}", c.bins), c.mce);
        m.insert(format!("sce@{}", c.bins), c.sce);
    }
    if let Some(t) = report.temperature {
        m.insert("temperature".into(), t);
    }
    m
}

pub fn aggregate(reports: &[SeedReport]) -> BTreeMap<String, Aggregate> {
    let mut columns: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in reports {
        for (k, v) in seed_metrics(r) {
            columns.entry(k).or_default().push(v);
        }
    }
    columns
        .into_iter()
        .map(|(k, v)| (k, Aggregate::of(&v)))
        .collect()
}

fn run_seed(
    config: &ExperimentConfig,
    parts: &DataSplit,
    seed: u64,
    seed_dir: Option<&Path>,
) -> Result<SeedReport> {
    let outcome = train_model(config, parts, seed)?;
    let params = &outcome.params;
    let fit = if config.temperature_scaling {
        Some(calibrate_on(
            params,
            &parts.validation,
            &config.temperature_fit,
        )?)
    } else {
        None
    };
    let opts = PredictOptions {
        temperature: fit.map_or(Temperature::ONE, |f| f.temperature),
        mc_dropout: config
            .mc_dropout_passes
            .map(|passes| (passes, mc_seed(seed))),
    };
    let records = predict_records(params, &parts.test, &opts)?;
    let eval = evaluate_records(&records, config.generator.class_count, &config.bin_counts)?;
    if let Some(dir) = seed_dir {
        write_evaluation(dir, &eval)?;
        io::save_model(&dir.join("model.json"), params, seed)?;
        write_train_log(&dir.join("train_log.csv"), &outcome)?;
        if let Some(fit) = fit {
            io::write_json(&dir.join("temperature.json"), &fit)?;
        }
    }
    Ok(SeedReport {
        seed,
        scores: eval.scores,
        calibration: eval.calibration,
        temperature: fit.map(|f| f.temperature.value()),
        best_epoch: outcome.best_epoch,
        epochs_run: outcome.log.len(),
        best_val_loss: outcome.best_val_loss,
    })
}

pub const SUMMARY_FILE: &str = "summary.json";
pub const CONFIG_FILE: &str = "config.json";

/// Runs every seed of `config`. With `out_dir`, writes the config, data,
/// per-seed reports and `summary.json` there. A failing seed is recorded and
/// the remaining seeds still run.
pub fn run_experiment(config: &ExperimentConfig, out_dir: Option<&Path>) -> Result<RunSummary> {
    config.validate()?;
    let data = generate(&config.generator)?;
    let parts = prepare_split(config, &data)?;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        io::write_json(&dir.join(CONFIG_FILE), config)?;
        io::write_dataset(&dir.join("data"), &data)?;
    }
    let mut seeds = Vec::new();
    let mut failures = Vec::new();
    for &seed in &config.seeds {
        let seed_dir: Option<PathBuf> = out_dir.map(|d| d.join(format!("seed-{seed}")));
        match run_seed(config, &parts, seed, seed_dir.as_deref()) {
            Ok(report) => seeds.push(report),
            Err(e) => failures.push(SeedFailure {
                seed,
                error: e.to_string(),
            }),
        }
    }
    let summary = RunSummary {
        variant: config.variant_name(),
        loss_kind: config.loss_kind(),
        optimizer: TrainConfig::OPTIMIZER.to_string(),
        rng: GENERATOR_NAME.to_string(),
        test_digest: parts.test.digest(),
        sizes: SplitSizes {
            train: parts.train.len(),
            validation: parts.validation.len(),
            test: parts.test.len(),
        },
        aggregate: aggregate(&seeds),
        seeds,
        failures,
    };
    if let Some(dir) = out_dir {
        io::write_json(&dir.join(SUMMARY_FILE), &summary)?;
    }
    Ok(summary)
}

/// Loads `summary.json` from a run directory, or from the path itself when it
/// names a file.
pub fn load_summary(path: &Path) -> Result<RunSummary> {
    if path.is_dir() {
        io::read_json(&path.join(SUMMARY_FILE))
    } else {
        io::read_json(path)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Better {
    Lower,
    Higher,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub key: String,
    pub title: String,
    pub better: Better,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub name: String,
    pub cells: Vec<Option<Aggregate>>,
    /// Per column: whether this row holds the best mean.
    pub best: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub bins: usize,
    pub columns: Vec<Column>,
    pub rows: Vec<ComparisonRow>,
    /// Second row minus first row, per column.
    pub difference: Vec<Option<f64>>,
}

/// Side-by-side table in the order CE One-hot, CE Distr, ECE, MCE, SCE,
/// then OA, MAA, WAA, kappa.
pub fn compare(a: (&str, &RunSummary), b: (&str, &RunSummary), bins: usize) -> Result<Comparison> {
    if a.1.test_digest != b.1.test_digest {
        return Err(Error::DigestMismatch {
            left: a.1.test_digest.clone(),
            right: b.1.test_digest.clone(),
        });
    }
    let spec: [(String, &str, Better); 9] = [
        ("ce_onehot".into(), "CE One-hot", Better::Lower),
        ("ce_distr".into(), "CE Distr.", Better::Lower),
        (format!("ece@{bins}"), "ECE", Better::Lower),
        (format!("mce@{bins}"), "MCE", Better::Lower),
        (format!("sce@{bins}"), "SCE", Better::Lower),
        ("oa".into(), "OA", Better::Higher),
        ("maa".into(), "MAA", Better::Higher),
        ("waa".into(), "WAA", Better::Higher),
        ("kappa".into(), "Kappa", Better::Higher),
    ];
    let columns: Vec<Column> = spec
        .into_iter()
        .map(|(key, title, better)| Column {
            key,
            title: title.to_string(),
            better,
        })
        .collect();
    let cells = |s: &RunSummary| -> Vec<Option<Aggregate>> {
        columns
            .iter()
            .map(|c| s.aggregate.get(&c.key).copied())
            .collect()
    };
    let (ca, cb) = (cells(a.1), cells(b.1));
    let mean = |c: &Option<Aggregate>| c.and_then(|x| x.mean);
    let mut best_a = Vec::new();
    let mut best_b = Vec::new();
    let mut difference = Vec::new();
    for (i, col) in columns.iter().enumerate() {
        let (ma, mb) = (mean(&ca[i]), mean(&cb[i]));
        let (wa, wb) = match (ma, mb) {
            (Some(x), Some(y)) => match col.better {
                Better::Lower => (x <= y, y <= x),
                Better::Higher => (x >= y, y >= x),
            },
            (Some(_), None) => (true, false),
            (None, Some(_)) => (false, true),
            (None, None) => (false, false),
        };
        best_a.push(wa);
        best_b.push(wb);
        difference.push(ma.zip(mb).map(|(x, y)| y - x));
    }
    Ok(Comparison {
        bins,
        columns,
        rows: vec![
            ComparisonRow {
                name: a.0.to_string(),
                cells: ca,
                best: best_a,
            },
            ComparisonRow {
                name: b.0.to_string(),
                cells: cb,
                best: best_b,
            },
        ],
        difference,
    })
}

fn format_cell(cell: &Option<Aggregate>, percent: bool) -> String {
    let scale = if percent { 100.0 } else { 1.0 };
    match cell.and_then(|c| c.mean.map(|m| (m, c.sd))) {
        None => "n/a".to_string(),
        Some((m, Some(sd))) => format!("{:.2} ± {:.2}", m * scale, sd * scale),
        Some((m, None)) => format!("{:.2}", m * scale),
    }
}

fn is_percent(key: &str) -> bool {
    key.contains('@') || matches!(key, "oa" | "maa" | "waa" | "kappa")
}

impl Comparison {
    /// Markdown table; calibration errors and accuracies in percent, best
    /// mean per column in bold.
    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| Run |");
        for c in &self.columns {
            out.push_str(&format!(" {} |", c.title));
        }
        out.push_str("\n|---|");
        out.push_str(&"---|".repeat(self.columns.len()));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&format!("| {} |", row.name));
            for ((cell, best), col) in row.cells.iter().zip(&row.best).zip(&self.columns) {
                let text = format_cell(cell, is_percent(&col.key));
                if *best {
                    out.push_str(&format!(" **{text}** |"));
                } else {
                    out.push_str(&format!(" {text} |"));
                }
            }
            out.push('\n');
        }
        out.push_str("| Δ |");
        for (d, col) in self.difference.iter().zip(&self.columns) {
            let scale = if is_percent(&col.key) { 100.0 } else { 1.0 };
            match d {
                Some(d) => out.push_str(&format!(" {:+.2} |", d * scale)),
                None => out.push_str(" n/a |"),
            }
        }
        out.push('\n');
        out
    }

    /// Raw (unscaled) means and standard deviations; absent cells are empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("run");
        for c in &self.columns {
            out.push_str(&format!(",{0}_mean,{0}_sd,{0}_best", c.key));
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.name);
            for (cell, best) in row.cells.iter().zip(&row.best) {
                let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
                out.push_str(&format!(
                    ",{},{},{}",
                    fmt(cell.and_then(|c| c.mean)),
                    fmt(cell.and_then(|c| c.sd)),
                    best
                ));
            }
            out.push('\n');
        }
        out.push_str("difference");
        for d in &self.difference {
            out.push_str(&format!(
                ",{},,",
                d.map(|x| x.to_string()).unwrap_or_default()
            ));
        }
        out.push('\n');
        out
    }
}
