//! Command-line front end.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::calibration::{FitConfig, Temperature};
use crate::error::{Error, Result};
use crate::experiment::{
    calibrate_on, compare, evaluate_records, load_or_generate, load_summary, mc_seed,
    predict_records, prepare_split, run_experiment, train_model, write_evaluation, write_train_log,
    ExperimentConfig, PredictOptions,
};
use crate::io;
use crate::synth::{
    class_frequency_report, entropy_summary, generate, ClassFrequencyReport, ClassGroup,
    EntropyHistogram,
};

#[derive(Serialize)]
struct DataSummary {
    entropy: Vec<EntropyHistogram>,
    class_frequency: ClassFrequencyReport,
}

#[derive(Debug, Parser)]
#[command(
    name = "votecal",
    version,
    about = "Vote-derived labels, training and calibration metrics"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the seed taken from the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated bin counts, e.g. 10,15,20,25.
    #[arg(long, value_delimiter = ',')]
    pub bins: Option<Vec<usize>>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the synthetic data set described by the configuration.
    Gen(Common),
    /// Train one model.
    Train {
        #[command(flatten)]
        common: Common,
        /// Read data from a directory instead of generating it.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Score a trained model on the test split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Temperature value or a temperature.json written by `calibrate`.
        #[arg(long)]
        temperature: Option<String>,
        /// Average this many dropout-active passes per prediction.
        #[arg(long)]
        mc_passes: Option<usize>,
    },
    /// Fit a temperature on the validation split for a trained model.
    Calibrate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Full multi-seed experiment.
    Run(Common),
    /// Side-by-side table of two runs on the same test data.
    Compare {
        run_a: PathBuf,
        run_b: PathBuf,
        /// Bin count of the calibration columns.
        #[arg(long, default_value_t = 15)]
        bins: usize,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut config: ExperimentConfig = io::read_json(&common.config).map_err(|e| match e {
        Error::Io { path, source } => {
            Error::config(format!("cannot read {}: {source}", path.display()))
        }
        other => other,
    })?;
    if let Some(bins) = &common.bins {
        config.bin_counts = bins.clone();
    }
    config.validate()?;
    Ok(config)
}

fn require_out(common: &Common) -> Result<&Path> {
    common
        .out
        .as_deref()
        .ok_or_else(|| Error::config("--out is required for this command"))
}

fn emit(text: &str, out: Option<&Path>, file_name: &str) -> Result<()> {
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            io::write_text(&dir.join(file_name), text)
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .map_err(|e| Error::io("<stdout>", e))
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

fn parse_temperature(arg: &str) -> Result<Temperature> {
    if let Ok(t) = arg.parse::<f64>() {
        return Temperature::new(t);
    }
    #[derive(serde::Deserialize)]
    struct Fitted {
        temperature: Temperature,
    }
    Ok(io::read_json::<Fitted>(Path::new(arg))?.temperature)
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(common) => {
            let mut config = load_config(&common)?;
            if let Some(seed) = common.seed {
                config.generator.seed = seed;
            }
            let data = generate(&config.generator)?;
            let out = require_out(&common)?;
            io::write_dataset(out, &data)?;
            let all = ClassGroup {
                name: "all".into(),
                classes: (0..data.class_count).collect(),
            };
            let parts = prepare_split(&config, &data)?;
            io::write_json(
                &out.join("summary.json"),
                &DataSummary {
                    entropy: entropy_summary(&data, &[all], 10)?,
                    class_frequency: class_frequency_report(
                        &parts.train,
                        &parts.validation,
                        &parts.test,
                    )?,
                },
            )?;
            println!("{} samples, digest {}", data.len(), data.digest());
        }
        Command::Train { common, data } => {
            let config = load_config(&common)?;
            let out = require_out(&common)?;
            let seed = common.seed.unwrap_or(config.seeds[0]);
            let dataset = load_or_generate(&config, data.as_deref())?;
            let parts = prepare_split(&config, &dataset)?;
            let outcome = train_model(&config, &parts, seed)?;
            std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
            io::save_model(&out.join("model.json"), &outcome.params, seed)?;
            write_train_log(&out.join("train_log.csv"), &outcome)?;
            println!(
                "best epoch {} of {}, validation loss {}",
                outcome.best_epoch,
                outcome.log.len(),
                outcome.best_val_loss
            );
        }
        Command::Evaluate {
            common,
            model,
            data,
            temperature,
            mc_passes,
        } => {
            let config = load_config(&common)?;
            let (params, model_seed) = io::load_model(&model)?;
            let dataset = load_or_generate(&config, data.as_deref())?;
            let parts = prepare_split(&config, &dataset)?;
            let seed = common.seed.unwrap_or(model_seed);
            let opts = PredictOptions {
                temperature: match temperature {
                    Some(t) => parse_temperature(&t)?,
                    None => Temperature::ONE,
                },
                mc_dropout: mc_passes
                    .or(config.mc_dropout_passes)
                    .map(|passes| (passes, mc_seed(seed))),
            };
            let records = predict_records(&params, &parts.test, &opts)?;
            let eval =
                evaluate_records(&records, config.generator.class_count, &config.bin_counts)?;
            if let Some(out) = &common.out {
                write_evaluation(out, &eval)?;
            }
            match common.format.unwrap_or(Format::Json) {
                Format::Csv => {
                    let mut text =
                        String::from("bins,ece,mce,sce,oa,maa,waa,kappa,ce_onehot,ce_distr\n");
                    let s = &eval.scores;
                    for c in &eval.calibration {
                        text.push_str(&format!(
                            "{},{},{},{},{},{},{},{},{},{}\n",
                            c.bins,
                            c.ece,
                            c.mce,
                            c.sce,
                            s.oa,
                            s.maa,
                            s.waa,
                            s.kappa,
                            s.ce_onehot,
                            s.ce_distr
                        ));
                    }
                    emit(&text, None, "")?;
                }
                _ => {
                    #[derive(Serialize)]
                    struct Report<'a> {
                        scores: &'a crate::metrics::ScoreReport,
                        calibration: &'a [crate::calibration::CalibrationMetrics],
                    }
                    emit(
                        &to_json(&Report {
                            scores: &eval.scores,
                            calibration: &eval.calibration,
                        })?,
                        None,
                        "",
                    )?;
                }
            }
        }
        Command::Calibrate {
            common,
            model,
            data,
        } => {
            let config = load_config(&common)?;
            let (params, _) = io::load_model(&model)?;
            let dataset = load_or_generate(&config, data.as_deref())?;
            let parts = prepare_split(&config, &dataset)?;
            let fit_config: FitConfig = config.temperature_fit;
            let fit = calibrate_on(&params, &parts.validation, &fit_config)?;
            match &common.out {
                Some(out) => {
                    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
                    io::write_json(&out.join("temperature.json"), &fit)?;
                }
                None => emit(&to_json(&fit)?, None, "")?,
            }
        }
        Command::Run(common) => {
            let mut config = load_config(&common)?;
            if let Some(seed) = common.seed {
                config.seeds = vec![seed];
            }
            let out = require_out(&common)?;
            let summary = run_experiment(&config, Some(out))?;
            for f in &summary.failures {
                eprintln!("seed {} failed: {}", f.seed, f.error);
            }
            println!(
                "{}: {} of {} seeds completed, test digest {}",
                summary.variant,
                summary.seeds.len(),
                config.seeds.len(),
                summary.test_digest
            );
            if summary.seeds.is_empty() {
                return Err(Error::Numeric("every seed failed".into()));
            }
        }
        Command::Compare {
            run_a,
            run_b,
            bins,
            format,
            out,
        } => {
            let a = load_summary(&run_a)?;
            let b = load_summary(&run_b)?;
            let name = |p: &Path| {
                p.file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_else(|| p.display().to_string())
            };
            let (na, nb) = (name(&run_a), name(&run_b));
            let table = compare((&na, &a), (&nb, &b), bins)?;
            let (text, file) = match format {
                Format::Text => (table.to_markdown(), "comparison.md"),
                Format::Csv => (table.to_csv(), "comparison.csv"),
                Format::Json => (to_json(&table)?, "comparison.json"),
            };
            emit(&text, out.as_deref(), file)?;
        }
    }
    Ok(())
}

/// Parses arguments, runs the command and maps the outcome to an exit code:
/// 0 on success, 1 for invalid input or configuration, 2 for runtime failures.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}
