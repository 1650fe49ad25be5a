use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use votecal::experiment::{ExperimentConfig, RunSummary};
use votecal::metrics::ScoreReport;

fn tiny_config_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/tiny.json")
}

fn votecal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_votecal"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, name: &str, edit: impl FnOnce(&mut ExperimentConfig)) -> PathBuf {
    let mut config: ExperimentConfig =
        serde_json::from_str(&std::fs::read_to_string(tiny_config_path()).unwrap()).unwrap();
    edit(&mut config);
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path
}

#[test]
fn gen_train_calibrate_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config_path();
    let data = dir.path().join("data");
    let out = votecal(&["gen", "--config", s(&config), "--out", s(&data)]);
    assert_ok(&out);
    for f in ["votes.csv", "features.csv", "latent.csv", "summary.json"] {
        assert!(data.join(f).exists(), "{f}");
    }

    let model_dir = dir.path().join("model");
    let out = votecal(&[
        "train",
        "--config",
        s(&config),
        "--data",
        s(&data),
        "--out",
        s(&model_dir),
        "--seed",
        "3",
    ]);
    assert_ok(&out);
    let model = model_dir.join("model.json");
    assert!(model.exists());
    assert!(model_dir.join("train_log.csv").exists());

    let cal_dir = dir.path().join("cal");
    let out = votecal(&[
        "calibrate",
        "--config",
        s(&config),
        "--model",
        s(&model),
        "--data",
        s(&data),
        "--out",
        s(&cal_dir),
    ]);
    assert_ok(&out);
    let temperature = cal_dir.join("temperature.json");
    let fit: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&temperature).unwrap()).unwrap();
    assert!(fit["nll_after"].as_f64().unwrap() <= fit["nll_before"].as_f64().unwrap());

    let eval_dir = dir.path().join("eval");
    let out = votecal(&[
        "evaluate",
        "--config",
        s(&config),
        "--model",
        s(&model),
        "--data",
        s(&data),
        "--temperature",
        s(&temperature),
        "--bins",
        "10,15",
        "--out",
        s(&eval_dir),
    ]);
    assert_ok(&out);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["calibration"].as_array().unwrap().len(), 2);
    for f in [
        "scores.json",
        "calibration.json",
        "reliability.csv",
        "reliability.svg",
        "confusion.csv",
    ] {
        assert!(eval_dir.join(f).exists(), "{f}");
    }

    let out = votecal(&[
        "evaluate",
        "--config",
        s(&config),
        "--model",
        s(&model),
        "--data",
        s(&data),
        "--format",
        "csv",
        "--temperature",
        "1.5",
        "--mc-passes",
        "4",
    ]);
    assert_ok(&out);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("bins,ece,mce,sce,"));
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn run_directory_reproduces_itself() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    let out = votecal(&[
        "run",
        "--config",
        s(&tiny_config_path()),
        "--out",
        s(&first),
    ]);
    assert_ok(&out);

    let second = dir.path().join("second");
    let out = votecal(&[
        "run",
        "--config",
        s(&first.join("config.json")),
        "--out",
        s(&second),
    ]);
    assert!(out.status.success());

    let summary: RunSummary =
        serde_json::from_str(&std::fs::read_to_string(first.join("summary.json")).unwrap())
            .unwrap();
    let mut files = vec![
        "summary.json".to_string(),
        "data/votes.csv".into(),
        "data/features.csv".into(),
    ];
    for r in &summary.seeds {
        for f in [
            "model.json",
            "scores.json",
            "calibration.json",
            "reliability.csv",
            "confusion.csv",
            "train_log.csv",
        ] {
            files.push(format!("seed-{}/{f}", r.seed));
        }
    }
    for f in &files {
        assert_eq!(
            std::fs::read(first.join(f)).unwrap(),
            std::fs::read(second.join(f)).unwrap(),
            "{f} differs"
        );
    }

    // the aggregate can be recomputed from the per-seed reports
    let oa: Vec<f64> = summary
        .seeds
        .iter()
        .map(|r| {
            let path = first.join(format!("seed-{}/scores.json", r.seed));
            serde_json::from_str::<ScoreReport>(&std::fs::read_to_string(path).unwrap())
                .unwrap()
                .oa
        })
        .collect();
    let mean = oa.iter().sum::<f64>() / oa.len() as f64;
    let sd = (oa.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (oa.len() - 1) as f64).sqrt();
    assert!((summary.aggregate["oa"].mean.unwrap() - mean).abs() < 1e-15);
    assert!((summary.aggregate["oa"].sd.unwrap() - sd).abs() < 1e-15);
}

#[test]
fn compare_runs() {
    let dir = tempfile::tempdir().unwrap();
    let onehot = write_config(dir.path(), "onehot.json", |c| {
        c.label_mode = votecal::experiment::LabelMode::Onehot;
        c.bin_counts = vec![20];
    });
    let distr = write_config(dir.path(), "distr.json", |c| c.bin_counts = vec![20]);
    let shifted = write_config(dir.path(), "shifted.json", |c| c.generator.seed += 1);
    for (config, name) in [(&onehot, "a"), (&distr, "b"), (&shifted, "c")] {
        let out = votecal(&[
            "run",
            "--config",
            s(config),
            "--out",
            s(&dir.path().join(name)),
        ]);
        assert_ok(&out);
    }
    let a = dir.path().join("a");
    let b = dir.path().join("b");

    let out = votecal(&["compare", s(&a), s(&a), "--bins", "20", "--format", "json"]);
    assert!(out.status.success());
    let table: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(table["difference"]
        .as_array()
        .unwrap()
        .iter()
        .all(|d| d.as_f64() == Some(0.0)));

    let out = votecal(&["compare", s(&a), s(&b), "--bins", "20"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let header = text.lines().next().unwrap();
    let order = [
        "CE One-hot",
        "CE Distr.",
        "ECE",
        "MCE",
        "SCE",
        "OA",
        "MAA",
        "WAA",
        "Kappa",
    ];
    let positions: Vec<usize> = order.iter().map(|t| header.find(t).unwrap()).collect();
    assert!(positions.windows(2).all(|w| w[0] < w[1]));

    // distr.json only evaluated 20 bins, so 15-bin calibration columns are absent
    let out = votecal(&["compare", s(&a), s(&b), "--bins", "15", "--format", "csv"]);
    assert!(out.status.success());
    let csv = String::from_utf8(out.stdout).unwrap();
    assert!(csv.lines().nth(1).unwrap().contains(",,,false"));
    assert!(!csv.contains(",0,0,"));

    let out = votecal(&["compare", s(&a), s(&dir.path().join("c"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("digest"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), "bad.json", |c| c.network.input_dim += 1);
    assert_eq!(
        votecal(&[
            "run",
            "--config",
            s(&bad),
            "--out",
            s(&dir.path().join("x"))
        ])
        .status
        .code(),
        Some(1)
    );
    assert_eq!(
        votecal(&[
            "run",
            "--config",
            s(&dir.path().join("missing.json")),
            "--out",
            "x"
        ])
        .status
        .code(),
        Some(1)
    );
    assert_eq!(
        votecal(&["run", "--config", s(&tiny_config_path())])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(votecal(&["run", "--bogus"]).status.code(), Some(1));
    assert_eq!(votecal(&["--help"]).status.code(), Some(0));

    let diverging = write_config(dir.path(), "diverge.json", |c| c.train.initial_lr = 1e300);
    let out = votecal(&[
        "run",
        "--config",
        s(&diverging),
        "--out",
        s(&dir.path().join("d")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let summary: RunSummary =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("d/summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary.failures.len(), 2);
}
