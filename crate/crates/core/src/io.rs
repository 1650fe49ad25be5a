//! File formats: vote, feature and latent CSVs, and model JSON.
//!
//! Class indices in files are one-based.

use std::collections::HashMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{ClassDistribution, VoteCounts, VoteRecord};
use crate::model::{Layer, NetworkParams, NetworkSpec};
use crate::synth::{Dataset, Sample};

pub const VOTES_FILE: &str = "votes.csv";
pub const FEATURES_FILE: &str = "features.csv";
pub const LATENT_FILE: &str = "latent.csv";

fn parse_error(source: &str, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: source.to_string(),
        line,
        message: message.into(),
    }
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(input)
}

fn check_id_columns(source: &str, headers: &csv::StringRecord) -> Result<()> {
    if headers.get(0) != Some("sample_id") || headers.get(1) != Some("group_id") {
        return Err(parse_error(
            source,
            1,
            "header must start with sample_id,group_id",
        ));
    }
    Ok(())
}

/// Column layout of a vote file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VoteForm {
    /// `v1..vJ`: one class index per annotator.
    Votes,
    /// `c1..cK`: per-class vote counts.
    Counts,
}

fn detect_form(source: &str, headers: &csv::StringRecord) -> Result<VoteForm> {
    let tail: Vec<&str> = headers.iter().skip(2).collect();
    if tail.is_empty() {
        return Err(parse_error(source, 1, "no vote columns"));
    }
    let numbered = |prefix: char| {
        tail.iter()
            .enumerate()
            .all(|(i, h)| h.strip_prefix(prefix) == Some((i + 1).to_string().as_str()))
    };
    if numbered('v') {
        Ok(VoteForm::Votes)
    } else if numbered('c') {
        Ok(VoteForm::Counts)
    } else {
        Err(parse_error(
            source,
            1,
            "vote columns must be named v1..vJ or c1..cK",
        ))
    }
}

/// Parses a vote table, auto-detecting the vote or count form. Returns the
/// records and, for the count form, the class count given by the header.
pub fn parse_votes<R: Read>(input: R, source: &str) -> Result<(Vec<VoteRecord>, Option<usize>)> {
    let mut rdr = reader(input);
    let headers = rdr.headers()?.clone();
    check_id_columns(source, &headers)?;
    let form = detect_form(source, &headers)?;
    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let values = row
            .iter()
            .skip(2)
            .map(|v| {
                v.trim().parse::<u32>().map_err(|_| {
                    parse_error(
                        source,
                        line,
                        format!("expected a non-negative integer, got {v:?}"),
                    )
                })
            })
            .collect::<Result<Vec<u32>>>()?;
        let (sample_id, group_id) = (&row[0], &row[1]);
        let record = match form {
            VoteForm::Votes => {
                if values.contains(&0) {
                    return Err(parse_error(source, line, "class indices start at 1"));
                }
                VoteRecord::new(
                    sample_id,
                    group_id,
                    values.iter().map(|&v| v as usize - 1).collect(),
                )
            }
            VoteForm::Counts => {
                if values.iter().all(|&c| c == 0) {
                    return Err(parse_error(source, line, "sample has no votes"));
                }
                VoteRecord::from_counts(sample_id, group_id, &VoteCounts::new(values))
            }
        };
        records.push(record);
    }
    let k = (form == VoteForm::Counts).then(|| headers.len() - 2);
    Ok((records, k))
}

pub fn read_votes(path: &Path) -> Result<(Vec<VoteRecord>, Option<usize>)> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_votes(file, &path.display().to_string())
}

pub fn write_votes<W: Write>(out: W, records: &[VoteRecord]) -> Result<()> {
    let j = records.first().map_or(0, |r| r.votes.len());
    if records.iter().any(|r| r.votes.len() != j) {
        return Err(Error::domain(
            "all records must carry the same number of votes",
        ));
    }
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["sample_id".to_string(), "group_id".to_string()];
    header.extend((1..=j).map(|i| format!("v{i}")));
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![r.sample_id.clone(), r.group_id.clone()];
        row.extend(r.votes.iter().map(|v| (v + 1).to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// `(sample_id, group_id, features)` rows.
pub fn parse_features<R: Read>(input: R, source: &str) -> Result<Vec<(String, String, Vec<f64>)>> {
    let mut rdr = reader(input);
    let headers = rdr.headers()?.clone();
    check_id_columns(source, &headers)?;
    let dim = headers.len() - 2;
    let mut rows = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let features = row
            .iter()
            .skip(2)
            .map(|v| match v.trim().parse::<f64>() {
                Ok(x) if x.is_finite() => Ok(x),
                _ => Err(parse_error(
                    source,
                    line,
                    format!("expected a finite number, got {v:?}"),
                )),
            })
            .collect::<Result<Vec<f64>>>()?;
        if features.len() != dim {
            return Err(parse_error(source, line, "wrong number of feature columns"));
        }
        rows.push((row[0].to_string(), row[1].to_string(), features));
    }
    Ok(rows)
}

fn write_table<W: Write>(
    out: W,
    header: Vec<String>,
    rows: impl Iterator<Item = Vec<String>>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(&header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn write_features<W: Write>(out: W, samples: &[Sample]) -> Result<()> {
    let d = samples.first().map_or(0, |s| s.features.len());
    let mut header = vec!["sample_id".to_string(), "group_id".to_string()];
    header.extend((1..=d).map(|i| format!("f{i}")));
    write_table(
        out,
        header,
        samples.iter().map(|s| {
            let mut row = vec![s.record.sample_id.clone(), s.record.group_id.clone()];
            row.extend(s.features.iter().map(f64::to_string));
            row
        }),
    )
}

pub fn write_latent<W: Write>(out: W, samples: &[Sample]) -> Result<()> {
    let k = samples
        .iter()
        .find_map(|s| s.latent.as_ref().map(ClassDistribution::class_count))
        .unwrap_or(0);
    let mut header = vec!["sample_id".to_string()];
    header.extend((1..=k).map(|i| format!("p{i}")));
    write_table(
        out,
        header,
        samples.iter().filter_map(|s| {
            let latent = s.latent.as_ref()?;
            let mut row = vec![s.record.sample_id.clone()];
            row.extend(latent.as_slice().iter().map(f64::to_string));
            Some(row)
        }),
    )
}

pub fn parse_latent<R: Read>(input: R, source: &str) -> Result<HashMap<String, ClassDistribution>> {
    let mut rdr = reader(input);
    let mut out = HashMap::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let probs = row
            .iter()
            .skip(1)
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| parse_error(source, line, "bad probability"))
            })
            .collect::<Result<Vec<f64>>>()?;
        let dist =
            ClassDistribution::new(probs).map_err(|e| parse_error(source, line, e.to_string()))?;
        out.insert(row[0].to_string(), dist);
    }
    Ok(out)
}

fn create(path: &Path) -> Result<fs::File> {
    fs::File::create(path).map_err(|e| Error::io(path, e))
}

/// Writes `votes.csv`, `features.csv` and, when latents are known, `latent.csv`.
pub fn write_dataset(dir: &Path, data: &Dataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let records: Vec<VoteRecord> = data.records().cloned().collect();
    write_votes(create(&dir.join(VOTES_FILE))?, &records)?;
    write_features(create(&dir.join(FEATURES_FILE))?, &data.samples)?;
    if data.samples.iter().any(|s| s.latent.is_some()) {
        write_latent(create(&dir.join(LATENT_FILE))?, &data.samples)?;
    }
    Ok(())
}

/// Reads a data directory, joining features and latents to votes by sample id.
pub fn read_dataset(dir: &Path, class_count: usize) -> Result<Dataset> {
    let (records, header_k) = read_votes(&dir.join(VOTES_FILE))?;
    if let Some(k) = header_k {
        if k != class_count {
            return Err(Error::Shape {
                expected: class_count,
                actual: k,
            });
        }
    }
    let features_path = dir.join(FEATURES_FILE);
    let file = fs::File::open(&features_path).map_err(|e| Error::io(&features_path, e))?;
    let mut features: HashMap<String, Vec<f64>> =
        parse_features(file, &features_path.display().to_string())?
            .into_iter()
            .map(|(id, _, f)| (id, f))
            .collect();
    let latent_path = dir.join(LATENT_FILE);
    let mut latent = if latent_path.exists() {
        let file = fs::File::open(&latent_path).map_err(|e| Error::io(&latent_path, e))?;
        parse_latent(file, &latent_path.display().to_string())?
    } else {
        HashMap::new()
    };
    let samples = records
        .into_iter()
        .map(|record| {
            let f = features.remove(&record.sample_id).ok_or_else(|| {
                Error::domain(format!(
                    "sample {} has votes but no features",
                    record.sample_id
                ))
            })?;
            Ok(Sample {
                latent: latent.remove(&record.sample_id),
                features: f,
                record,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        class_count,
        samples,
    })
}

pub const MODEL_FORMAT: &str = "votecal-model/1";

/// Self-describing model document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub seed: u64,
    pub spec: NetworkSpec,
    pub layers: Vec<Layer>,
}

impl ModelFile {
    pub fn new(params: &NetworkParams, seed: u64) -> Self {
        Self {
            format: MODEL_FORMAT.to_string(),
            seed,
            spec: params.spec.clone(),
            layers: params.layers.clone(),
        }
    }

    pub fn into_params(self) -> Result<NetworkParams> {
        if self.format != MODEL_FORMAT {
            return Err(Error::domain(format!(
                "unsupported model format {}",
                self.format
            )));
        }
        let params = NetworkParams {
            spec: self.spec,
            layers: self.layers,
        };
        params.validate()?;
        Ok(params)
    }
}

pub fn save_model(path: &Path, params: &NetworkParams, seed: u64) -> Result<()> {
    write_json(path, &ModelFile::new(params, seed))
}

pub fn load_model(path: &Path) -> Result<(NetworkParams, u64)> {
    let file: ModelFile = read_json(path)?;
    let seed = file.seed;
    Ok((file.into_params()?, seed))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_vote_form() {
        let text = "sample_id,group_id,v1,v2,v3\na,g1,3,3,1\nb,g2,2,2,2\n";
        let (records, k) = parse_votes(text.as_bytes(), "votes.csv").unwrap();
        assert_eq!(k, None);
        assert_eq!(records[0].votes, vec![2, 2, 0]);
        assert_eq!(records[1].group_id, "g2");
    }

    #[test]
    fn parses_count_form() {
        let text = "sample_id,group_id,c1,c2,c3\na,g1,1,0,2\n";
        let (records, k) = parse_votes(text.as_bytes(), "votes.csv").unwrap();
        assert_eq!(k, Some(3));
        assert_eq!(records[0].votes, vec![0, 2, 2]);
    }

    #[test]
    fn reports_line_numbers() {
        let text = "sample_id,group_id,v1,v2\na,g,1,2\nb,g,1,x\n";
        match parse_votes(text.as_bytes(), "votes.csv") {
            Err(Error::Parse { line, path, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(path, "votes.csv");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
        let text = "sample_id,group_id,v1\na,g,0\n";
        assert!(matches!(
            parse_votes(text.as_bytes(), "v"),
            Err(Error::Parse { line: 2, .. })
        ));
        let text = "id,group,v1\n";
        assert!(matches!(
            parse_votes(text.as_bytes(), "v"),
            Err(Error::Parse { line: 1, .. })
        ));
        let text = "sample_id,group_id,x1\n";
        assert!(parse_votes(text.as_bytes(), "v").is_err());
    }

    #[test]
    fn vote_csv_round_trips() {
        let records = vec![
            VoteRecord::new("a", "g", vec![0, 4, 4]),
            VoteRecord::new("b", "h", vec![1, 1, 2]),
        ];
        let mut buf = Vec::new();
        write_votes(&mut buf, &records).unwrap();
        assert!(
            String::from_utf8_lossy(&buf).starts_with("sample_id,group_id,v1,v2,v3\na,g,1,5,5\n")
        );
        let (back, _) = parse_votes(buf.as_slice(), "mem").unwrap();
        assert_eq!(back, records);
    }

    #[test]
    fn features_reject_non_numeric() {
        let text = "sample_id,group_id,f1,f2\na,g,1.5,-2\nb,g,NaN,1\n";
        assert!(matches!(
            parse_features(text.as_bytes(), "f"),
            Err(Error::Parse { line: 3, .. })
        ));
        let text = "sample_id,group_id,f1,f2\na,g,1.5,-2e-3\n";
        assert_eq!(
            parse_features(text.as_bytes(), "f").unwrap()[0].2,
            vec![1.5, -2e-3]
        );
    }
}
