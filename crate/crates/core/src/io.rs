//! Text formats: lossless float formatting, the dataset CSV and provenance
//! headers.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{ArealDataset, Likelihood};
use crate::error::{Error, Result};

pub const DATASET_HEADER: [&str; 5] = ["unit", "response", "y", "exposure", "likelihood"];

/// 17 significant digits, enough for an exact `f64` round trip.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

/// Hex-encoded SHA-256 of the given bytes.
pub fn content_hash(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for byte in digest.iter() {
        write!(out, "{byte:02x}").expect("writing to a String cannot fail");
    }
    out
}

/// Config hash and seed stamped on every output file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn comment_line(&self) -> String {
        format!("# config_hash={} seed={}", self.config_hash, self.seed)
    }

    pub fn parse_comment(line: &str) -> Option<Provenance> {
        let rest = line.strip_prefix('#')?.trim();
        let mut hash = None;
        let mut seed = None;
        for token in rest.split_whitespace() {
            if let Some(v) = token.strip_prefix("config_hash=") {
                hash = Some(v.to_string());
            } else if let Some(v) = token.strip_prefix("seed=") {
                seed = v.parse().ok();
            }
        }
        Some(Provenance {
            config_hash: hash?,
            seed: seed?,
        })
    }
}

/// Reads the provenance comment from the first line of a file, if present.
pub fn read_provenance(path: &Path) -> Result<Option<Provenance>> {
    let mut first = String::new();
    BufReader::new(File::open(path)?).read_line(&mut first)?;
    Ok(Provenance::parse_comment(first.trim_end()))
}

/// Opens a CSV writer that first emits the provenance comment.
pub fn csv_writer(path: &Path, provenance: Option<&Provenance>) -> Result<csv::Writer<File>> {
    let mut file = File::create(path)?;
    if let Some(p) = provenance {
        writeln!(file, "{}", p.comment_line())?;
    }
    Ok(csv::Writer::from_writer(file))
}

pub fn write_dataset(path: &Path, data: &ArealDataset, provenance: Option<&Provenance>) -> Result<()> {
    let mut w = csv_writer(path, provenance)?;
    w.write_record(DATASET_HEADER)?;
    let units = data.units();
    for (m, (&y, &e)) in data.y().iter().zip(data.exposure()).enumerate() {
        let (i, j) = (m % units, m / units);
        w.write_record([
            (i + 1).to_string(),
            (j + 1).to_string(),
            y.to_string(),
            fmt_f64(e),
            data.likelihood(j).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<ArealDataset> {
    parse_dataset(File::open(path)?)
}

#[derive(Deserialize)]
struct DatasetRow {
    unit: usize,
    response: usize,
    y: u64,
    exposure: f64,
    likelihood: String,
}

/// Parses the dataset CSV. Every `(unit, response)` pair in
/// `1..=I x 1..=J` must appear exactly once, and each response must use a
/// single likelihood.
pub fn parse_dataset<R: Read>(reader: R) -> Result<ArealDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != DATASET_HEADER {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header '{}'", DATASET_HEADER.join(",")),
        });
    }
    let mut rows = Vec::new();
    for record in rdr.deserialize::<DatasetRow>() {
        let row = record?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Validation("dataset has no rows".into()));
    }
    let units = rows.iter().map(|r| r.unit).max().unwrap_or(0);
    let responses = rows.iter().map(|r| r.response).max().unwrap_or(0);
    if rows.iter().any(|r| r.unit == 0 || r.response == 0) {
        return Err(Error::Validation("unit and response ids are 1-based".into()));
    }
    let n = units * responses;
    let mut y = vec![0u64; n];
    let mut exposure = vec![0.0; n];
    let mut seen = vec![false; n];
    let mut tags: HashMap<usize, Likelihood> = HashMap::new();
    for row in &rows {
        let m = (row.response - 1) * units + (row.unit - 1);
        if std::mem::replace(&mut seen[m], true) {
            return Err(Error::Validation(format!(
                "duplicate row for unit {}, response {}",
                row.unit, row.response
            )));
        }
        let tag: Likelihood = row.likelihood.parse()?;
        if let Some(prev) = tags.insert(row.response, tag) {
            if prev != tag {
                return Err(Error::Validation(format!(
                    "response {} mixes likelihoods",
                    row.response
                )));
            }
        }
        y[m] = row.y;
        exposure[m] = row.exposure;
    }
    if let Some(m) = seen.iter().position(|&s| !s) {
        return Err(Error::Validation(format!(
            "missing row for unit {}, response {}",
            m % units + 1,
            m / units + 1
        )));
    }
    let likelihood = (1..=responses).map(|j| tags[&j]).collect();
    ArealDataset::new(units, responses, y, exposure, likelihood)
}
