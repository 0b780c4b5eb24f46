use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{CorpusError, Dataset, ReviewRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordFormat {
    Jsonl,
    Csv,
}

impl std::str::FromStr for RecordFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" | "json" => Ok(Self::Jsonl),
            "csv" => Ok(Self::Csv),
            other => Err(format!("unknown record format {other:?} (expected jsonl or csv)")),
        }
    }
}

/// What happened during ingest: how many rows were kept and why the rest were not.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub loaded: usize,
    pub skipped: usize,
    pub reasons: BTreeMap<String, usize>,
}

impl IngestReport {
    fn skip(&mut self, reason: &str) {
        self.skipped += 1;
        *self.reasons.entry(reason.to_string()).or_default() += 1;
    }
}

impl std::fmt::Display for IngestReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} loaded, {} skipped", self.loaded, self.skipped)?;
        for (reason, n) in &self.reasons {
            write!(f, "; {reason}: {n}")?;
        }
        Ok(())
    }
}

/// Loads records from a JSONL or CSV file. Rows that fail validation are
/// skipped and counted in the report; a file with no valid rows is an error.
pub fn load_records(
    path: impl AsRef<Path>,
    format: RecordFormat,
) -> Result<(Dataset, IngestReport), CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut report = IngestReport::default();
    let mut records = Vec::new();
    match format {
        RecordFormat::Jsonl => {
            for line in BufReader::new(file).lines() {
                let line = line.map_err(|source| CorpusError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<Value>(&line) {
                    Ok(value) => admit(record_from_json(&value), &mut records, &mut report),
                    Err(_) => report.skip("malformed json"),
                }
            }
        }
        RecordFormat::Csv => {
            let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(file);
            let headers = reader.headers()?.clone();
            for row in reader.records() {
                let Ok(row) = row else {
                    report.skip("malformed csv row");
                    continue;
                };
                let field = |name: &str| {
                    headers
                        .iter()
                        .position(|h| h.trim() == name)
                        .and_then(|i| row.get(i))
                        .map(str::to_string)
                };
                let raw = RawRecord {
                    user: field("user"),
                    item: field("item"),
                    title: field("title"),
                    rating: field("rating").map(Value::String),
                    explanation: field("explanation"),
                    feature: field("feature"),
                };
                admit(raw.into_record(), &mut records, &mut report);
            }
        }
    }
    if records.is_empty() {
        return Err(CorpusError::NoValidRecords(path.display().to_string()));
    }
    report.loaded = records.len();
    if report.skipped > 0 {
        tracing::warn!(path = %path.display(), "{report}");
    }
    Ok((Dataset::new(records), report))
}

/// Writes records as canonical JSONL, one record per line.
pub fn write_records(path: impl AsRef<Path>, records: &[ReviewRecord]) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let io_err = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    for record in records {
        serde_json::to_writer(&mut out, record)?;
        out.write_all(b"\n").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

fn admit(
    parsed: Result<ReviewRecord, &'static str>,
    records: &mut Vec<ReviewRecord>,
    report: &mut IngestReport,
) {
    match parsed {
        Ok(record) => match record.validate() {
            Ok(()) => records.push(record),
            Err(CorpusError::RatingOutOfRange(_)) => report.skip("rating out of range"),
            Err(CorpusError::InvalidRecord(msg)) if msg == "missing title" => {
                report.skip("missing title")
            }
            Err(_) => report.skip("invalid field"),
        },
        Err(reason) => report.skip(reason),
    }
}

struct RawRecord {
    user: Option<String>,
    item: Option<String>,
    title: Option<String>,
    rating: Option<Value>,
    explanation: Option<String>,
    feature: Option<String>,
}

impl RawRecord {
    fn into_record(self) -> Result<ReviewRecord, &'static str> {
        let title = self.title.filter(|t| !t.trim().is_empty()).ok_or("missing title")?;
        let rating = self.rating.as_ref().and_then(parse_rating).ok_or("bad rating")?;
        Ok(ReviewRecord {
            user_id: self.user.ok_or("missing user")?.trim().to_string(),
            item_id: self.item.ok_or("missing item")?.trim().to_string(),
            item_title: title.trim().to_string(),
            rating,
            explanation: self.explanation.ok_or("missing explanation")?,
            feature: self.feature.ok_or("missing feature")?.trim().to_string(),
        })
    }
}

fn record_from_json(value: &Value) -> Result<ReviewRecord, &'static str> {
    let text = |key: &str| match value.get(key) {
        Some(Value::String(s)) => Some(s.clone()),
        Some(Value::Number(n)) => Some(n.to_string()),
        _ => None,
    };
    RawRecord {
        user: text("user"),
        item: text("item"),
        title: text("title"),
        rating: value.get("rating").cloned(),
        explanation: text("explanation"),
        feature: text("feature"),
    }
    .into_record()
}

/// Accepts integral numbers (`4`, `4.0`) or their string forms. Values
/// outside 1..=5 come back as-is so validation can report them.
fn parse_rating(value: &Value) -> Option<u8> {
    let number = match value {
        Value::Number(n) => n.as_f64()?,
        Value::String(s) => s.trim().parse::<f64>().ok()?,
        _ => return None,
    };
    if number.fract() != 0.0 || !(0.0..=255.0).contains(&number) {
        return None;
    }
    Some(number as u8)
}
