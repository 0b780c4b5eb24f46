//! Review corpora: records, indexed datasets, ingest, statistics and the
//! warm-start train/validation/test split.

mod io;
mod split;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use io::{load_records, write_records, IngestReport, RecordFormat};
pub use split::{split_warm_start, SplitBundle, SplitRatios, SplitReport};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("zero valid records in {0}")]
    NoValidRecords(String),
    #[error("rating {0} is outside 1..=5")]
    RatingOutOfRange(i64),
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("invalid split ratios {0:?}")]
    InvalidRatios((f64, f64, f64)),
    #[error("no user has enough records to split (need at least {0})")]
    NothingToSplit(usize),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// One user-item interaction with its review explanation and extracted feature word.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ReviewRecord {
    #[serde(rename = "user")]
    pub user_id: String,
    #[serde(rename = "item")]
    pub item_id: String,
    #[serde(rename = "title")]
    pub item_title: String,
    pub rating: u8,
    pub explanation: String,
    pub feature: String,
}

impl ReviewRecord {
    /// Checks the record invariants: rating in 1..=5, non-empty title, and a
    /// single non-empty feature token.
    pub fn validate(&self) -> Result<(), CorpusError> {
        if !(1..=5).contains(&self.rating) {
            return Err(CorpusError::RatingOutOfRange(self.rating as i64));
        }
        if self.user_id.trim().is_empty() {
            return Err(CorpusError::InvalidRecord("empty user id".into()));
        }
        if self.item_id.trim().is_empty() {
            return Err(CorpusError::InvalidRecord("empty item id".into()));
        }
        if self.item_title.trim().is_empty() {
            return Err(CorpusError::InvalidRecord("missing title".into()));
        }
        let feature = self.feature.trim();
        if feature.is_empty() {
            return Err(CorpusError::InvalidRecord("empty feature".into()));
        }
        if feature.split_whitespace().count() != 1 {
            return Err(CorpusError::InvalidRecord(format!(
                "feature {feature:?} is not a single token"
            )));
        }
        Ok(())
    }

    pub fn normalized_rating(&self) -> f64 {
        normalize_rating(self.rating as i64).expect("validated rating")
    }
}

/// Maps a 1..=5 star rating linearly onto [-1, 1], with 3 as neutral.
pub fn normalize_rating(rating: i64) -> Result<f64, CorpusError> {
    if !(1..=5).contains(&rating) {
        return Err(CorpusError::RatingOutOfRange(rating));
    }
    Ok((rating as f64 - 3.0) / 2.0)
}

/// Inverse of [`normalize_rating`].
pub fn denormalize_rating(normalized: f64) -> Result<u8, CorpusError> {
    let stars = (normalized * 2.0 + 3.0).round();
    if !(1.0..=5.0).contains(&stars) || !normalized.is_finite() {
        return Err(CorpusError::RatingOutOfRange(stars as i64));
    }
    Ok(stars as u8)
}

/// An immutable, indexed collection of review records.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    records: Vec<ReviewRecord>,
    by_user: BTreeMap<String, Vec<usize>>,
    by_item: BTreeMap<String, Vec<usize>>,
}

impl Dataset {
    pub fn new(records: Vec<ReviewRecord>) -> Self {
        let mut by_user: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        let mut by_item: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (pos, record) in records.iter().enumerate() {
            by_user.entry(record.user_id.clone()).or_default().push(pos);
            by_item.entry(record.item_id.clone()).or_default().push(pos);
        }
        Self {
            records,
            by_user,
            by_item,
        }
    }

    pub fn records(&self) -> &[ReviewRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<ReviewRecord> {
        self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_users(&self) -> usize {
        self.by_user.len()
    }

    pub fn n_items(&self) -> usize {
        self.by_item.len()
    }

    /// User ids in ascending order.
    pub fn users(&self) -> impl Iterator<Item = &str> {
        self.by_user.keys().map(String::as_str)
    }

    /// Item ids in ascending order.
    pub fn items(&self) -> impl Iterator<Item = &str> {
        self.by_item.keys().map(String::as_str)
    }

    pub fn has_user(&self, user: &str) -> bool {
        self.by_user.contains_key(user)
    }

    pub fn has_item(&self, item: &str) -> bool {
        self.by_item.contains_key(item)
    }

    pub fn user_positions(&self, user: &str) -> &[usize] {
        self.by_user.get(user).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn item_positions(&self, item: &str) -> &[usize] {
        self.by_item.get(item).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn user_records<'a>(&'a self, user: &str) -> impl Iterator<Item = &'a ReviewRecord> + 'a {
        let positions = self.by_user.get(user).map(Vec::as_slice).unwrap_or(&[]);
        positions.iter().map(move |&p| &self.records[p])
    }

    pub fn item_records<'a>(&'a self, item: &str) -> impl Iterator<Item = &'a ReviewRecord> + 'a {
        let positions = self.by_item.get(item).map(Vec::as_slice).unwrap_or(&[]);
        positions.iter().map(move |&p| &self.records[p])
    }

    /// Item id → title, first title seen wins.
    pub fn item_titles(&self) -> BTreeMap<String, String> {
        self.by_item
            .iter()
            .map(|(item, positions)| (item.clone(), self.records[positions[0]].item_title.clone()))
            .collect()
    }

    pub fn filter(&self, mut keep: impl FnMut(&ReviewRecord) -> bool) -> Dataset {
        Dataset::new(self.records.iter().filter(|r| keep(r)).cloned().collect())
    }
}

/// Corpus summary in the layout of a dataset-statistics table.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_users: usize,
    pub n_items: usize,
    pub n_records: usize,
    pub n_features: usize,
    pub records_per_user: f64,
    pub records_per_item: f64,
    pub words_per_explanation: f64,
}

pub fn stats(data: &Dataset) -> DatasetStats {
    if data.is_empty() {
        return DatasetStats::default();
    }
    let features: BTreeSet<String> = data
        .records()
        .iter()
        .map(|r| r.feature.trim().to_lowercase())
        .collect();
    let words: usize = data
        .records()
        .iter()
        .map(|r| r.explanation.split_whitespace().count())
        .sum();
    let n = data.len() as f64;
    DatasetStats {
        n_users: data.n_users(),
        n_items: data.n_items(),
        n_records: data.len(),
        n_features: features.len(),
        records_per_user: n / data.n_users() as f64,
        records_per_item: n / data.n_items() as f64,
        words_per_explanation: words as f64 / n,
    }
}

#[cfg(test)]
pub(crate) fn record(user: &str, item: &str, rating: u8, feature: &str) -> ReviewRecord {
    ReviewRecord {
        user_id: user.into(),
        item_id: item.into(),
        item_title: format!("Title of {item}"),
        rating,
        explanation: format!("the {feature} was notable"),
        feature: feature.into(),
    }
}
