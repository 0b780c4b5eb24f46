//! Set-based feature preferences: stem grouping and utility ranking.
//!
//! For a user with item set `I` and a feature stem `f` covering items `I_f`:
//!
//! * `mean(f)`  = average normalized rating over `I_f`
//! * `cov(f)`   = |I_f| / |I|
//! * `sig(f)`   = min(2, |mean(f)| / (std(f) / sqrt(|I_f|))), std being the sample standard deviation
//! * `U(f)`     = |mean(f)| * cov(f) * sig(f)
//!
//! Items are counted per review record.

pub mod porter;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Dataset;

/// Cap on the significance score: two standard errors.
pub const SIGNIFICANCE_CAP: f64 = 2.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PreferenceError {
    #[error("unknown feature {0:?}")]
    UnknownFeature(String),
    #[error("unknown user {0:?}")]
    UnknownUser(String),
    #[error("coverage needs 1 <= item_count <= total_items, got {item_count}/{total_items}")]
    InvalidCoverage { item_count: usize, total_items: usize },
    #[error("cannot read blocklist {path}: {message}")]
    Blocklist { path: String, message: String },
}

/// Grouping key for a feature word: lowercase, then Porter stemming applied
/// until the word stops changing. A single Porter pass is not idempotent
/// ("agreed" -> "agre" -> "agr"), the fixpoint is.
pub fn stem_feature(word: &str) -> String {
    let mut current = word.trim().to_lowercase();
    // every pass shortens the word or rewrites a suffix in one direction
    for _ in 0..=current.len() {
        let next = porter::stem(&current);
        if next == current {
            break;
        }
        current = next;
    }
    current
}

/// Stems excluded from ranking because they are generic for the domain.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Blocklist {
    stems: BTreeSet<String>,
}

impl Blocklist {
    pub fn new<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self {
            stems: words
                .into_iter()
                .map(|w| stem_feature(w.as_ref()))
                .filter(|s| !s.is_empty())
                .collect(),
        }
    }

    /// Generic domain words: film, movie, hotel.
    pub fn domain_defaults() -> Self {
        Self::new(["film", "movie", "hotel"])
    }

    /// One word per line; blank lines and `#` comments ignored.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, PreferenceError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| PreferenceError::Blocklist {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Ok(Self::new(
            text.lines()
                .map(|l| l.split('#').next().unwrap_or("").trim())
                .filter(|l| !l.is_empty()),
        ))
    }

    pub fn contains_stem(&self, stem: &str) -> bool {
        self.stems.contains(stem)
    }

    pub fn blocks(&self, word: &str) -> bool {
        self.contains_stem(&stem_feature(word))
    }
}

/// Groups feature words by stem, dropping blocklisted stems.
pub fn stem_group<S: AsRef<str>>(
    features: &[S],
    blocklist: &Blocklist,
) -> BTreeMap<String, BTreeSet<String>> {
    let mut groups: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for feature in features {
        let surface = feature.as_ref().trim().to_lowercase();
        let stem = stem_feature(&surface);
        if stem.is_empty() || blocklist.contains_stem(&stem) {
            continue;
        }
        groups.entry(stem).or_default().insert(surface);
    }
    groups
}

/// One of the user's items with its normalized rating and feature stem.
#[derive(Debug, Clone, PartialEq)]
pub struct UserItem<'a> {
    pub item: &'a str,
    pub rating: f64,
    pub stem: &'a str,
}

pub fn mean_rating(user_items: &[UserItem<'_>], stem: &str) -> Result<f64, PreferenceError> {
    let (sum, n) = user_items
        .iter()
        .filter(|u| u.stem == stem)
        .fold((0.0, 0usize), |(s, n), u| (s + u.rating, n + 1));
    if n == 0 {
        return Err(PreferenceError::UnknownFeature(stem.to_string()));
    }
    Ok(sum / n as f64)
}

pub fn coverage(item_count: usize, total_items: usize) -> Result<f64, PreferenceError> {
    if total_items == 0 || item_count == 0 || item_count > total_items {
        return Err(PreferenceError::InvalidCoverage {
            item_count,
            total_items,
        });
    }
    Ok(item_count as f64 / total_items as f64)
}

/// `min(2, |mean| / (std / sqrt(n)))`. When the standard error is zero or
/// undefined (std = 0 or n = 1) the cap is returned for a non-zero mean and
/// 0 for a zero mean.
pub fn significance(mean_rating: f64, rating_std: f64, item_count: usize) -> f64 {
    let magnitude = mean_rating.abs();
    if item_count <= 1 || rating_std == 0.0 {
        return if magnitude > 0.0 { SIGNIFICANCE_CAP } else { 0.0 };
    }
    let standard_error = rating_std / (item_count as f64).sqrt();
    (magnitude / standard_error).min(SIGNIFICANCE_CAP)
}

pub fn utility(mean_rating: f64, coverage: f64, significance: f64) -> f64 {
    mean_rating.abs() * coverage * significance
}

/// Sample standard deviation (n - 1 denominator); zero for fewer than two values.
pub fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (ss / (n - 1.0)).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub stem: String,
    pub surface_forms: BTreeSet<String>,
    pub item_count: usize,
    pub mean_rating: f64,
    pub rating_std: f64,
    pub coverage: f64,
    pub significance: f64,
    pub utility: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRanking {
    pub user_id: String,
    pub entries: Vec<FeatureStats>,
    pub k: usize,
}

impl FeatureRanking {
    pub fn stems(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.stem.as_str())
    }

    pub fn contains_stem(&self, stem: &str) -> bool {
        self.entries.iter().any(|e| e.stem == stem)
    }

    /// Rows in the ranking export schema.
    pub fn export_rows(&self) -> Vec<RankingRow> {
        self.entries
            .iter()
            .map(|e| RankingRow {
                user: self.user_id.clone(),
                stem: e.stem.clone(),
                utility: e.utility,
                mean: e.mean_rating,
                coverage: e.coverage,
                significance: e.significance,
                n: e.item_count,
            })
            .collect()
    }
}

/// A line of the ranking JSONL export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingRow {
    pub user: String,
    pub stem: String,
    pub utility: f64,
    pub mean: f64,
    pub coverage: f64,
    pub significance: f64,
    pub n: usize,
}

/// Statistics for every non-blocked stem of a user, in stem order.
pub fn feature_stats(
    user: &str,
    data: &Dataset,
    blocklist: &Blocklist,
) -> Result<Vec<FeatureStats>, PreferenceError> {
    if !data.has_user(user) {
        return Err(PreferenceError::UnknownUser(user.to_string()));
    }
    let records: Vec<_> = data.user_records(user).collect();
    let total = records.len();
    let stems: Vec<String> = records.iter().map(|r| stem_feature(&r.feature)).collect();
    let items: Vec<UserItem<'_>> = records
        .iter()
        .zip(&stems)
        .map(|(r, stem)| UserItem {
            item: &r.item_id,
            rating: r.normalized_rating(),
            stem,
        })
        .collect();

    let mut groups: BTreeMap<&str, (Vec<f64>, BTreeSet<String>)> = BTreeMap::new();
    for (record, item) in records.iter().zip(&items) {
        if item.stem.is_empty() || blocklist.contains_stem(item.stem) {
            continue;
        }
        let entry = groups.entry(item.stem).or_default();
        entry.0.push(item.rating);
        entry.1.insert(record.feature.trim().to_lowercase());
    }

    groups
        .into_iter()
        .map(|(stem, (ratings, surface_forms))| {
            let n = ratings.len();
            let mean = mean_rating(&items, stem)?;
            let std = sample_std(&ratings);
            let cov = coverage(n, total)?;
            let sig = significance(mean, std, n);
            Ok(FeatureStats {
                stem: stem.to_string(),
                surface_forms,
                item_count: n,
                mean_rating: mean,
                rating_std: std,
                coverage: cov,
                significance: sig,
                utility: utility(mean, cov, sig),
            })
        })
        .collect()
}

/// Top-`k` stems of a user by utility, ties broken by stem.
pub fn rank_features(
    user: &str,
    data: &Dataset,
    k: usize,
    blocklist: &Blocklist,
) -> Result<FeatureRanking, PreferenceError> {
    let mut entries = feature_stats(user, data, blocklist)?;
    entries.sort_by(|a, b| b.utility.total_cmp(&a.utility).then_with(|| a.stem.cmp(&b.stem)));
    entries.truncate(k);
    Ok(FeatureRanking {
        user_id: user.to_string(),
        entries,
        k,
    })
}

/// Up to `n` of the user's explanations carrying `stem`, sampled without
/// replacement. The draw depends only on (seed, user, stem).
pub fn select_reviews(data: &Dataset, user: &str, stem: &str, n: usize, seed: u64) -> Vec<String> {
    let pool: Vec<&str> = data
        .user_records(user)
        .filter(|r| stem_feature(&r.feature) == stem)
        .map(|r| r.explanation.as_str())
        .collect();
    let amount = n.min(pool.len());
    let mut rng = ChaCha8Rng::seed_from_u64(crate::mix_seed(seed, &[user, stem]));
    sample(&mut rng, pool.len(), amount)
        .into_iter()
        .map(|i| pool[i].to_string())
        .collect()
}

/// Item id → the stem most often attached to it (ties: smallest stem).
pub fn item_feature_map(data: &Dataset) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for item in data.items() {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for r in data.item_records(item) {
            *counts.entry(stem_feature(&r.feature)).or_default() += 1;
        }
        let best = counts
            .into_iter()
            .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(&a.0)))
            .map(|(stem, _)| stem)
            .unwrap_or_default();
        out.insert(item.to_string(), best);
    }
    out
}
