//! Rating predictors behind one contract.
//!
//! Collaborative baselines ([`MostPop`], [`UserKnn`], [`ItemKnn`], [`MfModel`])
//! see only ids and ratings. The profile models ([`ProfileRegressor`],
//! [`RemoteScorer`]) see only the profile text and the item title, through
//! [`TextScorer`]; [`ProfileRecommender`] adapts them to [`Recommender`].

pub mod checkpoint;
pub mod knn;
pub mod mf;
pub mod mostpop;
pub mod regressor;
pub mod remote;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Dataset;
use crate::profilegen::GeneratorError;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use knn::{ItemKnn, KnnParams, UserKnn};
pub use mf::{EpochStats, MfModel, MfParams};
pub use mostpop::MostPop;
pub use regressor::{featurize, ProfileRegressor, RegressorParams, TextExample};
pub use remote::{parse_rating, RemoteScorer};

pub const MIN_RATING: f64 = 1.0;
pub const MAX_RATING: f64 = 5.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RecsysError {
    #[error("training data is empty")]
    EmptyTraining,
    #[error("training diverged at epoch {epoch} (non-finite loss)")]
    Diverged { epoch: usize },
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),
    #[error("no profile for users: {}", .0.join(", "))]
    MissingProfiles(Vec<String>),
    #[error("unknown item {0:?}")]
    UnknownItem(String),
    #[error("cannot parse a rating from {0:?}")]
    UnparsableRating(String),
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: String, message: String },
}

pub fn clamp_rating(x: f64) -> f64 {
    x.clamp(MIN_RATING, MAX_RATING)
}

/// Sparse user × item ratings with dense indices. Duplicate (user, item)
/// ratings are averaged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingMatrix {
    users: Vec<String>,
    items: Vec<String>,
    user_index: BTreeMap<String, usize>,
    item_index: BTreeMap<String, usize>,
    /// Per user: (item index, rating), sorted by item index.
    rows: Vec<Vec<(usize, f64)>>,
    /// Per item: (user index, rating), sorted by user index.
    cols: Vec<Vec<(usize, f64)>>,
    /// Raw training records per item, before averaging.
    item_records: Vec<usize>,
    global_mean: f64,
}

impl RatingMatrix {
    pub fn from_triples<U, I>(triples: impl IntoIterator<Item = (U, I, f64)>) -> Result<Self, RecsysError>
    where
        U: Into<String>,
        I: Into<String>,
    {
        let mut sums: BTreeMap<(String, String), (f64, usize)> = BTreeMap::new();
        for (u, i, r) in triples {
            if !(MIN_RATING..=MAX_RATING).contains(&r) {
                return Err(RecsysError::InvalidHyperparameter(format!("rating {r} outside [1, 5]")));
            }
            let e = sums.entry((u.into(), i.into())).or_default();
            e.0 += r;
            e.1 += 1;
        }
        if sums.is_empty() {
            return Err(RecsysError::EmptyTraining);
        }
        let mut user_index = BTreeMap::new();
        let mut item_index = BTreeMap::new();
        for (u, i) in sums.keys() {
            user_index.entry(u.clone()).or_insert(0);
            item_index.entry(i.clone()).or_insert(0);
        }
        let users: Vec<String> = user_index.keys().cloned().collect();
        let items: Vec<String> = item_index.keys().cloned().collect();
        for (n, u) in users.iter().enumerate() {
            user_index.insert(u.clone(), n);
        }
        for (n, i) in items.iter().enumerate() {
            item_index.insert(i.clone(), n);
        }
        let mut rows = vec![Vec::new(); users.len()];
        let mut cols = vec![Vec::new(); items.len()];
        let mut item_records = vec![0; items.len()];
        let mut total = 0.0;
        for ((u, i), (sum, n)) in &sums {
            let (ui, ii) = (user_index[u], item_index[i]);
            let r = sum / *n as f64;
            rows[ui].push((ii, r));
            cols[ii].push((ui, r));
            item_records[ii] += n;
            total += r;
        }
        for row in &mut rows {
            row.sort_by_key(|e| e.0);
        }
        for col in &mut cols {
            col.sort_by_key(|e| e.0);
        }
        Ok(Self {
            global_mean: total / sums.len() as f64,
            users,
            items,
            user_index,
            item_index,
            rows,
            cols,
            item_records,
        })
    }

    pub fn from_dataset(data: &Dataset) -> Result<Self, RecsysError> {
        Self::from_triples(
            data.records()
                .iter()
                .map(|r| (r.user_id.as_str(), r.item_id.as_str(), r.rating as f64)),
        )
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    /// Number of stored (user, item) cells.
    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn user_idx(&self, user: &str) -> Option<usize> {
        self.user_index.get(user).copied()
    }

    pub fn item_idx(&self, item: &str) -> Option<usize> {
        self.item_index.get(item).copied()
    }

    pub fn user_id(&self, idx: usize) -> &str {
        &self.users[idx]
    }

    pub fn item_id(&self, idx: usize) -> &str {
        &self.items[idx]
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }

    pub fn users(&self) -> &[String] {
        &self.users
    }

    pub fn row(&self, user: usize) -> &[(usize, f64)] {
        &self.rows[user]
    }

    pub fn col(&self, item: usize) -> &[(usize, f64)] {
        &self.cols[item]
    }

    pub fn rating(&self, user: usize, item: usize) -> Option<f64> {
        let row = &self.rows[user];
        row.binary_search_by_key(&item, |e| e.0).ok().map(|p| row[p].1)
    }

    /// All cells as (user index, item index, rating), user-major.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(u, row)| row.iter().map(move |&(i, r)| (u, i, r)))
    }

    pub fn global_mean(&self) -> f64 {
        self.global_mean
    }

    pub fn user_mean(&self, user: usize) -> f64 {
        mean(self.rows[user].iter().map(|e| e.1))
    }

    pub fn item_mean(&self, item: usize) -> f64 {
        mean(self.cols[item].iter().map(|e| e.1))
    }

    pub fn item_record_count(&self, item: usize) -> usize {
        self.item_records[item]
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Common contract of every rating model.
pub trait Recommender: Send + Sync {
    fn name(&self) -> &'static str;

    /// Rating estimate in [1, 5].
    fn predict(&self, user: &str, item: &str) -> Result<f64, RecsysError>;

    /// Ranking score; rating models rank by their prediction.
    fn score(&self, user: &str, item: &str) -> Result<f64, RecsysError> {
        self.predict(user, item)
    }
}

/// Rates an item title for a profile text. No ids are involved.
pub trait TextScorer: Send + Sync {
    fn id(&self) -> String;

    fn predict_text(&self, profile: &str, title: &str) -> Result<f64, RecsysError>;

    /// Ratings of several titles under one profile.
    fn predict_titles(&self, profile: &str, titles: &[&str]) -> Result<Vec<f64>, RecsysError> {
        titles.iter().map(|t| self.predict_text(profile, t)).collect()
    }
}

impl<T: TextScorer + ?Sized> TextScorer for &T {
    fn id(&self) -> String {
        (**self).id()
    }

    fn predict_text(&self, profile: &str, title: &str) -> Result<f64, RecsysError> {
        (**self).predict_text(profile, title)
    }

    fn predict_titles(&self, profile: &str, titles: &[&str]) -> Result<Vec<f64>, RecsysError> {
        (**self).predict_titles(profile, titles)
    }
}

impl<T: TextScorer + ?Sized> TextScorer for std::sync::Arc<T> {
    fn id(&self) -> String {
        (**self).id()
    }

    fn predict_text(&self, profile: &str, title: &str) -> Result<f64, RecsysError> {
        (**self).predict_text(profile, title)
    }

    fn predict_titles(&self, profile: &str, titles: &[&str]) -> Result<Vec<f64>, RecsysError> {
        (**self).predict_titles(profile, titles)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredItem {
    pub item: String,
    pub score: f64,
}

/// Sorts by score descending, ties by item id ascending, keeps `k`.
pub fn rank_scored(mut scored: Vec<ScoredItem>, k: usize) -> Vec<ScoredItem> {
    scored.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.item.cmp(&b.item)));
    scored.truncate(k);
    scored
}

/// Top-`k` of `candidates` for `user` under `model.score`.
pub fn top_k<S: AsRef<str>>(
    model: &dyn Recommender,
    user: &str,
    candidates: &[S],
    k: usize,
) -> Result<Vec<ScoredItem>, RecsysError> {
    let scored = candidates
        .iter()
        .map(|item| {
            let item = item.as_ref();
            model.score(user, item).map(|score| ScoredItem {
                item: item.to_string(),
                score,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(rank_scored(scored, k))
}

/// Top-`k` of `candidates` for a profile text. `titles` maps item id to title.
pub fn top_k_for_profile<S: AsRef<str>>(
    scorer: &dyn TextScorer,
    profile: &str,
    candidates: &[S],
    titles: &BTreeMap<String, String>,
    k: usize,
) -> Result<Vec<ScoredItem>, RecsysError> {
    let item_titles = candidates
        .iter()
        .map(|item| {
            titles
                .get(item.as_ref())
                .map(String::as_str)
                .ok_or_else(|| RecsysError::UnknownItem(item.as_ref().to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let scores = scorer.predict_titles(profile, &item_titles)?;
    let scored = candidates
        .iter()
        .zip(scores)
        .map(|(item, score)| ScoredItem {
            item: item.as_ref().to_string(),
            score,
        })
        .collect();
    Ok(rank_scored(scored, k))
}

/// A [`TextScorer`] bound to per-user profiles and item titles.
pub struct ProfileRecommender<S> {
    pub scorer: S,
    pub profiles: BTreeMap<String, String>,
    pub titles: BTreeMap<String, String>,
}

impl<S: TextScorer> Recommender for ProfileRecommender<S> {
    fn name(&self) -> &'static str {
        "upr"
    }

    fn predict(&self, user: &str, item: &str) -> Result<f64, RecsysError> {
        let profile = self
            .profiles
            .get(user)
            .ok_or_else(|| RecsysError::MissingProfiles(vec![user.to_string()]))?;
        let title = self
            .titles
            .get(item)
            .ok_or_else(|| RecsysError::UnknownItem(item.to_string()))?;
        self.scorer.predict_text(profile, title)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn duplicates_are_averaged() {
        let m = RatingMatrix::from_triples([("u", "a", 4.0), ("u", "a", 2.0), ("v", "a", 5.0)]).unwrap();
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.rating(m.user_idx("u").unwrap(), 0), Some(3.0));
        assert_eq!(m.item_record_count(0), 3);
        assert_eq!(m.global_mean(), 4.0);
    }

    #[test]
    fn empty_and_out_of_range() {
        let none: Vec<(String, String, f64)> = vec![];
        assert_eq!(RatingMatrix::from_triples(none), Err(RecsysError::EmptyTraining));
        assert!(RatingMatrix::from_triples([("u", "a", 0.0)]).is_err());
    }

    fn scored(pairs: &[(&str, f64)]) -> Vec<ScoredItem> {
        pairs
            .iter()
            .map(|(i, s)| ScoredItem { item: i.to_string(), score: *s })
            .collect()
    }

    fn ids(list: &[ScoredItem]) -> Vec<&str> {
        list.iter().map(|s| s.item.as_str()).collect()
    }

    #[test]
    fn ties_break_by_item_id() {
        let ranked = rank_scored(scored(&[("c", 1.0), ("a", 1.0), ("b", 2.0)]), 10);
        assert_eq!(ids(&ranked), vec!["b", "a", "c"]);
        assert_eq!(ids(&rank_scored(scored(&[("c", 1.0), ("a", 1.0), ("b", 2.0)]), 2)), vec!["b", "a"]);
    }

    proptest! {
        #[test]
        fn top_k_is_a_permutation_prefix(
            scores in prop::collection::vec(-100i32..100, 0..30),
            k in 0usize..40,
            scale in 0.01f64..100.0,
            shift in -50.0f64..50.0,
        ) {
            let items: Vec<ScoredItem> = scores
                .iter()
                .enumerate()
                .map(|(n, s)| ScoredItem { item: format!("i{n:02}"), score: *s as f64 })
                .collect();
            let full = rank_scored(items.clone(), usize::MAX);
            let ranked = rank_scored(items.clone(), k);
            prop_assert_eq!(ranked.len(), k.min(items.len()));
            prop_assert_eq!(ids(&ranked), ids(&full[..ranked.len()]));
            let mut seen: Vec<&str> = ids(&full);
            seen.sort();
            seen.dedup();
            prop_assert_eq!(seen.len(), items.len());
            let affine: Vec<ScoredItem> = items
                .iter()
                .map(|s| ScoredItem { item: s.item.clone(), score: s.score * scale + shift })
                .collect();
            let affine_ranked = rank_scored(affine, k);
            prop_assert_eq!(ids(&affine_ranked), ids(&ranked));
        }
    }
}
