//! Metrics and experiment drivers.
//!
//! Ranking metrics work on condensed lists: each user's ranking holds only
//! the items that user rated in the test split. RMSE and MAE are averaged
//! over all test records; nDCG and MAP over users.

mod ablation;
mod benchmark;
mod scrutability;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Dataset;
use crate::preference::PreferenceError;
use crate::profilegen::ProfileError;
use crate::recsys::{Recommender, RecsysError};

pub use ablation::{feature_ablation, AblationConfig, AblationPoint};
pub use benchmark::{benchmark, BenchmarkRow, BenchmarkTable};
pub use scrutability::{
    scrutability_experiment, ScrutabilityConfig, ScrutabilityReport, SeedOutcome, SCRUTABILITY_SEEDS,
};

/// Relevance threshold for MAP.
pub const RELEVANCE_THRESHOLD: f64 = 4.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("predictions ({preds}) and truths ({truths}) differ in length")]
    LengthMismatch { preds: usize, truths: usize },
    #[error("nothing to evaluate")]
    Empty,
    #[error("condensed list for {0:?} lists an item twice")]
    DuplicateItem(String),
    #[error("no user has a relevant test item")]
    NoRelevantItems,
    #[error("need at least {need} recommendations, got {got}")]
    TooFewRecommendations { got: usize, need: usize },
    #[error("feature {0:?} does not occur in the corpus")]
    UnknownFeature(String),
    #[error("not enough data: {0}")]
    InsufficientData(String),
    #[error(transparent)]
    Recsys(#[from] RecsysError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Preference(#[from] PreferenceError),
}

fn check_lengths(preds: &[f64], truths: &[f64]) -> Result<(), EvalError> {
    if preds.len() != truths.len() {
        return Err(EvalError::LengthMismatch {
            preds: preds.len(),
            truths: truths.len(),
        });
    }
    if preds.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(())
}

pub fn rmse(preds: &[f64], truths: &[f64]) -> Result<f64, EvalError> {
    check_lengths(preds, truths)?;
    let sse: f64 = preds.iter().zip(truths).map(|(p, t)| (p - t).powi(2)).sum();
    Ok((sse / preds.len() as f64).sqrt())
}

pub fn mae(preds: &[f64], truths: &[f64]) -> Result<f64, EvalError> {
    check_lengths(preds, truths)?;
    let sae: f64 = preds.iter().zip(truths).map(|(p, t)| (p - t).abs()).sum();
    Ok(sae / preds.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ListEntry {
    pub item: String,
    pub truth: f64,
    pub score: f64,
}

/// One user's test items with true ratings and model scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CondensedList {
    pub user_id: String,
    entries: Vec<ListEntry>,
}

impl CondensedList {
    pub fn new(user_id: impl Into<String>, entries: Vec<ListEntry>) -> Result<Self, EvalError> {
        let user_id = user_id.into();
        if entries.is_empty() {
            return Err(EvalError::Empty);
        }
        let mut seen = BTreeSet::new();
        if !entries.iter().all(|e| seen.insert(e.item.as_str())) {
            return Err(EvalError::DuplicateItem(user_id));
        }
        Ok(Self { user_id, entries })
    }

    pub fn entries(&self) -> &[ListEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// True ratings in model order: score descending, ties by item id.
    pub fn ranked_truths(&self) -> Vec<f64> {
        let mut order: Vec<&ListEntry> = self.entries.iter().collect();
        order.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.item.cmp(&b.item)));
        order.iter().map(|e| e.truth).collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gain {
    /// gain = true rating
    #[default]
    Linear,
    /// gain = 2^rating - 1
    Exponential,
}

impl Gain {
    fn apply(self, rating: f64) -> f64 {
        match self {
            Gain::Linear => rating,
            Gain::Exponential => rating.exp2() - 1.0,
        }
    }
}

fn dcg(truths: &[f64], k: usize, gain: Gain) -> f64 {
    truths
        .iter()
        .take(k)
        .enumerate()
        .map(|(r, &t)| gain.apply(t) / ((r + 2) as f64).log2())
        .sum()
}

pub fn ndcg_at_k(list: &CondensedList, k: usize, gain: Gain) -> f64 {
    let ranked = list.ranked_truths();
    let mut ideal = ranked.clone();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let idcg = dcg(&ideal, k, gain);
    if idcg == 0.0 {
        // every gain is zero: any order is ideal
        return 1.0;
    }
    dcg(&ranked, k, gain) / idcg
}

/// Average precision, or `None` when the list has no relevant item.
pub fn average_precision(list: &CondensedList, threshold: f64) -> Option<f64> {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (r, t) in list.ranked_truths().into_iter().enumerate() {
        if t >= threshold {
            hits += 1;
            sum += hits as f64 / (r + 1) as f64;
        }
    }
    (hits > 0).then(|| sum / hits as f64)
}

/// Mean AP over users with at least one relevant item.
pub fn mean_average_precision(lists: &[CondensedList], threshold: f64) -> Result<f64, EvalError> {
    let aps: Vec<f64> = lists
        .iter()
        .filter_map(|l| average_precision(l, threshold))
        .collect();
    if aps.is_empty() {
        return Err(EvalError::NoRelevantItems);
    }
    let skipped = lists.len() - aps.len();
    if skipped > 0 {
        tracing::debug!(skipped, "users without relevant items left out of MAP");
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

/// Share of the first `k` recommendations whose feature is `target`.
pub fn coverage_at_k<S: AsRef<str>>(
    recs: &[S],
    feature_of: &BTreeMap<String, String>,
    target: &str,
    k: usize,
) -> Result<f64, EvalError> {
    if recs.len() < k || k == 0 {
        return Err(EvalError::TooFewRecommendations { got: recs.len(), need: k.max(1) });
    }
    let hits = recs[..k]
        .iter()
        .filter(|i| feature_of.get(i.as_ref()).is_some_and(|f| f == target))
        .count();
    Ok(hits as f64 / k as f64)
}

pub fn coverage_at_10<S: AsRef<str>>(
    recs: &[S],
    feature_of: &BTreeMap<String, String>,
    target: &str,
) -> Result<f64, EvalError> {
    coverage_at_k(recs, feature_of, target, 10)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserMetrics {
    pub user: String,
    pub n_items: usize,
    pub ndcg_at_10: f64,
    pub average_precision: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rmse: f64,
    pub mae: f64,
    pub ndcg_at_10: f64,
    pub map: f64,
    pub n_predictions: usize,
    pub n_users: usize,
    /// Users whose condensed list has a single item (nDCG 1 by definition).
    pub single_item_users: usize,
    /// Users left out of MAP for having no relevant item.
    pub map_skipped_users: usize,
    pub gain: Gain,
    pub per_user: Vec<UserMetrics>,
}

/// Evaluates `model` on every test record: `predict` for the error metrics,
/// `score` for the condensed rankings.
pub fn evaluate(model: &dyn Recommender, test: &Dataset, gain: Gain) -> Result<MetricReport, EvalError> {
    use rayon::prelude::*;

    if test.is_empty() {
        return Err(EvalError::Empty);
    }
    let users: Vec<&str> = test.users().collect();
    let per_user: Vec<(Vec<(f64, f64)>, CondensedList)> = users
        .par_iter()
        .map(|user| {
            let mut pairs = Vec::new();
            let mut by_item: BTreeMap<&str, (f64, usize, f64)> = BTreeMap::new();
            for r in test.user_records(user) {
                let truth = r.rating as f64;
                let pred = model.predict(user, &r.item_id)?;
                pairs.push((pred, truth));
                let e = by_item.entry(&r.item_id).or_insert((0.0, 0, 0.0));
                e.0 += truth;
                e.1 += 1;
                if e.1 == 1 {
                    e.2 = model.score(user, &r.item_id)?;
                }
            }
            let entries = by_item
                .into_iter()
                .map(|(item, (sum, n, score))| ListEntry {
                    item: item.to_string(),
                    truth: sum / n as f64,
                    score,
                })
                .collect();
            Ok((pairs, CondensedList::new(*user, entries)?))
        })
        .collect::<Result<Vec<_>, EvalError>>()?;

    let (preds, truths): (Vec<f64>, Vec<f64>) = per_user.iter().flat_map(|(p, _)| p.iter().copied()).unzip();
    let lists: Vec<CondensedList> = per_user.into_iter().map(|(_, l)| l).collect();
    report_from(&preds, &truths, &lists, gain)
}

/// Builds a report from flat predictions and per-user condensed lists.
pub fn report_from(
    preds: &[f64],
    truths: &[f64],
    lists: &[CondensedList],
    gain: Gain,
) -> Result<MetricReport, EvalError> {
    let per_user: Vec<UserMetrics> = lists
        .iter()
        .map(|l| UserMetrics {
            user: l.user_id.clone(),
            n_items: l.len(),
            ndcg_at_10: ndcg_at_k(l, 10, gain),
            average_precision: average_precision(l, RELEVANCE_THRESHOLD),
        })
        .collect();
    if per_user.is_empty() {
        return Err(EvalError::Empty);
    }
    let map_users = per_user.iter().filter(|u| u.average_precision.is_some()).count();
    Ok(MetricReport {
        rmse: rmse(preds, truths)?,
        mae: mae(preds, truths)?,
        ndcg_at_10: per_user.iter().map(|u| u.ndcg_at_10).sum::<f64>() / per_user.len() as f64,
        map: mean_average_precision(lists, RELEVANCE_THRESHOLD)?,
        n_predictions: preds.len(),
        n_users: per_user.len(),
        single_item_users: lists.iter().filter(|l| l.len() == 1).count(),
        map_skipped_users: per_user.len() - map_users,
        gain,
        per_user,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn list(pairs: &[(f64, f64)]) -> CondensedList {
        CondensedList::new(
            "u",
            pairs
                .iter()
                .enumerate()
                .map(|(n, &(truth, score))| ListEntry { item: format!("i{n:02}"), truth, score })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn error_metric_examples() {
        assert_eq!(rmse(&[2.0, 3.0], &[2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(rmse(&[1.0, 5.0], &[5.0, 1.0]).unwrap(), 4.0);
        assert_eq!(mae(&[1.0, 5.0], &[5.0, 1.0]).unwrap(), 4.0);
        assert_eq!(rmse(&[3.0, 5.0], &[3.0, 1.0]).unwrap(), 8f64.sqrt());
        assert_eq!(mae(&[3.0, 5.0], &[3.0, 1.0]).unwrap(), 2.0);
        assert_eq!(rmse(&[1.0], &[1.0, 2.0]), Err(EvalError::LengthMismatch { preds: 1, truths: 2 }));
        assert_eq!(mae(&[], &[]), Err(EvalError::Empty));
    }

    #[test]
    fn ndcg_examples() {
        assert_eq!(ndcg_at_k(&list(&[(3.0, 0.1)]), 10, Gain::Linear), 1.0);
        let worst_first = list(&[(5.0, 0.0), (1.0, 1.0)]);
        let expected = (1.0 + 5.0 / 3f64.log2()) / (5.0 + 1.0 / 3f64.log2());
        assert!((ndcg_at_k(&worst_first, 10, Gain::Linear) - expected).abs() < 1e-15);
        assert!((ndcg_at_k(&worst_first, 10, Gain::Linear) - 0.7378).abs() < 5e-5);
        assert_eq!(ndcg_at_k(&list(&[(5.0, 3.0), (4.0, 2.0), (1.0, 1.0)]), 10, Gain::Linear), 1.0);
        assert_eq!(ndcg_at_k(&list(&[(5.0, 3.0), (4.0, 2.0)]), 10, Gain::Exponential), 1.0);
    }

    #[test]
    fn average_precision_examples() {
        let ap = average_precision(&list(&[(5.0, 3.0), (3.0, 2.0), (4.0, 1.0)]), 4.0).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        assert_eq!(average_precision(&list(&[(5.0, 2.0), (4.0, 1.0)]), 4.0), Some(1.0));
        let last = average_precision(&list(&[(2.0, 3.0), (1.0, 2.0), (4.0, 1.0)]), 4.0).unwrap();
        assert!((last - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(average_precision(&list(&[(2.0, 1.0)]), 4.0), None);
        assert_eq!(mean_average_precision(&[list(&[(2.0, 1.0)])], 4.0), Err(EvalError::NoRelevantItems));
    }

    #[test]
    fn coverage_examples() {
        let features: BTreeMap<String, String> = (0..10)
            .map(|i| (format!("i{i}"), if i < 3 { "pool".into() } else { "view".into() }))
            .collect();
        let recs: Vec<String> = (0..10).map(|i| format!("i{i}")).collect();
        assert_eq!(coverage_at_10(&recs, &features, "pool").unwrap(), 0.3);
        assert_eq!(coverage_at_10(&recs, &features, "bed").unwrap(), 0.0);
        assert_eq!(coverage_at_10(&recs[3..], &features, "view"), Err(EvalError::TooFewRecommendations { got: 7, need: 10 }));
        let all: BTreeMap<String, String> = recs.iter().map(|i| (i.clone(), "pool".into())).collect();
        assert_eq!(coverage_at_10(&recs, &all, "pool").unwrap(), 1.0);
    }

    #[test]
    fn duplicate_items_are_rejected() {
        let e = ListEntry { item: "a".into(), truth: 1.0, score: 1.0 };
        assert!(CondensedList::new("u", vec![e.clone(), e]).is_err());
        assert!(CondensedList::new("u", vec![]).is_err());
    }

    proptest! {
        #[test]
        fn rmse_dominates_mae(pairs in prop::collection::vec((1.0f64..5.0, 1.0f64..5.0), 1..50)) {
            let (p, t): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let (r, m) = (rmse(&p, &t).unwrap(), mae(&p, &t).unwrap());
            prop_assert!(r + 1e-12 >= m);
            prop_assert!(m >= 0.0);
            prop_assert_eq!(r == 0.0, p == t);
        }

        #[test]
        fn ndcg_ignores_monotone_score_transforms(
            entries in prop::collection::vec((1u8..=5, -10.0f64..10.0), 1..15),
        ) {
            let base: Vec<(f64, f64)> = entries.iter().map(|&(t, s)| (t as f64, s)).collect();
            let warped: Vec<(f64, f64)> = base.iter().map(|&(t, s)| (t, (s / 3.0).exp() + 7.0)).collect();
            let a = ndcg_at_k(&list(&base), 10, Gain::Linear);
            let b = ndcg_at_k(&list(&warped), 10, Gain::Linear);
            prop_assert_eq!(a, b);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&a));
        }

        #[test]
        fn coverage_is_a_multiple_of_a_tenth(flags in prop::collection::vec(any::<bool>(), 10..20)) {
            let features: BTreeMap<String, String> = flags
                .iter()
                .enumerate()
                .map(|(i, f)| (format!("i{i}"), if *f { "t".to_string() } else { "o".to_string() }))
                .collect();
            let recs: Vec<String> = (0..flags.len()).map(|i| format!("i{i}")).collect();
            let c = coverage_at_10(&recs, &features, "t").unwrap();
            let tenths = (c * 10.0).round();
            prop_assert_eq!(c, tenths / 10.0);
            prop_assert!((0.0..=10.0).contains(&tenths));
        }
    }
}
