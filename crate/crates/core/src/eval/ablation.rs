//! Error of the profile model as a function of the number of features that
//! go into each profile.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{evaluate, EvalError, Gain, MetricReport};
use crate::corpus::SplitBundle;
use crate::profilegen::{generate_profiles, ProfileJob, TextGenerator};
use crate::recsys::{ProfileRecommender, ProfileRegressor, RegressorParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    pub k_values: Vec<usize>,
    /// Profile settings; `k` is replaced by each value of `k_values`.
    pub job: ProfileJob,
    pub regressor: RegressorParams,
    pub gain: Gain,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            k_values: vec![1, 2, 3, 4, 5],
            job: ProfileJob::default(),
            regressor: RegressorParams::default(),
            gain: Gain::Linear,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationPoint {
    pub k: usize,
    pub report: MetricReport,
    /// Users dropped because no profile could be generated for them.
    pub users_without_profile: Vec<String>,
}

/// For each k: regenerate train-user profiles from the top-k features, refit
/// the regressor on train (learning rate picked on validation) and evaluate on test.
pub fn feature_ablation(
    split: &SplitBundle,
    config: &AblationConfig,
    generator: &dyn TextGenerator,
) -> Result<Vec<AblationPoint>, EvalError> {
    config
        .k_values
        .iter()
        .map(|&k| {
            let job = ProfileJob { k, ..config.job.clone() };
            let outcome = generate_profiles(&split.train, &job, generator);
            let dropped: Vec<String> = outcome.failures.iter().map(|(u, _)| u.clone()).collect();
            if !dropped.is_empty() {
                tracing::warn!(k, n = dropped.len(), "users without a profile are left out");
            }
            if outcome.profiles.is_empty() {
                return Err(match outcome.failures.into_iter().next() {
                    Some((_, e)) => e.into(),
                    None => EvalError::Empty,
                });
            }
            let profiles: BTreeMap<String, String> = outcome
                .profiles
                .into_iter()
                .map(|p| (p.user_id, p.text))
                .collect();
            let keep = |r: &crate::corpus::ReviewRecord| profiles.contains_key(&r.user_id);
            let (train, validation, test) =
                (split.train.filter(keep), split.validation.filter(keep), split.test.filter(keep));
            let model = ProfileRegressor::fit_from_profiles(&profiles, &train, Some(&validation), config.regressor.clone())?;
            let rec = ProfileRecommender {
                scorer: &model,
                profiles,
                titles: split.train.item_titles(),
            };
            let report = evaluate(&rec, &test, config.gain)?;
            tracing::info!(k, rmse = report.rmse, mae = report.mae, "ablation point");
            Ok(AblationPoint {
                k,
                report,
                users_without_profile: dropped,
            })
        })
        .collect()
}
