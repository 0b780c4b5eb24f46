//! Does editing a profile toward a feature move recommendations toward it?
//!
//! Per seed: sample users whose profile expresses no preference for the
//! target, sample a candidate pool of test items with and without the target
//! feature, and compare mean Coverage@k of each user's top-k under the
//! original and under the edited profile. The model is never refit.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{coverage_at_k, EvalError};
use crate::corpus::Dataset;
use crate::preference::stem_feature;
use crate::profilegen::{NlProfile, ProfileError};
use crate::recsys::{top_k_for_profile, TextScorer};
use crate::text::mentions;

pub const SCRUTABILITY_SEEDS: [u64; 5] = [0, 42, 100, 200, 300];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScrutabilityConfig {
    pub seeds: Vec<u64>,
    pub n_users: usize,
    /// Items sampled with the target feature, and again without it.
    pub n_items_per_class: usize,
    pub k: usize,
}

impl Default for ScrutabilityConfig {
    fn default() -> Self {
        Self {
            seeds: SCRUTABILITY_SEEDS.to_vec(),
            n_users: 200,
            n_items_per_class: 100,
            k: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    /// Mean Coverage@k under the original profiles.
    pub original: f64,
    /// Mean Coverage@k under the edited profiles.
    pub edited: f64,
    pub delta: f64,
    pub n_users: usize,
    pub n_target_items: usize,
    pub n_other_items: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScrutabilityReport {
    pub target: String,
    pub seeds: Vec<SeedOutcome>,
    pub mean_delta: f64,
    /// Population variance of the per-seed deltas.
    pub delta_variance: f64,
    pub eligible_users: usize,
    pub notes: Vec<String>,
}

/// Runs the study for one target feature.
///
/// `profiles` holds each user's current profile, `item_features` maps every
/// corpus item to its stem and `edit` produces the edited profile text.
#[allow(clippy::too_many_arguments)]
pub fn scrutability_experiment<E>(
    scorer: &dyn TextScorer,
    profiles: &[NlProfile],
    target: &str,
    test: &Dataset,
    item_features: &BTreeMap<String, String>,
    titles: &BTreeMap<String, String>,
    config: &ScrutabilityConfig,
    edit: E,
) -> Result<ScrutabilityReport, EvalError>
where
    E: Fn(&NlProfile) -> Result<String, ProfileError> + Sync,
{
    let stem = stem_feature(target);
    if !item_features.values().any(|f| *f == stem) {
        return Err(EvalError::UnknownFeature(target.to_string()));
    }
    let eligible: Vec<&NlProfile> = profiles
        .iter()
        .filter(|p| !p.features_used.contains(&stem) && !mentions(&p.text, &stem).any())
        .collect();
    let mut target_items = Vec::new();
    let mut other_items = Vec::new();
    for item in test.items() {
        match item_features.get(item) {
            Some(f) if *f == stem => target_items.push(item.to_string()),
            Some(_) => other_items.push(item.to_string()),
            None => {}
        }
    }

    let mut notes = Vec::new();
    let mut scale: f64 = 1.0;
    scale = scale.min(eligible.len() as f64 / config.n_users.max(1) as f64);
    scale = scale.min(other_items.len() as f64 / config.n_items_per_class.max(1) as f64);
    if !target_items.is_empty() {
        scale = scale.min(target_items.len() as f64 / config.n_items_per_class.max(1) as f64);
    }
    let n_users = ((config.n_users as f64 * scale).floor() as usize).max(1);
    let n_items = ((config.n_items_per_class as f64 * scale).floor() as usize).max(1);
    if scale < 1.0 {
        notes.push(format!(
            "scaled down by {scale:.3}: {} eligible users, {} target items, {} other items available; using {n_users} users and {n_items} items per class",
            eligible.len(),
            target_items.len(),
            other_items.len()
        ));
    }
    if target_items.is_empty() {
        notes.push("no test item carries the target feature".into());
    }
    if eligible.is_empty() {
        return Err(EvalError::InsufficientData(format!("no user is eligible for {stem:?}")));
    }
    let n_target = n_items.min(target_items.len());
    let n_other = n_items.min(other_items.len());
    if n_target + n_other < config.k {
        return Err(EvalError::InsufficientData(format!(
            "candidate pool of {} items is smaller than k = {}",
            n_target + n_other,
            config.k
        )));
    }

    // edits do not depend on the seed, so each user is edited once
    let mut edited: BTreeMap<&str, String> = BTreeMap::new();
    let mut outcomes = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(crate::mix_seed(seed, &["scrutability", &stem]));
        let mut users: Vec<&NlProfile> = sample(&mut rng, eligible.len(), n_users.min(eligible.len()))
            .into_iter()
            .map(|i| eligible[i])
            .collect();
        users.sort_by(|a, b| a.user_id.cmp(&b.user_id));
        let mut pool: Vec<&str> = sample(&mut rng, target_items.len(), n_target)
            .into_iter()
            .map(|i| target_items[i].as_str())
            .chain(
                sample(&mut rng, other_items.len(), n_other)
                    .into_iter()
                    .map(|i| other_items[i].as_str()),
            )
            .collect();
        pool.sort_unstable();

        let missing: Vec<&NlProfile> = users
            .iter()
            .filter(|p| !edited.contains_key(p.user_id.as_str()))
            .copied()
            .collect();
        let fresh = missing
            .par_iter()
            .map(|p| edit(p).map(|text| (p.user_id.as_str(), text)))
            .collect::<Result<Vec<_>, _>>()?;
        edited.extend(fresh);

        let coverage = |text: &str| -> Result<f64, EvalError> {
            let top = top_k_for_profile(scorer, text, &pool, titles, config.k)?;
            let ids: Vec<&str> = top.iter().map(|s| s.item.as_str()).collect();
            coverage_at_k(&ids, item_features, &stem, config.k)
        };
        let pairs = users
            .par_iter()
            .map(|p| Ok((coverage(&p.text)?, coverage(&edited[p.user_id.as_str()])?)))
            .collect::<Result<Vec<(f64, f64)>, EvalError>>()?;
        let n = pairs.len() as f64;
        let original = pairs.iter().map(|p| p.0).sum::<f64>() / n;
        let after = pairs.iter().map(|p| p.1).sum::<f64>() / n;
        tracing::debug!(seed, original, edited = after, "scrutability seed");
        outcomes.push(SeedOutcome {
            seed,
            original,
            edited: after,
            delta: after - original,
            n_users: users.len(),
            n_target_items: n_target,
            n_other_items: n_other,
        });
    }
    let n = outcomes.len().max(1) as f64;
    let mean_delta = outcomes.iter().map(|o| o.delta).sum::<f64>() / n;
    let delta_variance = outcomes.iter().map(|o| (o.delta - mean_delta).powi(2)).sum::<f64>() / n;
    Ok(ScrutabilityReport {
        target: stem,
        seeds: outcomes,
        mean_delta,
        delta_variance,
        eligible_users: eligible.len(),
        notes,
    })
}
