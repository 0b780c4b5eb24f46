//! Linear rating regressor over hashed text features of (profile, title).
//!
//! Features are binary indicators of stemmed words and word bigrams of the
//! profile and of the title, plus profile-word × title-word pairs so that the
//! same title can score differently under different profiles. Words inside a
//! negation scope carry a `not_` prefix. No user or item id is ever seen.

use std::collections::BTreeMap;
use std::hash::Hasher;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{clamp_rating, RecsysError, TextScorer};
use crate::corpus::Dataset;
use crate::preference::stem_feature;
use crate::text::tokenize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegressorParams {
    /// log2 of the feature dimension.
    pub bits: u32,
    /// Candidates tried in order; the best on validation is kept.
    pub learning_rates: Vec<f64>,
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for RegressorParams {
    fn default() -> Self {
        Self {
            bits: 18,
            learning_rates: vec![1e-3, 3e-4, 1e-5],
            epochs: 10,
            patience: 3,
            batch_size: 8,
            seed: 0,
        }
    }
}

fn words(text: &str) -> Vec<String> {
    tokenize(text)
        .into_iter()
        .map(|t| {
            let stem = stem_feature(&t.word);
            if t.negated {
                format!("not_{stem}")
            } else {
                stem
            }
        })
        .collect()
}

fn hash_feature(parts: &[&str], mask: u64) -> u32 {
    let mut h = fnv::FnvHasher::default();
    for p in parts {
        h.write(p.as_bytes());
        h.write_u8(0x1f);
    }
    (h.finish() & mask) as u32
}

/// Active feature indices for a (profile, title) pair, sorted and unique.
pub fn featurize(profile: &str, title: &str, bits: u32) -> Vec<u32> {
    featurize_words(&words(profile), &words(title), bits)
}

fn featurize_words(p: &[String], t: &[String], bits: u32) -> Vec<u32> {
    let mask = (1u64 << bits) - 1;
    let mut out = Vec::with_capacity(2 * p.len() + 2 * t.len() + p.len() * t.len());
    for (tag, ws) in [("p", p), ("t", t)] {
        for w in ws.iter() {
            out.push(hash_feature(&[tag, w], mask));
        }
        for pair in ws.windows(2) {
            out.push(hash_feature(&[tag, &pair[0], &pair[1]], mask));
        }
    }
    let mut pw: Vec<&String> = p.iter().collect();
    pw.sort();
    pw.dedup();
    for a in &pw {
        for b in t {
            out.push(hash_feature(&["x", a, b], mask));
        }
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// One training example: a profile, an item title and a 1-5 rating.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TextExample<'a> {
    pub profile: &'a str,
    pub title: &'a str,
    pub rating: f64,
}

/// Rating rescaled to [0, 1].
pub fn target(rating: f64) -> f64 {
    (rating - 1.0) / 4.0
}

fn linear(weights: &[f64], bias: f64, x: &[u32]) -> f64 {
    bias + x.iter().map(|&f| weights[f as usize]).sum::<f64>()
}

/// Mean squared error of a batch and its gradient, as sparse (index,
/// partial derivative) pairs for the weights plus the bias derivative.
pub fn batch_gradient(weights: &[f64], bias: f64, batch: &[(&[u32], f64)]) -> (f64, Vec<(u32, f64)>, f64) {
    let n = batch.len() as f64;
    let mut loss = 0.0;
    let mut grad: BTreeMap<u32, f64> = BTreeMap::new();
    let mut grad_bias = 0.0;
    for (x, y) in batch {
        let err = linear(weights, bias, x) - y;
        loss += err * err / n;
        let g = 2.0 * err / n;
        grad_bias += g;
        for &f in x.iter() {
            *grad.entry(f).or_default() += g;
        }
    }
    (loss, grad.into_iter().collect(), grad_bias)
}

/// Dense form of [`batch_gradient`]: (loss, d loss / d weights, d loss / d bias).
pub fn loss_and_gradient(weights: &[f64], bias: f64, batch: &[(&[u32], f64)]) -> (f64, Vec<f64>, f64) {
    let (loss, sparse, grad_bias) = batch_gradient(weights, bias, batch);
    let mut dense = vec![0.0; weights.len()];
    for (f, g) in sparse {
        dense[f as usize] = g;
    }
    (loss, dense, grad_bias)
}

pub fn mse(weights: &[f64], bias: f64, data: &[(Vec<u32>, f64)]) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    data.iter()
        .map(|(x, y)| (linear(weights, bias, x) - y).powi(2))
        .sum::<f64>()
        / data.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileRegressor {
    pub params: RegressorParams,
    /// Learning rate picked from the grid.
    pub learning_rate: f64,
    weights: Vec<f64>,
    bias: f64,
    /// Training MSE (on the [0, 1] scale) after each epoch.
    pub train_history: Vec<f64>,
    pub validation_history: Vec<f64>,
}

struct Run {
    weights: Vec<f64>,
    bias: f64,
    train_history: Vec<f64>,
    validation_history: Vec<f64>,
    selection_score: f64,
}

impl ProfileRegressor {
    pub fn fit(
        train: &[TextExample<'_>],
        validation: &[TextExample<'_>],
        params: RegressorParams,
    ) -> Result<Self, RecsysError> {
        if train.is_empty() {
            return Err(RecsysError::EmptyTraining);
        }
        if !(1..=26).contains(&params.bits) || params.batch_size == 0 || params.learning_rates.is_empty() {
            return Err(RecsysError::InvalidHyperparameter(format!(
                "bits in 1..=26, batch_size > 0 and at least one learning rate required: {params:?}"
            )));
        }
        let encode = |data: &[TextExample<'_>]| -> Vec<(Vec<u32>, f64)> {
            let mut cache: BTreeMap<(&str, &str), Vec<u32>> = BTreeMap::new();
            data.iter()
                .map(|e| {
                    let x = cache
                        .entry((e.profile, e.title))
                        .or_insert_with(|| featurize(e.profile, e.title, params.bits))
                        .clone();
                    (x, target(e.rating))
                })
                .collect()
        };
        let train_x = encode(train);
        let val_x = encode(validation);

        let mut best: Option<(f64, Run)> = None;
        let mut last_error = None;
        for &lr in &params.learning_rates {
            match Self::run(&train_x, &val_x, &params, lr) {
                Ok(run) => {
                    tracing::debug!(lr, score = run.selection_score, "regressor candidate");
                    if best.as_ref().is_none_or(|(_, b)| run.selection_score < b.selection_score) {
                        best = Some((lr, run));
                    }
                }
                Err(e) => {
                    tracing::warn!(lr, "regressor candidate skipped: {e}");
                    last_error = Some(e);
                }
            }
        }
        let Some((learning_rate, run)) = best else {
            return Err(last_error.unwrap_or(RecsysError::EmptyTraining));
        };
        Ok(Self {
            params,
            learning_rate,
            weights: run.weights,
            bias: run.bias,
            train_history: run.train_history,
            validation_history: run.validation_history,
        })
    }

    /// Builds examples from train records and per-user profiles. Every user of
    /// `train` (and of `validation`, if given) needs a profile.
    pub fn fit_from_profiles(
        profiles: &BTreeMap<String, String>,
        train: &Dataset,
        validation: Option<&Dataset>,
        params: RegressorParams,
    ) -> Result<Self, RecsysError> {
        let train_ex = examples(profiles, train)?;
        let val_ex = match validation {
            Some(v) => examples(profiles, v)?,
            None => Vec::new(),
        };
        Self::fit(&train_ex, &val_ex, params)
    }

    fn run(
        train: &[(Vec<u32>, f64)],
        validation: &[(Vec<u32>, f64)],
        params: &RegressorParams,
        lr: f64,
    ) -> Result<Run, RecsysError> {
        let dim = 1usize << params.bits;
        let mut weights = vec![0.0; dim];
        let mut bias = train.iter().map(|e| e.1).sum::<f64>() / train.len() as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(crate::mix_seed(params.seed, &["regressor"]));
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut train_history = Vec::new();
        let mut validation_history = Vec::new();
        let mut kept: Option<(f64, Vec<f64>, f64)> = None;
        let mut stale = 0;
        for epoch in 1..=params.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(params.batch_size) {
                let batch: Vec<(&[u32], f64)> =
                    chunk.iter().map(|&i| (train[i].0.as_slice(), train[i].1)).collect();
                let (_, grad, grad_bias) = batch_gradient(&weights, bias, &batch);
                for (f, g) in grad {
                    weights[f as usize] -= lr * g;
                }
                bias -= lr * grad_bias;
            }
            let train_mse = mse(&weights, bias, train);
            if !train_mse.is_finite() {
                return Err(RecsysError::Diverged { epoch });
            }
            train_history.push(train_mse);
            let score = if validation.is_empty() {
                train_mse
            } else {
                let v = mse(&weights, bias, validation);
                validation_history.push(v);
                v
            };
            match &kept {
                Some((b, _, _)) if score >= *b => {
                    stale += 1;
                    if stale >= params.patience.max(1) {
                        break;
                    }
                }
                _ => {
                    stale = 0;
                    kept = Some((score, weights.clone(), bias));
                }
            }
        }
        let (selection_score, weights, bias) = kept.unwrap_or((f64::INFINITY, weights, bias));
        Ok(Run {
            weights,
            bias,
            train_history,
            validation_history,
            selection_score,
        })
    }

    /// Raw output on the [0, 1] target scale (not clamped).
    pub fn raw(&self, profile: &str, title: &str) -> f64 {
        linear(&self.weights, self.bias, &featurize(profile, title, self.params.bits))
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn from_parts(params: RegressorParams, learning_rate: f64, weights: Vec<f64>, bias: f64) -> Result<Self, RecsysError> {
        if weights.len() != 1usize << params.bits {
            return Err(RecsysError::InvalidHyperparameter(format!(
                "{} weights for {} bits",
                weights.len(),
                params.bits
            )));
        }
        Ok(Self {
            params,
            learning_rate,
            weights,
            bias,
            train_history: Vec::new(),
            validation_history: Vec::new(),
        })
    }
}

/// Maps a raw output on the [0, 1] scale to a clamped star rating.
pub fn to_rating(raw: f64) -> f64 {
    clamp_rating(1.0 + 4.0 * raw)
}

impl TextScorer for ProfileRegressor {
    fn id(&self) -> String {
        "upr-linear".into()
    }

    fn predict_text(&self, profile: &str, title: &str) -> Result<f64, RecsysError> {
        Ok(to_rating(self.raw(profile, title)))
    }

    fn predict_titles(&self, profile: &str, titles: &[&str]) -> Result<Vec<f64>, RecsysError> {
        let p = words(profile);
        Ok(titles
            .iter()
            .map(|t| {
                let x = featurize_words(&p, &words(t), self.params.bits);
                to_rating(linear(&self.weights, self.bias, &x))
            })
            .collect())
    }
}

fn examples<'a>(
    profiles: &'a BTreeMap<String, String>,
    data: &'a Dataset,
) -> Result<Vec<TextExample<'a>>, RecsysError> {
    let missing: Vec<String> = data
        .users()
        .filter(|u| !profiles.contains_key(*u))
        .map(str::to_string)
        .collect();
    if !missing.is_empty() {
        return Err(RecsysError::MissingProfiles(missing));
    }
    Ok(data
        .records()
        .iter()
        .map(|r| TextExample {
            profile: &profiles[&r.user_id],
            title: &r.item_title,
            rating: r.rating as f64,
        })
        .collect())
}

// Checkpoints store only the non-zero weights.
#[derive(Serialize, Deserialize)]
struct StoredRegressor {
    params: RegressorParams,
    learning_rate: f64,
    bias: f64,
    weights: Vec<(u32, f64)>,
    train_history: Vec<f64>,
    validation_history: Vec<f64>,
}

impl Serialize for ProfileRegressor {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        StoredRegressor {
            params: self.params.clone(),
            learning_rate: self.learning_rate,
            bias: self.bias,
            weights: self
                .weights
                .iter()
                .enumerate()
                .filter(|(_, w)| **w != 0.0)
                .map(|(i, w)| (i as u32, *w))
                .collect(),
            train_history: self.train_history.clone(),
            validation_history: self.validation_history.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ProfileRegressor {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let stored = StoredRegressor::deserialize(d)?;
        if !(1..=26).contains(&stored.params.bits) {
            return Err(serde::de::Error::custom("bits outside 1..=26"));
        }
        let dim = 1usize << stored.params.bits;
        let mut weights = vec![0.0; dim];
        for (i, w) in stored.weights {
            let slot = weights
                .get_mut(i as usize)
                .ok_or_else(|| serde::de::Error::custom(format!("weight index {i} out of range")))?;
            *slot = w;
        }
        Ok(Self {
            params: stored.params,
            learning_rate: stored.learning_rate,
            weights,
            bias: stored.bias,
            train_history: stored.train_history,
            validation_history: stored.validation_history,
        })
    }
}
