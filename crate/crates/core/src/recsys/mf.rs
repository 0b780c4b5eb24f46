//! Biased matrix factorization trained by SGD.
//!
//! `r̂(u, i) = μ + b_u + b_i + p_u · q_i`, minimizing
//! `Σ (r - r̂)² + λ (b_u² + b_i² + |p_u|² + |q_i|²)` over observed cells.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{clamp_rating, RatingMatrix, Recommender, RecsysError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MfParams {
    pub dim: usize,
    pub learning_rate: f64,
    pub regularization: f64,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub init_std: f64,
    /// Learning rate is multiplied by this after every epoch.
    pub lr_decay: f64,
    pub seed: u64,
}

impl Default for MfParams {
    fn default() -> Self {
        Self {
            dim: 10,
            learning_rate: 0.01,
            regularization: 0.02,
            max_epochs: 100,
            patience: 3,
            init_std: 0.01,
            lr_decay: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Regularized squared-error objective after the epoch.
    pub objective: f64,
    pub train_rmse: f64,
    pub validation_rmse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfModel {
    pub params: MfParams,
    users: std::collections::BTreeMap<String, usize>,
    items: std::collections::BTreeMap<String, usize>,
    mu: f64,
    user_bias: Vec<f64>,
    item_bias: Vec<f64>,
    /// Row-major, `dim` values per user.
    user_factors: Vec<f64>,
    item_factors: Vec<f64>,
    pub history: Vec<EpochStats>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
}

impl MfModel {
    /// Fits on `train`. With a validation set, training stops after
    /// `patience` epochs without validation RMSE improvement and the best
    /// epoch's parameters are restored.
    pub fn fit(
        train: &RatingMatrix,
        validation: Option<&[(String, String, f64)]>,
        params: MfParams,
    ) -> Result<Self, RecsysError> {
        if params.dim == 0
            || params.learning_rate.is_nan()
            || params.learning_rate <= 0.0
            || params.regularization < 0.0
            || !(params.lr_decay > 0.0 && params.lr_decay <= 1.0)
        {
            return Err(RecsysError::InvalidHyperparameter(format!("{params:?}")));
        }
        let d = params.dim;
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let normal = Normal::new(0.0, params.init_std.max(0.0))
            .map_err(|e| RecsysError::InvalidHyperparameter(e.to_string()))?;
        let mut model = Self {
            params,
            users: train.users().iter().cloned().enumerate().map(|(n, u)| (u, n)).collect(),
            items: train.items().iter().cloned().enumerate().map(|(n, i)| (i, n)).collect(),
            mu: train.global_mean(),
            user_bias: vec![0.0; train.n_users()],
            item_bias: vec![0.0; train.n_items()],
            user_factors: (0..train.n_users() * d).map(|_| normal.sample(&mut rng)).collect(),
            item_factors: (0..train.n_items() * d).map(|_| normal.sample(&mut rng)).collect(),
            history: Vec::new(),
            best_epoch: 0,
        };
        let mut cells: Vec<(usize, usize, f64)> = train.entries().collect();
        let mut best: Option<(f64, Self)> = None;
        let mut stale = 0;
        let mut lr = params.learning_rate;
        for epoch in 1..=params.max_epochs {
            cells.shuffle(&mut rng);
            model.sgd_epoch(&cells, lr);
            lr *= params.lr_decay;
            let objective = model.objective(&cells);
            if !objective.is_finite() {
                return Err(RecsysError::Diverged { epoch });
            }
            let train_rmse = (cells
                .iter()
                .map(|&(u, i, r)| (r - model.raw(u, i)).powi(2))
                .sum::<f64>()
                / cells.len() as f64)
                .sqrt();
            let validation_rmse = validation.map(|v| model.rmse_on(v));
            model.history.push(EpochStats {
                epoch,
                objective,
                train_rmse,
                validation_rmse,
            });
            tracing::debug!(epoch, objective, train_rmse, ?validation_rmse, "mf epoch");
            let Some(score) = validation_rmse else {
                model.best_epoch = epoch;
                continue;
            };
            match &best {
                Some((b, _)) if score >= *b => {
                    stale += 1;
                    if stale >= params.patience.max(1) {
                        break;
                    }
                }
                _ => {
                    stale = 0;
                    model.best_epoch = epoch;
                    best = Some((score, model.clone()));
                }
            }
        }
        if let Some((_, mut kept)) = best {
            kept.history = std::mem::take(&mut model.history);
            return Ok(kept);
        }
        Ok(model)
    }

    fn sgd_epoch(&mut self, cells: &[(usize, usize, f64)], lr: f64) {
        let d = self.params.dim;
        let reg = self.params.regularization;
        for &(u, i, r) in cells {
            let err = r - self.raw(u, i);
            self.user_bias[u] += lr * (err - reg * self.user_bias[u]);
            self.item_bias[i] += lr * (err - reg * self.item_bias[i]);
            let (pu, qi) = (u * d, i * d);
            for f in 0..d {
                let p = self.user_factors[pu + f];
                let q = self.item_factors[qi + f];
                self.user_factors[pu + f] += lr * (err * q - reg * p);
                self.item_factors[qi + f] += lr * (err * p - reg * q);
            }
        }
    }

    fn objective(&self, cells: &[(usize, usize, f64)]) -> f64 {
        let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
        let loss: f64 = cells.iter().map(|&(u, i, r)| (r - self.raw(u, i)).powi(2)).sum();
        loss + self.params.regularization
            * (sq(&self.user_bias) + sq(&self.item_bias) + sq(&self.user_factors) + sq(&self.item_factors))
    }

    fn raw(&self, u: usize, i: usize) -> f64 {
        let d = self.params.dim;
        let dot: f64 = self.user_factors[u * d..(u + 1) * d]
            .iter()
            .zip(&self.item_factors[i * d..(i + 1) * d])
            .map(|(p, q)| p * q)
            .sum();
        self.mu + self.user_bias[u] + self.item_bias[i] + dot
    }

    fn rmse_on(&self, data: &[(String, String, f64)]) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        let sse: f64 = data
            .iter()
            .map(|(u, i, r)| (r - self.predict_value(u, i)).powi(2))
            .sum();
        (sse / data.len() as f64).sqrt()
    }

    /// Clamped prediction; unknown users or items contribute no bias or factors.
    pub fn predict_value(&self, user: &str, item: &str) -> f64 {
        let u = self.users.get(user).copied();
        let i = self.items.get(item).copied();
        let raw = match (u, i) {
            (Some(u), Some(i)) => self.raw(u, i),
            (Some(u), None) => self.mu + self.user_bias[u],
            (None, Some(i)) => self.mu + self.item_bias[i],
            (None, None) => self.mu,
        };
        clamp_rating(raw)
    }

    pub fn parameters_finite(&self) -> bool {
        self.user_bias
            .iter()
            .chain(&self.item_bias)
            .chain(&self.user_factors)
            .chain(&self.item_factors)
            .all(|x| x.is_finite())
    }
}

impl Recommender for MfModel {
    fn name(&self) -> &'static str {
        "mf"
    }

    fn predict(&self, user: &str, item: &str) -> Result<f64, RecsysError> {
        Ok(self.predict_value(user, item))
    }
}
