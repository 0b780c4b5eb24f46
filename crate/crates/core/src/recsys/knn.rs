//! Neighborhood models.
//!
//! [`UserKnn`] re-weights the rating matrix with BM25 (items are the
//! documents, users the terms, the raw rating the term frequency) and
//! compares users by cosine. [`ItemKnn`] compares items by adjusted cosine
//! (ratings centered on each user's mean). Both predict with a mean-centered
//! weighted average over the `k` most similar positive-similarity neighbors.

use serde::{Deserialize, Serialize};

use super::{clamp_rating, RatingMatrix, Recommender, RecsysError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KnnParams {
    pub k: usize,
    pub k1: f64,
    pub b: f64,
}

impl Default for KnnParams {
    fn default() -> Self {
        Self { k: 20, k1: 1.2, b: 0.75 }
    }
}

impl KnnParams {
    fn validate(&self) -> Result<(), RecsysError> {
        if self.k == 0 {
            return Err(RecsysError::InvalidHyperparameter("k must be positive".into()));
        }
        if !(self.k1 >= 0.0 && (0.0..=1.0).contains(&self.b)) {
            return Err(RecsysError::InvalidHyperparameter(format!(
                "BM25 needs k1 >= 0 and b in [0, 1], got k1={} b={}",
                self.k1, self.b
            )));
        }
        Ok(())
    }
}

type SparseVec = Vec<(usize, f64)>;

/// Dot product of two index-sorted sparse vectors.
fn sparse_dot(a: &[(usize, f64)], b: &[(usize, f64)]) -> f64 {
    let (mut i, mut j, mut acc) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                acc += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    acc
}

fn norm(v: &[(usize, f64)]) -> f64 {
    v.iter().map(|e| e.1 * e.1).sum::<f64>().sqrt()
}

fn cosine(a: &[(usize, f64)], na: f64, b: &[(usize, f64)], nb: f64) -> f64 {
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        sparse_dot(a, b) / (na * nb)
    }
}

/// Weighted average of `(similarity, centered rating)` over the `k` most
/// similar positive neighbors; ties keep the lower neighbor index.
fn neighborhood_offset(mut neighbors: Vec<(usize, f64, f64)>, k: usize) -> Option<f64> {
    neighbors.retain(|n| n.1 > 0.0);
    neighbors.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    neighbors.truncate(k);
    let den: f64 = neighbors.iter().map(|n| n.1.abs()).sum();
    if den == 0.0 {
        return None;
    }
    Some(neighbors.iter().map(|n| n.1 * n.2).sum::<f64>() / den)
}

/// BM25 weights of the matrix, returned per user (index-sorted by item).
pub fn bm25_user_vectors(m: &RatingMatrix, k1: f64, b: f64) -> Vec<SparseVec> {
    let n_docs = m.n_items() as f64;
    let doc_len: Vec<f64> = (0..m.n_items())
        .map(|i| m.col(i).iter().map(|e| e.1).sum())
        .collect();
    let avg_len = doc_len.iter().sum::<f64>() / n_docs;
    (0..m.n_users())
        .map(|u| {
            let df = m.row(u).len() as f64;
            let idf = (1.0 + (n_docs - df + 0.5) / (df + 0.5)).ln();
            m.row(u)
                .iter()
                .map(|&(i, tf)| {
                    let len_norm = 1.0 - b + b * doc_len[i] / avg_len;
                    (i, idf * tf * (k1 + 1.0) / (tf + k1 * len_norm))
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserKnn {
    params: KnnParams,
    matrix: RatingMatrix,
    vectors: Vec<SparseVec>,
    norms: Vec<f64>,
    user_means: Vec<f64>,
}

impl UserKnn {
    pub fn fit(train: &RatingMatrix, params: KnnParams) -> Result<Self, RecsysError> {
        params.validate()?;
        let vectors = bm25_user_vectors(train, params.k1, params.b);
        Ok(Self {
            params,
            norms: vectors.iter().map(|v| norm(v)).collect(),
            user_means: (0..train.n_users()).map(|u| train.user_mean(u)).collect(),
            vectors,
            matrix: train.clone(),
        })
    }

    pub fn params(&self) -> KnnParams {
        self.params
    }

    pub fn similarity(&self, u: &str, v: &str) -> Option<f64> {
        let (u, v) = (self.matrix.user_idx(u)?, self.matrix.user_idx(v)?);
        Some(cosine(&self.vectors[u], self.norms[u], &self.vectors[v], self.norms[v]))
    }
}

impl Recommender for UserKnn {
    fn name(&self) -> &'static str {
        "userknn"
    }

    fn predict(&self, user: &str, item: &str) -> Result<f64, RecsysError> {
        let Some(u) = self.matrix.user_idx(user) else {
            return Ok(clamp_rating(self.matrix.global_mean()));
        };
        let base = self.user_means[u];
        let Some(i) = self.matrix.item_idx(item) else {
            return Ok(clamp_rating(base));
        };
        let neighbors = self
            .matrix
            .col(i)
            .iter()
            .filter(|&&(v, _)| v != u)
            .map(|&(v, r)| {
                let sim = cosine(&self.vectors[u], self.norms[u], &self.vectors[v], self.norms[v]);
                (v, sim, r - self.user_means[v])
            })
            .collect();
        let offset = neighborhood_offset(neighbors, self.params.k).unwrap_or(0.0);
        Ok(clamp_rating(base + offset))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemKnn {
    params: KnnParams,
    matrix: RatingMatrix,
    /// Per item: (user index, rating - user mean).
    centered: Vec<SparseVec>,
    norms: Vec<f64>,
    item_means: Vec<f64>,
}

impl ItemKnn {
    pub fn fit(train: &RatingMatrix, params: KnnParams) -> Result<Self, RecsysError> {
        params.validate()?;
        let user_means: Vec<f64> = (0..train.n_users()).map(|u| train.user_mean(u)).collect();
        let centered: Vec<SparseVec> = (0..train.n_items())
            .map(|i| train.col(i).iter().map(|&(u, r)| (u, r - user_means[u])).collect())
            .collect();
        Ok(Self {
            params,
            norms: centered.iter().map(|v| norm(v)).collect(),
            item_means: (0..train.n_items()).map(|i| train.item_mean(i)).collect(),
            centered,
            matrix: train.clone(),
        })
    }

    pub fn params(&self) -> KnnParams {
        self.params
    }

    pub fn similarity(&self, a: &str, b: &str) -> Option<f64> {
        let (a, b) = (self.matrix.item_idx(a)?, self.matrix.item_idx(b)?);
        Some(cosine(&self.centered[a], self.norms[a], &self.centered[b], self.norms[b]))
    }
}

impl Recommender for ItemKnn {
    fn name(&self) -> &'static str {
        "itemknn"
    }

    fn predict(&self, user: &str, item: &str) -> Result<f64, RecsysError> {
        let Some(i) = self.matrix.item_idx(item) else {
            return Ok(clamp_rating(self.matrix.global_mean()));
        };
        let base = self.item_means[i];
        let Some(u) = self.matrix.user_idx(user) else {
            return Ok(clamp_rating(base));
        };
        let neighbors = self
            .matrix
            .row(u)
            .iter()
            .filter(|&&(j, _)| j != i)
            .map(|&(j, r)| {
                let sim = cosine(&self.centered[i], self.norms[i], &self.centered[j], self.norms[j]);
                (j, sim, r - self.item_means[j])
            })
            .collect();
        let offset = neighborhood_offset(neighbors, self.params.k).unwrap_or(0.0);
        Ok(clamp_rating(base + offset))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: &[(&str, &str, f64)]) -> RatingMatrix {
        RatingMatrix::from_triples(rows.iter().map(|&(u, i, r)| (u, i, r))).unwrap()
    }

    #[test]
    fn identical_users_have_similarity_one() {
        let m = matrix(&[("a", "x", 5.0), ("a", "y", 2.0), ("b", "x", 5.0), ("b", "y", 2.0), ("c", "z", 3.0)]);
        let knn = UserKnn::fit(&m, KnnParams::default()).unwrap();
        assert!((knn.similarity("a", "b").unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn user_without_rated_neighbors_gets_own_mean() {
        let m = matrix(&[("a", "x", 5.0), ("a", "y", 3.0), ("b", "z", 1.0)]);
        let knn = UserKnn::fit(&m, KnnParams::default()).unwrap();
        assert_eq!(knn.predict("a", "z").unwrap(), 4.0);
        assert_eq!(knn.predict("nobody", "z").unwrap(), m.global_mean());
    }

    // Three users, hand-computed BM25 weights, cosine and weighted average.
    #[test]
    fn user_knn_hand_corpus() {
        let m = matrix(&[
            ("a", "x", 4.0),
            ("a", "y", 2.0),
            ("b", "x", 4.0),
            ("b", "y", 2.0),
            ("b", "z", 5.0),
            ("c", "y", 1.0),
            ("c", "z", 2.0),
        ]);
        let knn = UserKnn::fit(&m, KnnParams::default()).unwrap();
        let (k1, b) = (1.2, 0.75);
        // documents: x (len 8), y (len 5), z (len 7); avg 20/3; N = 3
        let len = |d: f64| 1.0 - b + b * d / (20.0 / 3.0);
        let w = |tf: f64, d: f64, idf: f64| idf * tf * (k1 + 1.0) / (tf + k1 * len(d));
        let idf = |df: f64| (1.0f64 + (3.0 - df + 0.5) / (df + 0.5)).ln();
        let a = [w(4.0, 8.0, idf(2.0)), w(2.0, 5.0, idf(2.0)), 0.0];
        let bv = [w(4.0, 8.0, idf(3.0)), w(2.0, 5.0, idf(3.0)), w(5.0, 7.0, idf(3.0))];
        let c = [0.0, w(1.0, 5.0, idf(2.0)), w(2.0, 7.0, idf(2.0))];
        let cos = |p: &[f64; 3], q: &[f64; 3]| {
            let dot: f64 = p.iter().zip(q).map(|(x, y)| x * y).sum();
            let n = |v: &[f64; 3]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
            dot / (n(p) * n(q))
        };
        let (s_ab, s_ac) = (cos(&a, &bv), cos(&a, &c));
        // user a (mean 3) on z: neighbors b (5 - 11/3) and c (2 - 3/2)
        let expected = 3.0 + (s_ab * (5.0 - 11.0 / 3.0) + s_ac * (2.0 - 1.5)) / (s_ab + s_ac);
        let got = knn.predict("a", "z").unwrap();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
        assert!((knn.similarity("a", "b").unwrap() - s_ab).abs() < 1e-12);
        let k1_only = UserKnn::fit(&m, KnnParams { k: 1, ..KnnParams::default() }).unwrap();
        let best = if s_ab >= s_ac { 5.0 - 11.0 / 3.0 } else { 0.5 };
        assert!((k1_only.predict("a", "z").unwrap() - (3.0 + best)).abs() < 1e-12);
    }

    #[test]
    fn duplicate_item_columns_have_similarity_one() {
        let m = matrix(&[
            ("a", "x", 5.0), ("a", "y", 5.0), ("a", "z", 1.0),
            ("b", "x", 2.0), ("b", "y", 2.0), ("b", "z", 4.0),
        ]);
        let knn = ItemKnn::fit(&m, KnnParams::default()).unwrap();
        assert!((knn.similarity("x", "y").unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn item_knn_falls_back_to_item_mean() {
        let m = matrix(&[("a", "x", 5.0), ("b", "x", 3.0), ("c", "y", 2.0)]);
        let knn = ItemKnn::fit(&m, KnnParams::default()).unwrap();
        assert_eq!(knn.predict("c", "x").unwrap(), 4.0);
        assert_eq!(knn.predict("c", "unseen").unwrap(), m.global_mean());
    }

    // Four items rated by three users; adjusted cosine by hand.
    #[test]
    fn item_knn_hand_corpus() {
        let m = matrix(&[
            ("a", "w", 5.0), ("a", "x", 4.0), ("a", "y", 1.0),
            ("b", "w", 4.0), ("b", "x", 5.0), ("b", "z", 2.0),
            ("c", "x", 2.0), ("c", "y", 4.0), ("c", "z", 5.0),
        ]);
        let knn = ItemKnn::fit(&m, KnnParams::default()).unwrap();
        let (ma, mb, mc) = (10.0 / 3.0, 11.0 / 3.0, 11.0 / 3.0);
        // centered columns over users (a, b, c)
        let w = [5.0 - ma, 4.0 - mb, 0.0];
        let x = [4.0 - ma, 5.0 - mb, 2.0 - mc];
        let y = [1.0 - ma, 0.0, 4.0 - mc];
        let z = [0.0, 2.0 - mb, 5.0 - mc];
        let cos = |p: &[f64; 3], q: &[f64; 3]| {
            let dot: f64 = p.iter().zip(q).map(|(s, t)| s * t).sum();
            let n = |v: &[f64; 3]| v.iter().map(|s| s * s).sum::<f64>().sqrt();
            dot / (n(p) * n(q))
        };
        // user c on w: c rated x, y, z
        let item_mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let (mw, mx, my, mz) = (4.5, item_mean(&[4.0, 5.0, 2.0]), 2.5, 3.5);
        let mut num = 0.0;
        let mut den = 0.0;
        for (s, r, mj) in [(cos(&w, &x), 2.0, mx), (cos(&w, &y), 4.0, my), (cos(&w, &z), 5.0, mz)] {
            if s > 0.0 {
                num += s * (r - mj);
                den += s;
            }
        }
        let expected = if den > 0.0 { mw + num / den } else { mw };
        assert!((knn.predict("c", "w").unwrap() - expected.clamp(1.0, 5.0)).abs() < 1e-12);
    }
}
