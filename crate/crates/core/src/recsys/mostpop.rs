use serde::{Deserialize, Serialize};

use super::{clamp_rating, RatingMatrix, Recommender, RecsysError};

/// Popularity baseline. Ranks by training count; predicts the item mean
/// (global mean for unseen items), since counts are not on the rating scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MostPop {
    counts: std::collections::BTreeMap<String, usize>,
    means: std::collections::BTreeMap<String, f64>,
    global_mean: f64,
}

impl MostPop {
    pub fn fit(train: &RatingMatrix) -> Self {
        let mut counts = std::collections::BTreeMap::new();
        let mut means = std::collections::BTreeMap::new();
        for (idx, item) in train.items().iter().enumerate() {
            counts.insert(item.clone(), train.item_record_count(idx));
            means.insert(item.clone(), train.item_mean(idx));
        }
        Self {
            counts,
            means,
            global_mean: train.global_mean(),
        }
    }

    pub fn count(&self, item: &str) -> usize {
        self.counts.get(item).copied().unwrap_or(0)
    }
}

impl Recommender for MostPop {
    fn name(&self) -> &'static str {
        "mostpop"
    }

    fn predict(&self, _user: &str, item: &str) -> Result<f64, RecsysError> {
        Ok(clamp_rating(self.means.get(item).copied().unwrap_or(self.global_mean)))
    }

    fn score(&self, _user: &str, item: &str) -> Result<f64, RecsysError> {
        Ok(self.count(item) as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recsys::top_k;

    fn model(counts: &[(&str, usize)]) -> MostPop {
        let triples = counts.iter().flat_map(|(item, n)| {
            (0..*n).map(move |u| (format!("u{u}"), item.to_string(), 4.0))
        });
        MostPop::fit(&RatingMatrix::from_triples(triples).unwrap())
    }

    #[test]
    fn ranks_by_count() {
        let m = model(&[("A", 1), ("B", 9), ("C", 5)]);
        let top = top_k(&m, "anyone", &["A", "B", "C"], 2).unwrap();
        let ids: Vec<_> = top.iter().map(|s| s.item.as_str()).collect();
        assert_eq!(ids, vec!["B", "C"]);
        let m = model(&[("A", 3), ("B", 1)]);
        let top = top_k(&m, "x", &["B", "A"], 10).unwrap();
        assert_eq!(top[0].item, "A");
    }

    #[test]
    fn predicts_item_mean_or_global_mean() {
        let train = RatingMatrix::from_triples([("u", "a", 4.0), ("v", "a", 4.0), ("u", "b", 1.0)]).unwrap();
        let m = MostPop::fit(&train);
        assert_eq!(m.predict("u", "a").unwrap(), 4.0);
        assert_eq!(m.predict("u", "unseen").unwrap(), 3.0);
    }
}
