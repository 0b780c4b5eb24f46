use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{evaluate, EvalError, Gain, MetricReport};
use crate::corpus::Dataset;
use crate::recsys::Recommender;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub model: String,
    pub report: MetricReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkTable {
    pub rows: Vec<BenchmarkRow>,
}

/// Evaluates each fitted model on `test`.
pub fn benchmark(models: &[(&str, &dyn Recommender)], test: &Dataset, gain: Gain) -> Result<BenchmarkTable, EvalError> {
    let rows = models
        .iter()
        .map(|(name, model)| {
            Ok(BenchmarkRow {
                model: name.to_string(),
                report: evaluate(*model, test, gain)?,
            })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    Ok(BenchmarkTable { rows })
}

impl BenchmarkTable {
    /// Aligned text table; the best value of each column is wrapped in `**`
    /// (lowest RMSE and MAE, highest nDCG@10 and MAP).
    pub fn to_text(&self) -> String {
        type Column = (&'static str, fn(&MetricReport) -> f64, bool);
        let columns: [Column; 4] = [
            ("RMSE", |r| r.rmse, false),
            ("MAE", |r| r.mae, false),
            ("nDCG@10", |r| r.ndcg_at_10, true),
            ("MAP", |r| r.map, true),
        ];
        let best: Vec<Option<f64>> = columns
            .iter()
            .map(|(_, get, higher)| {
                self.rows
                    .iter()
                    .map(|row| get(&row.report))
                    .reduce(|a, b| if (b > a) == *higher && b != a { b } else { a })
            })
            .collect();
        let name_width = self.rows.iter().map(|r| r.model.len()).max().unwrap_or(0).max(5);
        let mut out = String::new();
        let _ = write!(out, "{:<name_width$}", "Model");
        for (title, _, _) in &columns {
            let _ = write!(out, "  {title:>11}");
        }
        out.push('\n');
        for row in &self.rows {
            let _ = write!(out, "{:<name_width$}", row.model);
            for ((_, get, _), best) in columns.iter().zip(&best) {
                let v = get(&row.report);
                let cell = if Some(v) == *best {
                    format!("**{v:.4}**")
                } else {
                    format!("{v:.4}")
                };
                let _ = write!(out, "  {cell:>11}");
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::record;
    use crate::recsys::RecsysError;

    struct Oracle(Dataset);

    impl Recommender for Oracle {
        fn name(&self) -> &'static str {
            "oracle"
        }
        fn predict(&self, user: &str, item: &str) -> Result<f64, RecsysError> {
            Ok(self
                .0
                .user_records(user)
                .find(|r| r.item_id == item)
                .map(|r| r.rating as f64)
                .unwrap_or(3.0))
        }
    }

    struct Constant;

    impl Recommender for Constant {
        fn name(&self) -> &'static str {
            "constant"
        }
        fn predict(&self, _: &str, _: &str) -> Result<f64, RecsysError> {
            Ok(3.0)
        }
    }

    fn test_data() -> Dataset {
        Dataset::new(vec![
            record("a", "x", 5, "pool"),
            record("a", "y", 2, "view"),
            record("a", "z", 4, "bed"),
            record("b", "x", 1, "pool"),
            record("b", "y", 4, "view"),
        ])
    }

    #[test]
    fn oracle_model_scores_perfectly() {
        let data = test_data();
        let oracle = Oracle(data.clone());
        let table = benchmark(&[("oracle", &oracle)], &data, Gain::Linear).unwrap();
        assert_eq!(table.rows.len(), 1);
        let r = &table.rows[0].report;
        assert_eq!((r.rmse, r.ndcg_at_10, r.map), (0.0, 1.0, 1.0));
    }

    #[test]
    fn text_table_bolds_column_best() {
        let data = test_data();
        let oracle = Oracle(data.clone());
        let table = benchmark(&[("oracle", &oracle), ("constant", &Constant)], &data, Gain::Linear).unwrap();
        let text = table.to_text();
        let oracle_line = text.lines().find(|l| l.starts_with("oracle")).unwrap();
        let constant_line = text.lines().find(|l| l.starts_with("constant")).unwrap();
        assert_eq!(oracle_line.matches("**").count(), 8);
        assert!(!constant_line.contains("**0.0000**"));
        assert!(text.starts_with("Model"));
        let json = serde_json::to_value(&table).unwrap();
        assert!(json["rows"][0]["report"]["rmse"].is_number());
    }
}
