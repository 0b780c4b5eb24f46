use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CorpusError, Dataset};

/// Users need this many records so a per-user split leaves five in train.
pub const MIN_USER_RECORDS: usize = 7;
pub const MIN_TRAIN_RECORDS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.8,
            validation: 0.1,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let parts = [self.train, self.validation, self.test];
        let ok = parts.iter().all(|p| p.is_finite() && *p > 0.0)
            && (parts.iter().sum::<f64>() - 1.0).abs() < 1e-9;
        if ok {
            Ok(())
        } else {
            Err(CorpusError::InvalidRatios((self.train, self.validation, self.test)))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitBundle {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    /// Users dropped for having fewer than [`MIN_USER_RECORDS`] records, with their counts.
    pub dropped_users: Vec<(String, usize)>,
    /// Held-out records exchanged with a same-user train record to keep their item warm.
    pub swapped: usize,
    /// Held-out records moved into train because no exchange was possible.
    pub moved_to_train: usize,
}

/// Per-user stratified split with item warm-start repair.
///
/// Each user's records are shuffled and divided by the ratios, rounding so that
/// validation and test get at least one record each. Afterwards every held-out
/// record whose item never occurs in train is exchanged with a train record of
/// the same user whose item stays covered, or moved to train when no such
/// record exists.
pub fn split_warm_start(
    data: &Dataset,
    ratios: SplitRatios,
    seed: u64,
) -> Result<(SplitBundle, SplitReport), CorpusError> {
    ratios.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = SplitReport::default();

    #[derive(Clone, Copy, PartialEq)]
    enum Part {
        Train,
        Validation,
        Test,
    }
    // position -> part, for kept records only
    let mut assignment: BTreeMap<usize, Part> = BTreeMap::new();
    let mut user_train: HashMap<&str, Vec<usize>> = HashMap::new();

    for user in data.users() {
        let positions = data.user_positions(user);
        let n = positions.len();
        if n < MIN_USER_RECORDS {
            tracing::warn!(user, records = n, "dropping user with too few records for a warm-start split");
            report.dropped_users.push((user.to_string(), n));
            continue;
        }
        let mut shuffled = positions.to_vec();
        shuffled.shuffle(&mut rng);
        let (n_val, n_test) = if n >= 10 {
            let v = ((n as f64 * ratios.validation).round() as usize).max(1);
            let t = ((n as f64 * ratios.test).round() as usize).max(1);
            // keep the train floor for extreme ratios
            let room = n - MIN_TRAIN_RECORDS;
            if v + t > room {
                let v = v.min(room - 1).max(1);
                (v, (room - v).max(1))
            } else {
                (v, t)
            }
        } else {
            (1, 1)
        };
        let n_train = n - n_val - n_test;
        for (i, &pos) in shuffled.iter().enumerate() {
            let part = if i < n_train {
                Part::Train
            } else if i < n_train + n_val {
                Part::Validation
            } else {
                Part::Test
            };
            assignment.insert(pos, part);
        }
        user_train.insert(user, shuffled[..n_train].to_vec());
    }
    if assignment.is_empty() {
        return Err(CorpusError::NothingToSplit(MIN_USER_RECORDS));
    }

    let records = data.records();
    let mut train_item_count: HashMap<&str, usize> = HashMap::new();
    for (&pos, part) in &assignment {
        if *part == Part::Train {
            *train_item_count.entry(records[pos].item_id.as_str()).or_default() += 1;
        }
    }

    let held_out: Vec<usize> = assignment
        .iter()
        .filter(|(_, p)| **p != Part::Train)
        .map(|(&pos, _)| pos)
        .collect();
    for pos in held_out {
        let item = records[pos].item_id.as_str();
        if train_item_count.get(item).copied().unwrap_or(0) > 0 {
            continue;
        }
        let user = records[pos].user_id.as_str();
        let candidates = user_train.get_mut(user).expect("kept user");
        let swap = candidates
            .iter()
            .position(|&c| train_item_count[records[c].item_id.as_str()] >= 2);
        let part = assignment[&pos];
        match swap {
            Some(idx) => {
                let other = candidates[idx];
                *train_item_count.get_mut(records[other].item_id.as_str()).unwrap() -= 1;
                candidates[idx] = pos;
                assignment.insert(other, part);
                report.swapped += 1;
            }
            None => {
                candidates.push(pos);
                report.moved_to_train += 1;
            }
        }
        assignment.insert(pos, Part::Train);
        *train_item_count.entry(item).or_default() += 1;
    }

    let mut train = Vec::new();
    let mut validation = Vec::new();
    let mut test = Vec::new();
    for (pos, part) in assignment {
        let record = records[pos].clone();
        match part {
            Part::Train => train.push(record),
            Part::Validation => validation.push(record),
            Part::Test => test.push(record),
        }
    }
    Ok((
        SplitBundle {
            train: Dataset::new(train),
            validation: Dataset::new(validation),
            test: Dataset::new(test),
            seed,
        },
        report,
    ))
}

impl SplitBundle {
    /// Checks every structural invariant of a warm-start split against its source,
    /// returning a description of the first violation.
    pub fn check_invariants(&self, source: &Dataset) -> Result<(), String> {
        use std::collections::HashMap as Map;
        let mut counts: Map<&super::ReviewRecord, i64> = Map::new();
        for r in source.records() {
            if source.user_positions(&r.user_id).len() >= MIN_USER_RECORDS {
                *counts.entry(r).or_default() += 1;
            }
        }
        for part in [&self.train, &self.validation, &self.test] {
            for r in part.records() {
                let c = counts.entry(r).or_default();
                *c -= 1;
                if *c < 0 {
                    return Err(format!("record {r:?} over-represented in split"));
                }
            }
        }
        if let Some((r, _)) = counts.iter().find(|(_, c)| **c != 0) {
            return Err(format!("record {r:?} missing from split"));
        }
        for part in [&self.validation, &self.test] {
            for r in part.records() {
                if !self.train.has_user(&r.user_id) {
                    return Err(format!("user {} absent from train", r.user_id));
                }
                if !self.train.has_item(&r.item_id) {
                    return Err(format!("item {} absent from train", r.item_id));
                }
            }
        }
        for user in self.train.users() {
            let n = self.train.user_positions(user).len();
            if n < MIN_TRAIN_RECORDS {
                return Err(format!("user {user} has only {n} train records"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{record, ReviewRecord};
    use proptest::prelude::*;

    fn user_with(n: usize, user: &str, item_offset: usize) -> Vec<ReviewRecord> {
        (0..n)
            .map(|i| record(user, &format!("i{}", i + item_offset), (i % 5 + 1) as u8, "pool"))
            .collect()
    }

    #[test]
    fn ten_records_split_eight_one_one() {
        // items shared between two users so nothing needs repair
        let mut records = user_with(10, "a", 0);
        records.extend(user_with(10, "b", 0));
        records.extend(user_with(10, "c", 0));
        let data = Dataset::new(records);
        let (bundle, _) = split_warm_start(&data, SplitRatios::default(), 7).unwrap();
        bundle.check_invariants(&data).unwrap();
        assert_eq!(bundle.train.len() + bundle.validation.len() + bundle.test.len(), 30);
        for u in ["a", "b", "c"] {
            let held = bundle.validation.user_positions(u).len() + bundle.test.user_positions(u).len();
            let train = bundle.train.user_positions(u).len();
            // repairs only ever swap within a user, or move to train
            assert!(train >= 8 && train + held == 10);
        }
    }

    #[test]
    fn per_user_counts_without_repair() {
        let mut records = Vec::new();
        for u in 0..6 {
            records.extend(user_with(10, &format!("u{u}"), 0));
        }
        let data = Dataset::new(records);
        let (bundle, report) = split_warm_start(&data, SplitRatios::default(), 1).unwrap();
        if report.moved_to_train == 0 {
            for u in data.users() {
                assert_eq!(bundle.train.user_positions(u).len(), 8);
                assert_eq!(bundle.validation.user_positions(u).len(), 1);
                assert_eq!(bundle.test.user_positions(u).len(), 1);
            }
        }
    }

    #[test]
    fn drops_small_users() {
        let mut records = user_with(6, "small", 0);
        records.extend(user_with(9, "big", 0));
        let data = Dataset::new(records);
        let (bundle, report) = split_warm_start(&data, SplitRatios::default(), 0).unwrap();
        assert_eq!(report.dropped_users, vec![("small".to_string(), 6)]);
        assert!(!bundle.train.has_user("small"));
        bundle.check_invariants(&data).unwrap();
    }

    #[test]
    fn nothing_to_split() {
        let data = Dataset::new(user_with(3, "a", 0));
        assert!(matches!(
            split_warm_start(&data, SplitRatios::default(), 0),
            Err(CorpusError::NothingToSplit(_))
        ));
    }

    #[test]
    fn rejects_bad_ratios() {
        let data = Dataset::new(user_with(10, "a", 0));
        let ratios = SplitRatios { train: 0.7, validation: 0.1, test: 0.1 };
        assert!(split_warm_start(&data, ratios, 0).is_err());
    }

    #[test]
    fn same_seed_same_split() {
        let mut records = Vec::new();
        for u in 0..5 {
            records.extend(user_with(12 + u, &format!("u{u}"), u));
        }
        let data = Dataset::new(records);
        let a = split_warm_start(&data, SplitRatios::default(), 99).unwrap();
        let b = split_warm_start(&data, SplitRatios::default(), 99).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unique_items_are_repaired_into_train() {
        // every item is unique to one record: held-out items can only be fixed by moving
        let data = Dataset::new(user_with(10, "a", 0));
        let (bundle, report) = split_warm_start(&data, SplitRatios::default(), 3).unwrap();
        bundle.check_invariants(&data).unwrap();
        assert_eq!(report.moved_to_train, 2);
        assert_eq!(bundle.train.len(), 10);
    }

    fn corpus_strategy() -> impl Strategy<Value = Vec<ReviewRecord>> {
        prop::collection::vec((0u8..12, 0u8..30, 1u8..=5), 0..200).prop_map(|rows| {
            rows.into_iter()
                .map(|(u, i, r)| record(&format!("u{u}"), &format!("i{i}"), r, "pool"))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn split_invariants_hold(records in corpus_strategy(), seed in any::<u64>()) {
            let data = Dataset::new(records);
            match split_warm_start(&data, SplitRatios::default(), seed) {
                Ok((bundle, _)) => prop_assert!(bundle.check_invariants(&data).is_ok(), "{:?}", bundle.check_invariants(&data)),
                Err(CorpusError::NothingToSplit(_)) => {
                    prop_assert!(data.users().all(|u| data.user_positions(u).len() < MIN_USER_RECORDS));
                }
                Err(e) => prop_assert!(false, "unexpected error {e}"),
            }
        }
    }
}
