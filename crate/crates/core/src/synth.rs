//! Seeded synthetic corpora.
//!
//! [`generate`] builds a review corpus in which every item carries one
//! feature word (also present in its title) and every user holds strong
//! opinions about a few "focus" features, so the features a profile names
//! carry real rating signal. [`low_rank_ratings`] draws a noisy low-rank
//! rating matrix for factorization checks.

use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::ReviewRecord;
use crate::profilegen::Domain;

const HOTEL_FEATURES: &[(&str, &str)] = &[
    ("pool", "pools"),
    ("breakfast", "breakfasts"),
    ("view", "views"),
    ("location", "locations"),
    ("staff", "staff"),
    ("bed", "beds"),
    ("bathroom", "bathrooms"),
    ("noise", "noise"),
    ("parking", "parking"),
    ("wifi", "wifi"),
    ("spa", "spas"),
    ("gym", "gyms"),
    ("restaurant", "restaurants"),
    ("bar", "bars"),
    ("beach", "beaches"),
    ("garden", "gardens"),
    ("balcony", "balconies"),
    ("shower", "showers"),
];

const MOVIE_FEATURES: &[(&str, &str)] = &[
    ("comedy", "comedies"),
    ("action", "action"),
    ("plot", "plots"),
    ("acting", "acting"),
    ("soundtrack", "soundtracks"),
    ("romance", "romances"),
    ("horror", "horror"),
    ("animation", "animation"),
    ("dialogue", "dialogues"),
    ("villain", "villains"),
    ("ending", "endings"),
    ("cast", "casts"),
    ("thriller", "thrillers"),
    ("twist", "twists"),
    ("music", "music"),
];

const HOTEL_ADJECTIVES: &[&str] = &["Azure", "Golden", "Quiet", "Royal", "Cedar", "Harbor", "Silver", "Maple", "Grand", "Sunny"];
const HOTEL_KINDS: &[&str] = &["Hotel", "Inn", "Resort", "Lodge", "Suites"];
const MOVIE_ADJECTIVES: &[&str] = &["Silent", "Last", "Crimson", "Hidden", "Broken", "Endless", "Wild", "Midnight", "Lucky", "Distant"];
const MOVIE_KINDS: &[&str] = &["Story", "Chronicles", "Affair", "Returns", "Night"];

/// (singular, plural) surface forms of the feature vocabulary.
pub fn feature_words(domain: Domain) -> &'static [(&'static str, &'static str)] {
    match domain {
        Domain::Hotels => HOTEL_FEATURES,
        Domain::MoviesTv => MOVIE_FEATURES,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub domain: Domain,
    pub n_users: usize,
    pub n_items: usize,
    pub min_records: usize,
    pub max_records: usize,
    /// Features each user feels strongly about.
    pub focus_features: usize,
    /// Share of focus features the user likes (the rest are disliked).
    pub positive_share: f64,
    /// Share of a user's records drawn from items with a focus feature.
    pub focus_share: f64,
    /// Rating shift per unit of preference.
    pub preference_effect: f64,
    pub item_quality_std: f64,
    pub user_bias_std: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            domain: Domain::Hotels,
            n_users: 200,
            n_items: 400,
            min_records: 12,
            max_records: 40,
            focus_features: 5,
            positive_share: 0.7,
            focus_share: 0.65,
            preference_effect: 1.2,
            item_quality_std: 0.4,
            user_bias_std: 0.3,
            noise_std: 0.5,
            seed: 0,
        }
    }
}

fn capitalize(word: &str) -> String {
    let mut c = word.chars();
    match c.next() {
        Some(first) => first.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn explanation(surface: &str, rating: u8) -> String {
    match rating {
        5 => format!("the {surface} was wonderful"),
        4 => format!("really liked the {surface}"),
        3 => format!("the {surface} was okay"),
        2 => format!("the {surface} was disappointing"),
        _ => format!("hated the {surface}"),
    }
}

/// Generates the corpus; the output depends only on `config`.
pub fn generate(config: &SynthConfig) -> Vec<ReviewRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(crate::mix_seed(config.seed, &["synth"]));
    let vocab = feature_words(config.domain);
    let (adjectives, kinds) = match config.domain {
        Domain::Hotels => (HOTEL_ADJECTIVES, HOTEL_KINDS),
        Domain::MoviesTv => (MOVIE_ADJECTIVES, MOVIE_KINDS),
    };
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");

    struct Item {
        id: String,
        title: String,
        feature: usize,
        quality: f64,
    }
    let items: Vec<Item> = (0..config.n_items)
        .map(|n| {
            let feature = n % vocab.len();
            let (singular, plural) = vocab[feature];
            let word = if rng.random_bool(0.7) { singular } else { plural };
            let adjective = adjectives.choose(&mut rng).expect("non-empty");
            let kind = kinds.choose(&mut rng).expect("non-empty");
            let title = match config.domain {
                Domain::Hotels => format!("{adjective} {} {kind}", capitalize(word)),
                Domain::MoviesTv => format!("The {adjective} {} {kind}", capitalize(word)),
            };
            Item {
                id: format!("i{n:04}"),
                title,
                feature,
                quality: config.item_quality_std * std_normal.sample(&mut rng),
            }
        })
        .collect();
    let by_feature: Vec<Vec<usize>> = (0..vocab.len())
        .map(|f| (0..items.len()).filter(|&i| items[i].feature == f).collect())
        .collect();

    let mut records = Vec::new();
    for u in 0..config.n_users {
        let user = format!("u{u:04}");
        let focus: Vec<usize> =
            rand::seq::index::sample(&mut rng, vocab.len(), config.focus_features.min(vocab.len())).into_vec();
        let mut preference = vec![0.0; vocab.len()];
        for &f in &focus {
            let sign = if rng.random_bool(config.positive_share.clamp(0.0, 1.0)) { 1.0 } else { -1.0 };
            preference[f] = sign * rng.random_range(0.8..1.2);
        }
        let bias = config.user_bias_std * std_normal.sample(&mut rng);
        let wanted = rng.random_range(config.min_records..=config.max_records.max(config.min_records));
        let wanted = wanted.min(items.len());
        let mut chosen = BTreeSet::new();
        let mut attempts = 0;
        while chosen.len() < wanted && attempts < wanted * 20 {
            attempts += 1;
            let item = if !focus.is_empty() && rng.random_bool(config.focus_share.clamp(0.0, 1.0)) {
                let f = focus[rng.random_range(0..focus.len())];
                match by_feature[f].choose(&mut rng) {
                    Some(&i) => i,
                    None => continue,
                }
            } else {
                rng.random_range(0..items.len())
            };
            chosen.insert(item);
        }
        for &i in &chosen {
            let item = &items[i];
            let noise = config.noise_std * std_normal.sample(&mut rng);
            let raw = 3.3 + config.preference_effect * preference[item.feature] + item.quality + bias + noise;
            let rating = raw.round().clamp(1.0, 5.0) as u8;
            let (singular, plural) = vocab[item.feature];
            let surface = if rng.random_bool(0.6) { singular } else { plural };
            records.push(ReviewRecord {
                user_id: user.clone(),
                item_id: item.id.clone(),
                item_title: item.title.clone(),
                rating,
                explanation: explanation(surface, rating),
                feature: surface.to_string(),
            });
        }
    }
    records
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LowRankConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub rank: usize,
    pub density: f64,
    pub noise_std: f64,
    pub factor_std: f64,
    pub bias_std: f64,
    /// Share of cells held out for testing.
    pub test_share: f64,
    pub seed: u64,
}

impl Default for LowRankConfig {
    fn default() -> Self {
        Self {
            n_users: 500,
            n_items: 300,
            rank: 3,
            density: 0.05,
            noise_std: 0.1,
            factor_std: 0.6,
            bias_std: 0.3,
            test_share: 0.1,
            seed: 0,
        }
    }
}

pub type Triple = (String, String, f64);

#[derive(Debug, Clone, PartialEq)]
pub struct LowRankData {
    pub train: Vec<Triple>,
    pub test: Vec<Triple>,
}

/// Ratings `3 + b_u + b_i + u·v + noise`, clamped to [1, 5], observed on a
/// random `density` share of cells. Test cells are only taken where the user
/// and the item keep at least three training cells.
pub fn low_rank_ratings(config: &LowRankConfig) -> LowRankData {
    let mut rng = ChaCha8Rng::seed_from_u64(crate::mix_seed(config.seed, &["low-rank"]));
    let normal = |std: f64| Normal::new(0.0, std.max(0.0)).expect("valid std");
    let (factor, bias, noise) = (normal(config.factor_std), normal(config.bias_std), normal(config.noise_std));
    let users: Vec<Vec<f64>> = (0..config.n_users)
        .map(|_| (0..config.rank).map(|_| factor.sample(&mut rng)).collect())
        .collect();
    let items: Vec<Vec<f64>> = (0..config.n_items)
        .map(|_| (0..config.rank).map(|_| factor.sample(&mut rng)).collect())
        .collect();
    let user_bias: Vec<f64> = (0..config.n_users).map(|_| bias.sample(&mut rng)).collect();
    let item_bias: Vec<f64> = (0..config.n_items).map(|_| bias.sample(&mut rng)).collect();

    let per_user = ((config.n_items as f64 * config.density).round() as usize).clamp(1, config.n_items);
    let mut cells = Vec::with_capacity(config.n_users * per_user);
    for (u, pu) in users.iter().enumerate() {
        for i in rand::seq::index::sample(&mut rng, config.n_items, per_user) {
            let dot: f64 = pu.iter().zip(&items[i]).map(|(a, b)| a * b).sum();
            let r = (3.0 + user_bias[u] + item_bias[i] + dot + noise.sample(&mut rng)).clamp(1.0, 5.0);
            cells.push((u, i, r));
        }
    }
    let mut user_count = vec![0usize; config.n_users];
    let mut item_count = vec![0usize; config.n_items];
    for &(u, i, _) in &cells {
        user_count[u] += 1;
        item_count[i] += 1;
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (u, i, r) in cells {
        let triple = (format!("u{u:04}"), format!("i{i:04}"), r);
        if user_count[u] > 3 && item_count[i] > 3 && rng.random_bool(config.test_share.clamp(0.0, 1.0)) {
            user_count[u] -= 1;
            item_count[i] -= 1;
            test.push(triple);
        } else {
            train.push(triple);
        }
    }
    LowRankData { train, test }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preference::stem_feature;

    #[test]
    fn deterministic_per_seed() {
        let cfg = SynthConfig { n_users: 20, n_items: 50, ..SynthConfig::default() };
        assert_eq!(generate(&cfg), generate(&cfg));
        assert_ne!(generate(&cfg), generate(&SynthConfig { seed: 1, ..cfg.clone() }));
    }

    #[test]
    fn vocabulary_stems_are_distinct_and_shared_by_variants() {
        for domain in [Domain::Hotels, Domain::MoviesTv] {
            let stems: BTreeSet<String> = feature_words(domain)
                .iter()
                .map(|(s, p)| {
                    assert_eq!(stem_feature(s), stem_feature(p), "{s}/{p}");
                    stem_feature(s)
                })
                .collect();
            assert_eq!(stems.len(), feature_words(domain).len());
        }
    }

    #[test]
    fn records_are_valid_and_titles_carry_the_feature() {
        let cfg = SynthConfig { n_users: 30, n_items: 80, domain: Domain::MoviesTv, ..SynthConfig::default() };
        let records = generate(&cfg);
        assert!(!records.is_empty());
        for r in &records {
            r.validate().unwrap();
            let stem = stem_feature(&r.feature);
            assert!(r.item_title.split(' ').any(|w| stem_feature(w) == stem), "{} / {}", r.item_title, r.feature);
        }
    }

    #[test]
    fn low_rank_split_keeps_entities_in_train() {
        let data = low_rank_ratings(&LowRankConfig { n_users: 60, n_items: 40, density: 0.2, ..LowRankConfig::default() });
        let users: BTreeSet<&str> = data.train.iter().map(|t| t.0.as_str()).collect();
        let items: BTreeSet<&str> = data.train.iter().map(|t| t.1.as_str()).collect();
        assert!(!data.test.is_empty());
        assert!(data.test.iter().all(|t| users.contains(t.0.as_str()) && items.contains(t.1.as_str())));
        assert!(data.train.iter().chain(&data.test).all(|t| (1.0..=5.0).contains(&t.2)));
    }
}
