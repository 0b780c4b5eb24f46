//! Scrutable recommendation from natural-language user profiles.
//!
//! The pipeline ranks each user's reviewed features by a utility score,
//! turns the top features and their reviews into a first-person profile
//! paragraph, and predicts ratings from that paragraph and an item title
//! alone. Because the profile is plain text, a user can edit it and get
//! updated recommendations without any retraining.
//!
//! Modules:
//! * [`corpus`]: review records, ingest, statistics, warm-start splitting
//! * [`preference`]: stem grouping and feature utility ranking
//! * [`profilegen`]: profile and edit prompts, text generators, the profile store
//! * [`recsys`]: MostPop, UserKNN-BM25, ItemKNN, MF and the profile-text regressor
//! * [`eval`]: metrics on condensed lists, benchmark tables, scrutability and ablation studies
//! * [`synth`]: seeded synthetic corpora

pub mod corpus;
pub mod eval;
pub mod preference;
pub mod profilegen;
pub mod recsys;
pub mod synth;
pub mod text;

use std::hash::Hasher;

/// Derives a child seed from a parent seed and a list of labels. Stable
/// across platforms and releases (FNV-1a).
pub fn mix_seed(seed: u64, labels: &[&str]) -> u64 {
    let mut h = fnv::FnvHasher::default();
    h.write(&seed.to_le_bytes());
    for label in labels {
        h.write(label.as_bytes());
        h.write_u8(0xff);
    }
    h.finish()
}
