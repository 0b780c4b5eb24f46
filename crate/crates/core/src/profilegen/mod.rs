//! Natural-language profiles: prompt construction, generation, editing and storage.

pub mod generator;
pub mod prompt;
pub mod store;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Dataset;
use crate::preference::{rank_features, select_reviews, stem_feature, Blocklist, PreferenceError};
use crate::text::{mentions, truncate_tokens, whitespace_len};

pub use generator::{
    GenerationRequest, GeneratorError, OfflineGenerator, RemoteConfig, RemoteGenerator, Task,
    TextGenerator,
};
pub use prompt::{
    build_edit_prompt, build_profile_prompt, check_edit_precondition, recommendation_prompt,
    FeatureCue, ProfilePrompt, REVIEWS_PER_FEATURE,
};
pub use store::{append_profile, load_profiles, save_profiles, ProfileSet, StoreReport};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProfileError {
    #[error("user {0:?} has no rankable features")]
    EmptyRanking(String),
    #[error("{count} reviews for {stem:?}, at most {max} allowed", max = REVIEWS_PER_FEATURE)]
    TooManyReviews { stem: String, count: usize },
    #[error("profile already mentions {0:?}")]
    AlreadyMentioned(String),
    #[error("profile does not express a liking for {0:?}")]
    NotLiked(String),
    #[error("generator returned empty text")]
    EmptyGeneration,
    #[error("edit toward {target:?} was not applied by the generator")]
    EditNotApplied { target: String },
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error(transparent)]
    Preference(#[from] PreferenceError),
    #[error("profile store {path}: {message}")]
    Store { path: String, message: String },
}

impl ProfileError {
    /// Errors caused by the backend rather than by the request.
    pub fn is_backend_failure(&self) -> bool {
        matches!(self, Self::Generator(_) | Self::EmptyGeneration | Self::EditNotApplied { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    MoviesTv,
    Hotels,
}

impl Domain {
    pub fn preference_phrase(self) -> &'static str {
        match self {
            Domain::MoviesTv => "movie and tv preferences",
            Domain::Hotels => "hotel preferences",
        }
    }

    /// How a feature is named in edit prompts and edit sentences.
    pub fn target_phrase(self, target: &str) -> String {
        match self {
            Domain::MoviesTv => format!("{target} movies"),
            Domain::Hotels => format!("hotels with a great {target}"),
        }
    }
}

impl std::str::FromStr for Domain {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "movies_tv" | "movies" => Ok(Domain::MoviesTv),
            "hotels" => Ok(Domain::Hotels),
            other => Err(format!("unknown domain {other:?} (movies_tv or hotels)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditDirection {
    AddLike,
    RemoveLike,
}

impl std::str::FromStr for EditDirection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "add" | "add_like" => Ok(Self::AddLike),
            "remove" | "remove_like" => Ok(Self::RemoveLike),
            other => Err(format!("unknown edit direction {other:?} (add or remove)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub max_tokens: usize,
    pub temperature: f64,
    pub seed: u64,
}

impl GenerationParams {
    /// 200 tokens, temperature 0.7, seed 0.
    pub fn profile() -> Self {
        Self {
            max_tokens: 200,
            temperature: 0.7,
            seed: 0,
        }
    }

    /// Edits get more room: 300 tokens.
    pub fn edit() -> Self {
        Self {
            max_tokens: 300,
            ..Self::profile()
        }
    }
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self::profile()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditInfo {
    pub target: String,
    pub direction: EditDirection,
}

/// A generated (or hand-edited) profile with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NlProfile {
    #[serde(rename = "user")]
    pub user_id: String,
    pub text: String,
    #[serde(rename = "features")]
    pub features_used: Vec<String>,
    #[serde(rename = "tokens")]
    pub token_count: usize,
    #[serde(rename = "generator")]
    pub generator_id: String,
    /// Revision of the user's profile, 0 for the first one.
    #[serde(default)]
    pub revision: u32,
    /// Revision this profile was derived from.
    pub parent: Option<u32>,
    #[serde(default)]
    pub params: GenerationParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<ProfilePrompt>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edit: Option<EditInfo>,
}

impl NlProfile {
    pub fn new(
        user: &str,
        text: &str,
        features_used: Vec<String>,
        generator_id: &str,
        params: GenerationParams,
    ) -> Self {
        let text = truncate_tokens(text, params.max_tokens);
        Self {
            user_id: user.to_string(),
            token_count: whitespace_len(&text),
            text,
            features_used,
            generator_id: generator_id.to_string(),
            revision: 0,
            parent: None,
            params,
            prompt: None,
            edit: None,
        }
    }

    /// A child revision with replaced text.
    pub fn revise(&self, text: &str, generator_id: &str, params: GenerationParams) -> Self {
        let mut child = Self::new(
            &self.user_id,
            text,
            self.features_used.clone(),
            generator_id,
            params,
        );
        child.revision = self.revision + 1;
        child.parent = Some(self.revision);
        child
    }
}

/// Generates a profile for `user` from a built prompt. Output longer than
/// `params.max_tokens` whitespace tokens is truncated.
pub fn generate_profile(
    user: &str,
    prompt: &ProfilePrompt,
    generator: &dyn TextGenerator,
    params: GenerationParams,
) -> Result<NlProfile, ProfileError> {
    let rendered = prompt.render();
    let request = GenerationRequest {
        prompt: &rendered,
        task: Task::Profile(prompt),
        params: &params,
    };
    let text = generator.generate(&request)?;
    if text.trim().is_empty() {
        return Err(ProfileError::EmptyGeneration);
    }
    let mut profile = NlProfile::new(user, &text, prompt.feature_stems(), &generator.id(), params);
    profile.prompt = Some(prompt.clone());
    Ok(profile)
}

fn edit_applied(text: &str, stem: &str, direction: EditDirection) -> bool {
    let m = mentions(text, stem);
    match direction {
        EditDirection::AddLike => m.positive > 0,
        EditDirection::RemoveLike => m.positive == 0,
    }
}

/// Edits a profile toward liking (or no longer liking) `target` and returns
/// the child revision. The result is checked for the requested change; a
/// generation that misses it is retried once.
pub fn edit_profile(
    profile: &NlProfile,
    target: &str,
    direction: EditDirection,
    domain: Domain,
    generator: &dyn TextGenerator,
    params: GenerationParams,
) -> Result<NlProfile, ProfileError> {
    let prompt = build_edit_prompt(profile, target, direction, domain)?;
    let stem = stem_feature(target);
    let request = GenerationRequest {
        prompt: &prompt,
        task: Task::Edit {
            profile: &profile.text,
            target,
            direction,
            domain,
        },
        params: &params,
    };
    let mut text = String::new();
    for _ in 0..2 {
        text = truncate_tokens(&generator.generate(&request)?, params.max_tokens);
        if edit_applied(&text, &stem, direction) && !text.trim().is_empty() {
            break;
        }
    }
    if text.trim().is_empty() {
        return Err(ProfileError::EmptyGeneration);
    }
    if !edit_applied(&text, &stem, direction) {
        return Err(ProfileError::EditNotApplied {
            target: target.to_string(),
        });
    }
    let mut child = profile.revise(&text, &generator.id(), params);
    if direction == EditDirection::RemoveLike {
        child.features_used.retain(|f| *f != stem);
    }
    child.edit = Some(EditInfo {
        target: target.to_string(),
        direction,
    });
    Ok(child)
}

/// Settings for generating one profile per user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileJob {
    pub k: usize,
    pub reviews_per_feature: usize,
    pub blocklist: Blocklist,
    pub domain: Domain,
    pub params: GenerationParams,
    pub review_seed: u64,
    /// Upper bound on concurrent generator calls.
    pub max_in_flight: usize,
}

impl Default for ProfileJob {
    fn default() -> Self {
        Self {
            k: 5,
            reviews_per_feature: REVIEWS_PER_FEATURE,
            blocklist: Blocklist::domain_defaults(),
            domain: Domain::Hotels,
            params: GenerationParams::profile(),
            review_seed: 0,
            max_in_flight: 4,
        }
    }
}

impl ProfileJob {
    /// Ranking, review sampling and prompt for one user.
    pub fn prompt_for(&self, data: &Dataset, user: &str) -> Result<ProfilePrompt, ProfileError> {
        let ranking = rank_features(user, data, self.k, &self.blocklist)?;
        let reviews: BTreeMap<String, Vec<String>> = ranking
            .stems()
            .map(|stem| {
                let picked = select_reviews(
                    data,
                    user,
                    stem,
                    self.reviews_per_feature.min(REVIEWS_PER_FEATURE),
                    self.review_seed,
                );
                (stem.to_string(), picked)
            })
            .collect();
        build_profile_prompt(&ranking, &reviews, self.domain)
    }
}

#[derive(Debug, Default)]
pub struct BatchOutcome {
    pub profiles: Vec<NlProfile>,
    pub failures: Vec<(String, ProfileError)>,
}

/// Generates a profile for every user of `data` (normally the train split),
/// at most `job.max_in_flight` at a time. Output is in user order.
pub fn generate_profiles(
    data: &Dataset,
    job: &ProfileJob,
    generator: &dyn TextGenerator,
) -> BatchOutcome {
    use rayon::prelude::*;

    let users: Vec<&str> = data.users().collect();
    let run = || {
        users
            .par_iter()
            .map(|user| {
                let result = job
                    .prompt_for(data, user)
                    .and_then(|prompt| generate_profile(user, &prompt, generator, job.params));
                (user.to_string(), result)
            })
            .collect::<Vec<_>>()
    };
    let results = match rayon::ThreadPoolBuilder::new()
        .num_threads(job.max_in_flight.max(1))
        .build()
    {
        Ok(pool) => pool.install(run),
        Err(_) => run(),
    };
    let mut outcome = BatchOutcome::default();
    for (user, result) in results {
        match result {
            Ok(p) => outcome.profiles.push(p),
            Err(e) => outcome.failures.push((user, e)),
        }
    }
    outcome
}
