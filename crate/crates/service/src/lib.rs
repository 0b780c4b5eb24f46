//! HTTP JSON API over a fitted profile model.
//!
//! A user reads their natural-language profile, replaces it or asks the
//! generator for a guided edit, and gets recommendations and Coverage@k for
//! the current text. The model is shared read-only and never refit.

use std::collections::{BTreeMap, BTreeSet};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::routing::{get, post};
use axum::{Json, Router};
use rand::seq::IteratorRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use scrutable_core::corpus::Dataset;
use scrutable_core::eval::coverage_at_k;
use scrutable_core::preference::stem_feature;
use scrutable_core::profilegen::{
    edit_profile, Domain, EditDirection, EditInfo, GenerationParams, NlProfile, TextGenerator,
};
use scrutable_core::recsys::{top_k_for_profile, ScoredItem, TextScorer};
use scrutable_core::text::whitespace_len;

mod error;
mod store;

pub use error::{ApiError, ErrorBody};
pub use store::ProfileStore;

/// Longest profile accepted from a client, in whitespace tokens.
pub const MAX_PROFILE_TOKENS: usize = 300;
/// Generator id recorded on profiles written through `PUT`.
pub const MANUAL_EDIT: &str = "manual";

/// Items a user's recommendations are drawn from: a pool shared by every
/// user plus optional per-user additions.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CandidatePools {
    pub shared: Vec<String>,
    #[serde(default)]
    pub per_user: BTreeMap<String, Vec<String>>,
}

impl CandidatePools {
    /// Every test-split item plus `extra` further catalog items drawn with `seed`.
    pub fn from_test_split<'a>(
        test: &Dataset,
        catalog: impl IntoIterator<Item = &'a str>,
        extra: usize,
        seed: u64,
    ) -> Self {
        let mut shared: BTreeSet<String> = test.items().map(str::to_string).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rest: BTreeSet<&str> = catalog.into_iter().filter(|i| !shared.contains(*i)).collect();
        shared.extend(rest.into_iter().choose_multiple(&mut rng, extra).into_iter().map(str::to_string));
        Self {
            shared: shared.into_iter().collect(),
            per_user: BTreeMap::new(),
        }
    }

    /// Sorted, duplicate-free pool for `user`.
    pub fn pool_for(&self, user: &str) -> Vec<String> {
        let mut pool: BTreeSet<&String> = self.shared.iter().collect();
        if let Some(own) = self.per_user.get(user) {
            pool.extend(own);
        }
        pool.into_iter().cloned().collect()
    }
}

/// Everything a request handler needs. Built once, before serving.
pub struct SessionState {
    pub scorer: Arc<dyn TextScorer>,
    pub generator: Arc<dyn TextGenerator>,
    pub domain: Domain,
    pub store: ProfileStore,
    pub pools: CandidatePools,
    /// Item id → feature stem.
    pub item_features: BTreeMap<String, String>,
    /// Item id → title.
    pub titles: BTreeMap<String, String>,
}

type Shared = Arc<SessionState>;

/// A profile revision as returned to clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileView {
    pub user: String,
    pub revision: u32,
    pub parent: Option<u32>,
    pub text: String,
    pub features: Vec<String>,
    pub tokens: usize,
    pub generator: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edit: Option<EditInfo>,
}

impl From<&NlProfile> for ProfileView {
    fn from(p: &NlProfile) -> Self {
        Self {
            user: p.user_id.clone(),
            revision: p.revision,
            parent: p.parent,
            text: p.text.clone(),
            features: p.features_used.clone(),
            tokens: p.token_count,
            generator: p.generator_id.clone(),
            edit: p.edit.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileUpdate {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditRequest {
    pub feature: String,
    pub direction: String,
    /// Return the edited profile without storing it.
    #[serde(default)]
    pub preview: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub item: String,
    pub title: String,
    pub score: f64,
    pub feature: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendationList {
    pub user: String,
    pub revision: u32,
    pub k: usize,
    pub items: Vec<Recommendation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageResponse {
    pub user: String,
    pub revision: u32,
    pub feature: String,
    pub k: usize,
    pub coverage: f64,
    pub matched_items: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct KQuery {
    k: Option<usize>,
}

#[derive(Debug, Deserialize)]
struct CoverageQuery {
    feature: String,
    k: Option<usize>,
}

pub fn router(state: Shared, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/health", get(|| async { "ok" }))
        .route("/users", get(list_users))
        .route("/users/{id}/profile", get(get_profile).put(put_profile))
        .route("/users/{id}/profile/history", get(profile_history))
        .route("/users/{id}/profile/edit", post(edit))
        .route("/users/{id}/recommendations", get(recommendations))
        .route("/users/{id}/coverage", get(coverage))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api,
    }
}

/// Binds `addr` and serves until the process ends.
pub async fn serve(addr: SocketAddr, app: Router) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, app).await
}

fn current(state: &SessionState, user: &str) -> Result<NlProfile, ApiError> {
    state.store.latest(user).ok_or_else(|| ApiError::UnknownUser(user.to_string()))
}

async fn list_users(State(state): State<Shared>) -> Json<Vec<String>> {
    Json(state.store.users())
}

async fn get_profile(State(state): State<Shared>, Path(user): Path<String>) -> Result<Json<ProfileView>, ApiError> {
    Ok(Json((&current(&state, &user)?).into()))
}

async fn profile_history(
    State(state): State<Shared>,
    Path(user): Path<String>,
) -> Result<Json<Vec<ProfileView>>, ApiError> {
    let history = state.store.history(&user);
    if history.is_empty() {
        return Err(ApiError::UnknownUser(user));
    }
    Ok(Json(history.iter().map(ProfileView::from).collect()))
}

async fn put_profile(
    State(state): State<Shared>,
    Path(user): Path<String>,
    Json(update): Json<ProfileUpdate>,
) -> Result<Json<ProfileView>, ApiError> {
    if update.text.trim().is_empty() {
        return Err(ApiError::InvalidProfile("profile text is empty".into()));
    }
    let tokens = whitespace_len(&update.text);
    if tokens > MAX_PROFILE_TOKENS {
        return Err(ApiError::InvalidProfile(format!(
            "profile has {tokens} tokens, at most {MAX_PROFILE_TOKENS} allowed"
        )));
    }
    let _guard = state.store.lock_user(&user).await;
    let parent = current(&state, &user)?;
    if parent.text == update.text {
        return Ok(Json((&parent).into()));
    }
    let params = GenerationParams {
        max_tokens: MAX_PROFILE_TOKENS,
        ..parent.params
    };
    let child = parent.revise(&update.text, MANUAL_EDIT, params);
    state.store.commit(child.clone())?;
    Ok(Json((&child).into()))
}

async fn edit(
    State(state): State<Shared>,
    Path(user): Path<String>,
    Json(request): Json<EditRequest>,
) -> Result<Json<ProfileView>, ApiError> {
    let direction: EditDirection = request.direction.parse().map_err(ApiError::BadRequest)?;
    if stem_feature(&request.feature).is_empty() {
        return Err(ApiError::BadRequest("feature is empty".into()));
    }
    let _guard = state.store.lock_user(&user).await;
    let parent = current(&state, &user)?;
    let worker = state.clone();
    let feature = request.feature.clone();
    let child = tokio::task::spawn_blocking(move || {
        edit_profile(
            &parent,
            &feature,
            direction,
            worker.domain,
            worker.generator.as_ref(),
            GenerationParams::edit(),
        )
    })
    .await??;
    if !request.preview {
        state.store.commit(child.clone())?;
    }
    Ok(Json((&child).into()))
}

fn parse_k(k: Option<usize>) -> Result<usize, ApiError> {
    match k.unwrap_or(10) {
        0 => Err(ApiError::BadRequest("k must be positive".into())),
        k => Ok(k),
    }
}

/// Top-`k` of the user's pool under their current profile.
async fn ranked(state: &Shared, user: &str, k: usize) -> Result<(NlProfile, Vec<ScoredItem>), ApiError> {
    let profile = current(state, user)?;
    let pool = state.pools.pool_for(user);
    let worker = state.clone();
    let text = profile.text.clone();
    let top = tokio::task::spawn_blocking(move || {
        top_k_for_profile(worker.scorer.as_ref(), &text, &pool, &worker.titles, k)
    })
    .await??;
    Ok((profile, top))
}

async fn recommendations(
    State(state): State<Shared>,
    Path(user): Path<String>,
    Query(query): Query<KQuery>,
) -> Result<Json<RecommendationList>, ApiError> {
    let k = parse_k(query.k)?;
    let (profile, top) = ranked(&state, &user, k).await?;
    let items = top
        .into_iter()
        .map(|s| Recommendation {
            title: state.titles.get(&s.item).cloned().unwrap_or_default(),
            feature: state.item_features.get(&s.item).cloned(),
            item: s.item,
            score: s.score,
        })
        .collect();
    Ok(Json(RecommendationList {
        user,
        revision: profile.revision,
        k,
        items,
    }))
}

async fn coverage(
    State(state): State<Shared>,
    Path(user): Path<String>,
    Query(query): Query<CoverageQuery>,
) -> Result<Json<CoverageResponse>, ApiError> {
    let k = parse_k(query.k)?;
    let stem = stem_feature(&query.feature);
    if stem.is_empty() || !state.item_features.values().any(|f| *f == stem) {
        return Err(ApiError::UnknownFeature(query.feature));
    }
    let (profile, top) = ranked(&state, &user, k).await?;
    let items: Vec<String> = top.into_iter().map(|s| s.item).collect();
    let value = coverage_at_k(&items, &state.item_features, &stem, k)?;
    let matched_items = items
        .into_iter()
        .filter(|i| state.item_features.get(i) == Some(&stem))
        .collect();
    Ok(Json(CoverageResponse {
        user,
        revision: profile.revision,
        feature: stem,
        k,
        coverage: value,
        matched_items,
    }))
}
