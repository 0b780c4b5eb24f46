use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, OnceLock};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use scrutable_core::corpus::{split_warm_start, Dataset, SplitRatios};
use scrutable_core::eval::coverage_at_10;
use scrutable_core::preference::{item_feature_map, stem_feature};
use scrutable_core::profilegen::{
    generate_profiles, Domain, NlProfile, OfflineGenerator, ProfileJob, ProfileSet, RemoteConfig, RemoteGenerator,
    TextGenerator,
};
use scrutable_core::recsys::{ProfileRegressor, RecsysError, RegressorParams, TextScorer};
use scrutable_core::synth::{self, SynthConfig};
use scrutable_core::text::mentions;
use scrutable_service::{router, CandidatePools, ProfileStore, SessionState};

struct Fixture {
    scorer: Arc<ProfileRegressor>,
    profiles: Vec<NlProfile>,
    pools: CandidatePools,
    item_features: BTreeMap<String, String>,
    titles: BTreeMap<String, String>,
}

fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let data = Dataset::new(synth::generate(&SynthConfig { n_users: 150, n_items: 300, seed: 5, ..SynthConfig::default() }));
        let (split, _) = split_warm_start(&data, SplitRatios::default(), 0).unwrap();
        let outcome = generate_profiles(&split.train, &ProfileJob::default(), &OfflineGenerator);
        assert!(outcome.failures.is_empty());
        let texts: BTreeMap<String, String> =
            outcome.profiles.iter().map(|p| (p.user_id.clone(), p.text.clone())).collect();
        let model =
            ProfileRegressor::fit_from_profiles(&texts, &split.train, Some(&split.validation), RegressorParams::default())
                .unwrap();
        let catalog: Vec<String> = data.items().map(str::to_string).collect();
        Fixture {
            scorer: Arc::new(model),
            profiles: outcome.profiles,
            pools: CandidatePools::from_test_split(&split.test, catalog.iter().map(String::as_str), 50, 0),
            item_features: item_feature_map(&data),
            titles: data.item_titles(),
        }
    })
}

fn app_with(generator: Arc<dyn TextGenerator>, store: ProfileStore) -> Router {
    let f = fixture();
    let state = SessionState {
        scorer: f.scorer.clone(),
        generator,
        domain: Domain::Hotels,
        store,
        pools: f.pools.clone(),
        item_features: f.item_features.clone(),
        titles: f.titles.clone(),
    };
    router(Arc::new(state), None)
}

fn app() -> Router {
    let set: ProfileSet = fixture().profiles.iter().cloned().collect();
    app_with(Arc::new(OfflineGenerator), ProfileStore::in_memory(set))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let builder = Request::builder().method(method).uri(uri);
    let request = match body {
        Some(b) => builder
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => builder.body(Body::empty()).unwrap(),
    };
    let response = app.clone().oneshot(request).await.unwrap();
    let status = response.status();
    let bytes = response.into_body().collect().await.unwrap().to_bytes();
    let value = serde_json::from_slice(&bytes).unwrap_or(Value::String(String::from_utf8_lossy(&bytes).into()));
    (status, value)
}

fn first_user() -> String {
    fixture().profiles[0].user_id.clone()
}

/// A user whose profile says nothing about `stem`, with the feature still
/// unliked, and a feature that exists in the catalog.
fn eligible_user(stem: &str) -> Option<&'static NlProfile> {
    fixture()
        .profiles
        .iter()
        .find(|p| !p.features_used.iter().any(|f| f == stem) && !mentions(&p.text, stem).any())
}

#[tokio::test]
async fn reads_profiles_and_reports_unknown_users() {
    let app = app();
    let user = first_user();
    let (status, body) = call(&app, "GET", &format!("/users/{user}/profile"), None).await;
    assert_eq!(status, StatusCode::OK);
    let stored = &fixture().profiles[0];
    assert_eq!(body["text"], stored.text.as_str());
    assert_eq!(body["tokens"], stored.token_count);
    assert_eq!(body["features"], json!(stored.features_used));
    assert_eq!(body["parent"], Value::Null);

    let (status, body) = call(&app, "GET", "/users/nobody/profile", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["code"], "unknown_user");
    assert!(body["message"].as_str().unwrap().contains("nobody"));
}

#[tokio::test]
async fn put_is_read_back_and_extends_the_chain() {
    let app = app();
    let user = first_user();
    let text = "I generally enjoy a quiet room and a great view.";
    let (status, body) = call(&app, "PUT", &format!("/users/{user}/profile"), Some(json!({ "text": text }))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["revision"], 1);
    assert_eq!(body["parent"], 0);
    let (_, body) = call(&app, "GET", &format!("/users/{user}/profile"), None).await;
    assert_eq!(body["text"], text);
    assert_eq!(body["generator"], "manual");
    let (_, history) = call(&app, "GET", &format!("/users/{user}/profile/history"), None).await;
    assert_eq!(history.as_array().unwrap().len(), 2);

    // saving the same text again is not a new revision
    let (status, body) = call(&app, "PUT", &format!("/users/{user}/profile"), Some(json!({ "text": text }))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["revision"], 1);
}

#[tokio::test]
async fn put_rejects_empty_and_oversized_text() {
    let app = app();
    let user = first_user();
    let uri = format!("/users/{user}/profile");
    let at_cap = vec!["word"; 300].join(" ");
    let over = vec!["word"; 301].join(" ");
    let (status, body) = call(&app, "PUT", &uri, Some(json!({ "text": over }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["code"], "invalid_profile");
    let (status, _) = call(&app, "PUT", &uri, Some(json!({ "text": "   " }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, body) = call(&app, "PUT", &uri, Some(json!({ "text": at_cap }))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["tokens"], 300);
    let (status, _) = call(&app, "PUT", "/users/nobody/profile", Some(json!({ "text": "hello" }))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_puts_are_serialized() {
    let app = app();
    let user = first_user();
    let texts: Vec<String> = (0..8).map(|n| format!("I generally enjoy variant {n}.")).collect();
    let handles: Vec<_> = texts
        .iter()
        .map(|t| {
            let (app, uri, body) = (app.clone(), format!("/users/{user}/profile"), json!({ "text": t }));
            tokio::spawn(async move { call(&app, "PUT", &uri, Some(body)).await })
        })
        .collect();
    for h in handles {
        assert_eq!(h.await.unwrap().0, StatusCode::OK);
    }
    let (_, history) = call(&app, "GET", &format!("/users/{user}/profile/history"), None).await;
    let history = history.as_array().unwrap();
    assert_eq!(history.len(), 9);
    for (n, entry) in history.iter().enumerate().skip(1) {
        assert_eq!(entry["revision"], n);
        assert_eq!(entry["parent"], n - 1);
        assert!(texts.iter().any(|t| entry["text"] == t.as_str()));
    }
    let (_, latest) = call(&app, "GET", &format!("/users/{user}/profile"), None).await;
    assert_eq!(latest["text"], history[8]["text"]);
}

#[tokio::test]
async fn guided_edits_with_the_offline_backend() {
    let app = app();
    let profile = eligible_user("pool").expect("some profile ignores pools");
    let uri = format!("/users/{}/profile/edit", profile.user_id);

    let (status, body) = call(&app, "POST", &uri, Some(json!({ "feature": "pool", "direction": "add_like", "preview": true }))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let (_, stored) = call(&app, "GET", &format!("/users/{}/profile", profile.user_id), None).await;
    assert_eq!(stored["revision"], 0, "preview must not store");

    let (status, body) = call(&app, "POST", &uri, Some(json!({ "feature": "pool", "direction": "add_like" }))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let text = body["text"].as_str().unwrap();
    assert_eq!(text, format!("{} I also really enjoy hotels with a great pool.", profile.text));
    assert_eq!(body["revision"], 1);
    assert_eq!(body["edit"]["target"], "pool");

    let (status, body) = call(&app, "POST", &uri, Some(json!({ "feature": "pool", "direction": "add_like" }))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["code"], "precondition_failed");

    let (status, body) = call(&app, "POST", &uri, Some(json!({ "feature": "pool", "direction": "sideways" }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["code"], "bad_request");

    let (status, body) = call(&app, "POST", &uri, Some(json!({ "feature": "pool", "direction": "remove_like" }))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert!(!mentions(body["text"].as_str().unwrap(), "pool").any());
    assert_eq!(body["parent"], 1);
}

/// Chat-completion stand-in answering every call with `reply`.
async fn mock_chat(reply: (StatusCode, Value)) -> (String, Arc<AtomicUsize>) {
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    let app = Router::new().route(
        "/v1/chat/completions",
        axum::routing::post(move || {
            let reply = reply.clone();
            counter.fetch_add(1, Ordering::SeqCst);
            async move { (reply.0, axum::Json(reply.1)) }
        }),
    );
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    (format!("http://{addr}/v1/chat/completions"), hits)
}

fn remote(url: String) -> Arc<dyn TextGenerator> {
    Arc::new(RemoteGenerator::new(RemoteConfig { url, timeout_secs: 5, ..RemoteConfig::default() }))
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn backend_outage_is_a_bad_gateway_after_one_retry() {
    let (url, hits) = mock_chat((StatusCode::SERVICE_UNAVAILABLE, json!({ "error": "down" }))).await;
    let set: ProfileSet = fixture().profiles.iter().cloned().collect();
    let app = app_with(remote(url), ProfileStore::in_memory(set));
    let profile = eligible_user("pool").unwrap();
    let uri = format!("/users/{}/profile/edit", profile.user_id);
    let (status, body) = call(&app, "POST", &uri, Some(json!({ "feature": "pool", "direction": "add_like" }))).await;
    assert_eq!(status, StatusCode::BAD_GATEWAY, "{body}");
    assert_eq!(body["code"], "backend_failure");
    assert_eq!(hits.load(Ordering::SeqCst), 2);
    let (_, stored) = call(&app, "GET", &format!("/users/{}/profile", profile.user_id), None).await;
    assert_eq!(stored["revision"], 0);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn remote_edits_are_stored() {
    let reply = json!({ "choices": [{ "message": { "role": "assistant", "content": "I love a big pool and quiet rooms." } }] });
    let (url, hits) = mock_chat((StatusCode::OK, reply)).await;
    let set: ProfileSet = fixture().profiles.iter().cloned().collect();
    let app = app_with(remote(url), ProfileStore::in_memory(set));
    let profile = eligible_user("pool").unwrap();
    let uri = format!("/users/{}/profile/edit", profile.user_id);
    let (status, body) = call(&app, "POST", &uri, Some(json!({ "feature": "pools", "direction": "add" }))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["text"], "I love a big pool and quiet rooms.");
    assert!(body["generator"].as_str().unwrap().starts_with("remote:"));
    assert_eq!(hits.load(Ordering::SeqCst), 1);
}

#[tokio::test]
async fn recommendations_are_deterministic_and_carry_features() {
    let app = app();
    let user = first_user();
    let uri = format!("/users/{user}/recommendations?k=10");
    let (status, first) = call(&app, "GET", &uri, None).await;
    assert_eq!(status, StatusCode::OK);
    let items = first["items"].as_array().unwrap();
    assert_eq!(items.len(), 10);
    for pair in items.windows(2) {
        assert!(pair[0]["score"].as_f64() >= pair[1]["score"].as_f64());
    }
    for item in items {
        let id = item["item"].as_str().unwrap();
        assert_eq!(item["feature"], fixture().item_features[id].as_str());
        assert_eq!(item["title"], fixture().titles[id].as_str());
    }
    let (_, second) = call(&app, "GET", &uri, None).await;
    assert_eq!(first, second);

    let (status, _) = call(&app, "GET", "/users/nobody/recommendations", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, "GET", &format!("/users/{user}/recommendations?k=0"), None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn coverage_matches_the_metric_on_the_served_list() {
    let app = app();
    let user = first_user();
    let (_, recs) = call(&app, "GET", &format!("/users/{user}/recommendations?k=10"), None).await;
    let ids: Vec<String> = recs["items"].as_array().unwrap().iter().map(|i| i["item"].as_str().unwrap().to_string()).collect();
    for feature in ["pool", "breakfast", "views"] {
        let (status, body) = call(&app, "GET", &format!("/users/{user}/coverage?feature={feature}&k=10"), None).await;
        assert_eq!(status, StatusCode::OK, "{body}");
        let stem = stem_feature(feature);
        assert_eq!(body["feature"], stem.as_str());
        let expected = coverage_at_10(&ids, &fixture().item_features, &stem).unwrap();
        assert_eq!(body["coverage"].as_f64().unwrap(), expected);
        assert_eq!(body["matched_items"].as_array().unwrap().len() as f64, expected * 10.0);
    }
    let (status, body) = call(&app, "GET", &format!("/users/{user}/coverage?feature=spaceship"), None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["code"], "unknown_feature");
}

#[tokio::test]
async fn adding_a_liked_feature_raises_its_coverage() {
    let app = app();
    let profile = eligible_user("pool").unwrap();
    let user = &profile.user_id;
    let coverage_uri = format!("/users/{user}/coverage?feature=pool&k=10");
    let (_, before) = call(&app, "GET", &coverage_uri, None).await;
    let (status, _) = call(&app, "POST", &format!("/users/{user}/profile/edit"), Some(json!({ "feature": "pool", "direction": "add_like" }))).await;
    assert_eq!(status, StatusCode::OK);
    let (_, after) = call(&app, "GET", &coverage_uri, None).await;
    assert!(
        after["coverage"].as_f64().unwrap() > before["coverage"].as_f64().unwrap(),
        "{before} -> {after}"
    );
    assert_eq!(after["revision"], 1);
}

#[tokio::test]
async fn profiles_persist_to_the_jsonl_store() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("profiles.jsonl");
    scrutable_core::profilegen::save_profiles(&path, fixture().profiles.iter()).unwrap();
    let user = first_user();
    {
        let (store, report) = ProfileStore::open(&path).unwrap();
        assert_eq!(report.loaded, fixture().profiles.len());
        let app = app_with(Arc::new(OfflineGenerator), store);
        let (status, _) = call(&app, "PUT", &format!("/users/{user}/profile"), Some(json!({ "text": "I like pools." }))).await;
        assert_eq!(status, StatusCode::OK);
    }
    let (store, _) = ProfileStore::open(&path).unwrap();
    let latest = store.latest(&user).unwrap();
    assert_eq!(latest.text, "I like pools.");
    assert_eq!((latest.revision, latest.parent), (1, Some(0)));
}

/// Scores by whether the title contains "Pool".
struct PoolLover;

impl TextScorer for PoolLover {
    fn id(&self) -> String {
        "pool-lover".into()
    }

    fn predict_text(&self, _profile: &str, title: &str) -> Result<f64, RecsysError> {
        Ok(if title.contains("Pool") { 5.0 } else { 1.0 })
    }
}

#[tokio::test]
async fn coverage_extremes() {
    let mut titles = BTreeMap::new();
    let mut features = BTreeMap::new();
    for n in 0..30 {
        let (title, feature) = if n < 12 { (format!("Pool {n}"), "pool") } else { (format!("Gym {n}"), "gym") };
        titles.insert(format!("i{n:02}"), title);
        features.insert(format!("i{n:02}"), feature.to_string());
    }
    features.insert("unused".into(), "sauna".into());
    let profile = NlProfile::new("u", "anything", vec![], "test", Default::default());
    let state = SessionState {
        scorer: Arc::new(PoolLover),
        generator: Arc::new(OfflineGenerator),
        domain: Domain::Hotels,
        store: ProfileStore::in_memory([profile].into_iter().collect()),
        pools: CandidatePools { shared: titles.keys().cloned().collect(), per_user: BTreeMap::new() },
        item_features: features,
        titles,
    };
    let app = router(Arc::new(state), None);
    let (_, body) = call(&app, "GET", "/users/u/coverage?feature=pool", None).await;
    assert_eq!(body["coverage"], 1.0);
    let (_, body) = call(&app, "GET", "/users/u/coverage?feature=gym", None).await;
    assert_eq!(body["coverage"], 0.0);
    let (_, body) = call(&app, "GET", "/users/u/coverage?feature=sauna", None).await;
    assert_eq!(body["coverage"], 0.0);
    let (status, body) = call(&app, "GET", "/users/u/coverage?feature=pool&k=40", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");
}

#[tokio::test]
async fn serves_static_files_next_to_the_api() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<h1>workbench</h1>").unwrap();
    let set: ProfileSet = fixture().profiles.iter().cloned().collect();
    let f = fixture();
    let state = SessionState {
        scorer: f.scorer.clone(),
        generator: Arc::new(OfflineGenerator),
        domain: Domain::Hotels,
        store: ProfileStore::in_memory(set),
        pools: f.pools.clone(),
        item_features: f.item_features.clone(),
        titles: f.titles.clone(),
    };
    let app = router(Arc::new(state), Some(dir.path().to_path_buf()));
    let (status, body) = call(&app, "GET", "/index.html", None).await;
    assert_eq!(status, StatusCode::OK);
    assert!(body.as_str().unwrap().contains("workbench"));
    let (status, users) = call(&app, "GET", "/users", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(users.as_array().unwrap().len(), f.profiles.len());
}
