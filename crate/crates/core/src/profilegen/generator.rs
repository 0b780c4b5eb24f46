//! Text generation backends.
//!
//! [`RemoteGenerator`] talks to a chat-completion HTTP endpoint.
//! [`OfflineGenerator`] is a deterministic template engine that needs no
//! network; it reads the structured task attached to each request instead of
//! the prompt text.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::prompt::ProfilePrompt;
use super::{Domain, EditDirection, GenerationParams};
use crate::preference::stem_feature;
use crate::text::{sentences, tokenize};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeneratorError {
    /// Timeouts, connection failures, 5xx and 429 responses.
    #[error("transient backend failure: {0}")]
    Transient(String),
    #[error("backend failure: {0}")]
    Fatal(String),
    #[error("{0} cannot serve this request")]
    Unsupported(String),
}

impl GeneratorError {
    pub fn is_transient(&self) -> bool {
        matches!(self, Self::Transient(_))
    }
}

/// What the prompt asks for, in structured form.
#[derive(Debug, Clone, Copy)]
pub enum Task<'a> {
    Profile(&'a ProfilePrompt),
    Edit {
        profile: &'a str,
        target: &'a str,
        direction: EditDirection,
        domain: Domain,
    },
    Rating,
}

#[derive(Debug, Clone, Copy)]
pub struct GenerationRequest<'a> {
    pub prompt: &'a str,
    pub task: Task<'a>,
    pub params: &'a GenerationParams,
}

pub trait TextGenerator: Send + Sync {
    /// Identifier recorded in profile provenance.
    fn id(&self) -> String;

    fn generate(&self, request: &GenerationRequest<'_>) -> Result<String, GeneratorError>;
}

/// Runs `attempt`, retrying once if it fails with a transient error.
pub fn retry_once<T>(
    mut attempt: impl FnMut() -> Result<T, GeneratorError>,
) -> Result<T, GeneratorError> {
    match attempt() {
        Err(e) if e.is_transient() => {
            tracing::warn!("retrying after {e}");
            attempt()
        }
        other => other,
    }
}

/// Deterministic template generator.
#[derive(Debug, Clone, Copy, Default)]
pub struct OfflineGenerator;

const LIKE_OPENER: &str = "I generally enjoy ";
const DISLIKE_OPENER: &str = "I tend to dislike ";
const MIXED_OPENER: &str = "I have mixed feelings about ";

fn join_list(words: &[&str]) -> String {
    match words {
        [] => String::new(),
        [one] => one.to_string(),
        [init @ .., last] => format!("{} and {last}", init.join(", ")),
    }
}

fn split_list(list: &str) -> Vec<String> {
    let (head, last) = match list.rsplit_once(" and ") {
        Some((head, last)) => (head, Some(last)),
        None => (list, None),
    };
    head.split(", ")
        .chain(last)
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

impl OfflineGenerator {
    /// One sentence per sentiment: liked, disliked, mixed. Features keep their rank order.
    pub fn profile_text(prompt: &ProfilePrompt) -> String {
        let pick = |keep: fn(f64) -> bool| -> Vec<&str> {
            prompt
                .features
                .iter()
                .filter(|f| keep(f.mean_rating))
                .map(|f| f.surface.as_str())
                .collect()
        };
        let mut parts = Vec::new();
        for (opener, words) in [
            (LIKE_OPENER, pick(|m| m > 0.0)),
            (DISLIKE_OPENER, pick(|m| m < 0.0)),
            (MIXED_OPENER, pick(|m| m == 0.0)),
        ] {
            if !words.is_empty() {
                parts.push(format!("{opener}{}.", join_list(&words)));
            }
        }
        parts.join(" ")
    }

    pub fn add_like(profile: &str, target: &str, domain: Domain) -> String {
        let sentence = format!("I also really enjoy {}.", domain.target_phrase(target));
        if profile.trim().is_empty() {
            sentence
        } else {
            format!("{} {sentence}", profile.trim_end())
        }
    }

    /// Drops every positive mention of `target`: list sentences lose the
    /// matching entries, other sentences that mention it are removed.
    pub fn remove_like(profile: &str, target: &str) -> String {
        let stem = stem_feature(target);
        let positive = |s: &str| {
            tokenize(s)
                .iter()
                .any(|t| !t.negated && stem_feature(&t.word) == stem)
        };
        let mut kept = Vec::new();
        for sentence in sentences(profile) {
            if !positive(sentence) {
                kept.push(sentence.to_string());
                continue;
            }
            let list_opener = [LIKE_OPENER, MIXED_OPENER]
                .into_iter()
                .find(|o| sentence.starts_with(o) && sentence.ends_with('.'));
            if let Some(opener) = list_opener {
                let body = &sentence[opener.len()..sentence.len() - 1];
                let items = split_list(body);
                let remaining: Vec<&str> = items
                    .iter()
                    .filter(|item| !positive(item))
                    .map(String::as_str)
                    .collect();
                if !remaining.is_empty() && remaining.len() < items.len() {
                    kept.push(format!("{opener}{}.", join_list(&remaining)));
                }
            }
        }
        kept.join(" ")
    }
}

impl TextGenerator for OfflineGenerator {
    fn id(&self) -> String {
        "offline-template".into()
    }

    fn generate(&self, request: &GenerationRequest<'_>) -> Result<String, GeneratorError> {
        match request.task {
            Task::Profile(prompt) => Ok(Self::profile_text(prompt)),
            Task::Edit {
                profile,
                target,
                direction: EditDirection::AddLike,
                domain,
            } => Ok(Self::add_like(profile, target, domain)),
            Task::Edit {
                profile,
                target,
                direction: EditDirection::RemoveLike,
                ..
            } => Ok(Self::remove_like(profile, target)),
            Task::Rating => Err(GeneratorError::Unsupported(self.id())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    pub url: String,
    pub model: String,
    pub api_key: Option<String>,
    /// Header carrying the key; its value is `Bearer <key>`.
    pub auth_header: String,
    pub timeout_secs: u64,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            url: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model: "mistral-7b-instruct".into(),
            api_key: None,
            auth_header: "Authorization".into(),
            timeout_secs: 60,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub max_tokens: usize,
    pub temperature: f64,
    pub seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ChatChoice {
    pub message: ChatMessage,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ChatResponse {
    pub choices: Vec<ChatChoice>,
}

/// Chat-completion client: POSTs `{model, messages, max_tokens, temperature, seed}`
/// and reads `choices[0].message.content`. Transient failures are retried once.
pub struct RemoteGenerator {
    config: RemoteConfig,
    agent: ureq::Agent,
}

impl RemoteGenerator {
    pub fn new(config: RemoteConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        Self { config, agent }
    }

    fn call(&self, request: &ChatRequest) -> Result<String, GeneratorError> {
        let mut call = self.agent.post(&self.config.url);
        if let Some(key) = &self.config.api_key {
            call = call.header(self.config.auth_header.as_str(), &format!("Bearer {key}"));
        }
        let mut response = call
            .send_json(request)
            .map_err(|e| GeneratorError::Transient(e.to_string()))?;
        let status = response.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(GeneratorError::Transient(format!("HTTP {status}")));
        }
        if status >= 400 {
            return Err(GeneratorError::Fatal(format!("HTTP {status}")));
        }
        let body: ChatResponse = response
            .body_mut()
            .read_json()
            .map_err(|e| GeneratorError::Fatal(format!("bad response body: {e}")))?;
        body.choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| GeneratorError::Fatal("response has no choices".into()))
    }
}

impl TextGenerator for RemoteGenerator {
    fn id(&self) -> String {
        format!("remote:{}", self.config.model)
    }

    fn generate(&self, request: &GenerationRequest<'_>) -> Result<String, GeneratorError> {
        let body = ChatRequest {
            model: self.config.model.clone(),
            messages: vec![ChatMessage {
                role: "user".into(),
                content: request.prompt.to_string(),
            }],
            max_tokens: request.params.max_tokens,
            temperature: request.params.temperature,
            seed: request.params.seed,
        };
        retry_once(|| self.call(&body))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profilegen::prompt::FeatureCue;
    use crate::text::mentions;

    fn prompt(features: &[(&str, f64)]) -> ProfilePrompt {
        ProfilePrompt {
            instruction: "x".into(),
            review_lines: vec![],
            domain: Domain::Hotels,
            features: features
                .iter()
                .map(|(s, m)| FeatureCue {
                    stem: stem_feature(s),
                    surface: s.to_string(),
                    mean_rating: *m,
                    reviews: vec![],
                })
                .collect(),
        }
    }

    #[test]
    fn liked_features_sentence() {
        let text = OfflineGenerator::profile_text(&prompt(&[("pool", 0.8), ("breakfast", 0.5)]));
        assert_eq!(text, "I generally enjoy pool and breakfast.");
    }

    #[test]
    fn mixed_sentiments() {
        let text = OfflineGenerator::profile_text(&prompt(&[
            ("pool", 0.8),
            ("noise", -1.0),
            ("view", 0.5),
            ("bed", 0.5),
            ("staff", 0.0),
        ]));
        assert_eq!(
            text,
            "I generally enjoy pool, view and bed. I tend to dislike noise. I have mixed feelings about staff."
        );
        assert_eq!(mentions(&text, &stem_feature("noise")).negative, 1);
        assert_eq!(mentions(&text, "pool").positive, 1);
    }

    #[test]
    fn add_then_remove_round_trip() {
        let original = "I generally enjoy view and bed. I tend to dislike noise.";
        let added = OfflineGenerator::add_like(original, "pool", Domain::Hotels);
        assert_eq!(added, format!("{original} I also really enjoy hotels with a great pool."));
        let removed = OfflineGenerator::remove_like(&added, "pool");
        assert_eq!(removed, original);
        assert!(!mentions(&removed, "pool").any());
    }

    #[test]
    fn remove_from_list_keeps_other_entries() {
        let text = "I generally enjoy pool, view and bed. I love a pool at night.";
        assert_eq!(OfflineGenerator::remove_like(text, "pools"), "I generally enjoy view and bed.");
    }

    #[test]
    fn remove_keeps_negative_mentions() {
        let text = "I generally enjoy view. I tend to dislike pool.";
        assert_eq!(OfflineGenerator::remove_like(text, "pool"), text);
    }

    #[test]
    fn offline_refuses_rating_requests() {
        let params = GenerationParams::profile();
        let req = GenerationRequest { prompt: "x", task: Task::Rating, params: &params };
        assert!(matches!(OfflineGenerator.generate(&req), Err(GeneratorError::Unsupported(_))));
    }

    #[test]
    fn retry_once_semantics() {
        let mut calls = 0;
        let out: Result<(), _> = retry_once(|| {
            calls += 1;
            Err(GeneratorError::Transient("down".into()))
        });
        assert!(out.is_err());
        assert_eq!(calls, 2);
        let mut calls = 0;
        let out: Result<(), _> = retry_once(|| {
            calls += 1;
            Err(GeneratorError::Fatal("bad".into()))
        });
        assert!(out.is_err());
        assert_eq!(calls, 1);
    }
}
