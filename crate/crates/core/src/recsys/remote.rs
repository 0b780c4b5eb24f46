use std::sync::{Arc, LazyLock};

use regex::Regex;

use super::{clamp_rating, RecsysError, TextScorer};
use crate::profilegen::{recommendation_prompt, GenerationParams, GenerationRequest, Task, TextGenerator};

static NUMBER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"-?\d+(?:\.\d+)?").expect("valid regex"));

/// First decimal number in a completion, clamped to [1, 5].
pub fn parse_rating(completion: &str) -> Result<f64, RecsysError> {
    NUMBER
        .find(completion)
        .and_then(|m| m.as_str().parse::<f64>().ok())
        .map(clamp_rating)
        .ok_or_else(|| RecsysError::UnparsableRating(completion.chars().take(80).collect()))
}

/// Asks a text generator to complete the rating prompt.
#[derive(Clone)]
pub struct RemoteScorer {
    generator: Arc<dyn TextGenerator>,
    params: GenerationParams,
}

impl RemoteScorer {
    pub fn new(generator: Arc<dyn TextGenerator>) -> Self {
        Self {
            generator,
            params: GenerationParams {
                max_tokens: 8,
                temperature: 0.0,
                seed: 0,
            },
        }
    }
}

impl TextScorer for RemoteScorer {
    fn id(&self) -> String {
        format!("upr-{}", self.generator.id())
    }

    /// An unparsable completion is requested once more before failing.
    fn predict_text(&self, profile: &str, title: &str) -> Result<f64, RecsysError> {
        let prompt = recommendation_prompt(profile, title);
        let request = GenerationRequest {
            prompt: &prompt,
            task: Task::Rating,
            params: &self.params,
        };
        match parse_rating(&self.generator.generate(&request)?) {
            Ok(r) => Ok(r),
            Err(_) => parse_rating(&self.generator.generate(&request)?),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profilegen::GeneratorError;
    use std::sync::atomic::{AtomicUsize, Ordering};

    #[test]
    fn parse_contract() {
        assert_eq!(parse_rating("4.5 because the pool").unwrap(), 4.5);
        assert!(parse_rating("five").is_err());
        assert_eq!(parse_rating("0").unwrap(), 1.0);
        assert_eq!(parse_rating(" I'd say 3").unwrap(), 3.0);
        assert_eq!(parse_rating("7.2").unwrap(), 5.0);
    }

    struct Replies(Vec<&'static str>, AtomicUsize);

    impl TextGenerator for Replies {
        fn id(&self) -> String {
            "replies".into()
        }
        fn generate(&self, req: &GenerationRequest<'_>) -> Result<String, GeneratorError> {
            assert!(req.prompt.ends_with("i would give Old Mill a rating of"));
            let n = self.1.fetch_add(1, Ordering::SeqCst);
            Ok(self.0[n.min(self.0.len() - 1)].to_string())
        }
    }

    #[test]
    fn retries_an_unparsable_reply_once() {
        let gen = Arc::new(Replies(vec!["hmm", "4"], AtomicUsize::new(0)));
        let scorer = RemoteScorer::new(gen.clone());
        assert_eq!(scorer.predict_text("I like mills.", "Old Mill").unwrap(), 4.0);
        let gen = Arc::new(Replies(vec!["hmm", "no idea", "5"], AtomicUsize::new(0)));
        let scorer = RemoteScorer::new(gen.clone());
        assert!(matches!(scorer.predict_text("x", "Old Mill"), Err(RecsysError::UnparsableRating(_))));
        assert_eq!(gen.1.load(Ordering::SeqCst), 2);
    }
}
