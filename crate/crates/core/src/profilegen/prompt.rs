use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Domain, EditDirection, NlProfile, ProfileError};
use crate::preference::{stem_feature, FeatureRanking};
use crate::text::mentions;

/// Reviews per feature placed in a profile prompt.
pub const REVIEWS_PER_FEATURE: usize = 5;

/// A ranked feature as it appears in a profile prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureCue {
    pub stem: String,
    /// Word used when the feature is written out in text.
    pub surface: String,
    pub mean_rating: f64,
    pub reviews: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfilePrompt {
    pub instruction: String,
    pub review_lines: Vec<String>,
    pub domain: Domain,
    pub features: Vec<FeatureCue>,
}

impl ProfilePrompt {
    /// Instruction line, a `Reviews:` header, then one `- ` line per review.
    pub fn render(&self) -> String {
        let mut out = String::with_capacity(256);
        out.push_str(&self.instruction);
        out.push_str("\nReviews:");
        for line in &self.review_lines {
            out.push_str("\n- ");
            out.push_str(line);
        }
        out
    }

    /// Stems in rank order; these are the features a generated profile draws on.
    pub fn feature_stems(&self) -> Vec<String> {
        self.features.iter().map(|f| f.stem.clone()).collect()
    }
}

pub fn profile_instruction(domain: Domain) -> String {
    format!(
        "Summarize in a single paragraph using the first person my general {} based on my reviews. Do not mention the word reviews.",
        domain.preference_phrase()
    )
}

/// Builds the summarization prompt from a ranking and per-stem review samples.
pub fn build_profile_prompt(
    ranking: &FeatureRanking,
    reviews: &BTreeMap<String, Vec<String>>,
    domain: Domain,
) -> Result<ProfilePrompt, ProfileError> {
    if ranking.entries.is_empty() {
        return Err(ProfileError::EmptyRanking(ranking.user_id.clone()));
    }
    let mut features = Vec::with_capacity(ranking.entries.len());
    let mut review_lines = Vec::new();
    for entry in &ranking.entries {
        let sampled = reviews.get(&entry.stem).cloned().unwrap_or_default();
        if sampled.len() > REVIEWS_PER_FEATURE {
            return Err(ProfileError::TooManyReviews {
                stem: entry.stem.clone(),
                count: sampled.len(),
            });
        }
        review_lines.extend(sampled.iter().map(|r| r.trim().to_string()));
        features.push(FeatureCue {
            stem: entry.stem.clone(),
            surface: entry
                .surface_forms
                .iter()
                .next()
                .cloned()
                .unwrap_or_else(|| entry.stem.clone()),
            mean_rating: entry.mean_rating,
            reviews: sampled,
        });
    }
    Ok(ProfilePrompt {
        instruction: profile_instruction(domain),
        review_lines,
        domain,
        features,
    })
}

/// Checks that an edit makes sense for the profile text.
pub fn check_edit_precondition(
    text: &str,
    target: &str,
    direction: EditDirection,
) -> Result<(), ProfileError> {
    let stem = stem_feature(target);
    let m = mentions(text, &stem);
    match direction {
        EditDirection::AddLike if m.any() => Err(ProfileError::AlreadyMentioned(target.to_string())),
        EditDirection::RemoveLike if m.positive == 0 => {
            Err(ProfileError::NotLiked(target.to_string()))
        }
        _ => Ok(()),
    }
}

// Few-shot pairs for adding a preference. `{target}` is replaced by the
// domain phrase of the feature being added.
const MOVIE_EXEMPLARS: [(&str, &str); 3] = [
    (
        "I mostly watch crime dramas with tight plotting and believable detectives. Slow pacing bothers me, and I rarely finish a series that drags in the middle.",
        "I mostly watch crime dramas with tight plotting and believable detectives, and lately I have also come to love {target}. Slow pacing bothers me, and I rarely finish a series that drags in the middle.",
    ),
    (
        "I enjoy animated features and family films that have heart without being sugary. Strong voice acting and a memorable score matter a lot to me.",
        "I enjoy animated features, family films that have heart without being sugary, and {target} as well. Strong voice acting and a memorable score matter a lot to me.",
    ),
    (
        "Documentaries about history and science are my favorite. I value careful research and dislike narration that talks down to the audience.",
        "Documentaries about history and science are my favorite, and I also really like {target}. I value careful research and dislike narration that talks down to the audience.",
    ),
];

const HOTEL_EXEMPLARS: [(&str, &str); 3] = [
    (
        "I look for quiet rooms with comfortable beds and blackout curtains. Friendly front desk staff make a big difference to my stay.",
        "I look for quiet rooms with comfortable beds and blackout curtains, and I also really enjoy {target}. Friendly front desk staff make a big difference to my stay.",
    ),
    (
        "A central location close to public transport is my top priority. I am happy with a simple room as long as it is clean.",
        "A central location close to public transport is my top priority, and I have come to appreciate {target} too. I am happy with a simple room as long as it is clean.",
    ),
    (
        "I care most about a generous breakfast and a helpful concierge. Noisy corridors and thin walls ruin a trip for me.",
        "I care most about a generous breakfast, a helpful concierge and {target}. Noisy corridors and thin walls ruin a trip for me.",
    ),
];

/// Prompt asking a model to edit `profile` toward (or away from) `target`.
///
/// Adding a preference uses a few-shot prompt of three original/new profile
/// pairs followed by the user's profile; removing one uses a single rewrite
/// instruction.
pub fn build_edit_prompt(
    profile: &NlProfile,
    target: &str,
    direction: EditDirection,
    domain: Domain,
) -> Result<String, ProfileError> {
    check_edit_precondition(&profile.text, target, direction)?;
    let phrase = domain.target_phrase(target);
    Ok(match direction {
        EditDirection::AddLike => {
            let exemplars = match domain {
                Domain::MoviesTv => &MOVIE_EXEMPLARS,
                Domain::Hotels => &HOTEL_EXEMPLARS,
            };
            let mut out = format!(
                "Modify the user profile so that the user also likes {phrase}. Keep all the profile as similar as possible for all other preferences.\n"
            );
            for (original, edited) in exemplars {
                out.push_str(&format!(
                    "\nOriginal Profile: {original}\nNew Profile: {}\n",
                    edited.replace("{target}", &phrase)
                ));
            }
            out.push_str(&format!("\nOriginal Profile: {}\nNew Profile:", profile.text));
            out
        }
        EditDirection::RemoveLike => format!(
            "Rewrite the user profile so that the user does not like {phrase}. Keep the profile as similar as possible for all other preferences: {}.",
            profile.text
        ),
    })
}

/// Rating prompt: the profile followed by the question about one item.
pub fn recommendation_prompt(profile: &str, title: &str) -> String {
    format!(
        "{profile} Based on my user profile, from a scale of 1 to 5 (1 being the lowest and 5 being the highest), i would give {title} a rating of"
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preference::FeatureStats;
    use std::collections::BTreeSet;

    fn stats(stem: &str, mean: f64) -> FeatureStats {
        FeatureStats {
            stem: stem.into(),
            surface_forms: BTreeSet::from([stem.to_string()]),
            item_count: 2,
            mean_rating: mean,
            rating_std: 0.0,
            coverage: 0.5,
            significance: 2.0,
            utility: mean.abs(),
        }
    }

    fn ranking(entries: Vec<FeatureStats>) -> FeatureRanking {
        FeatureRanking { user_id: "u".into(), k: entries.len(), entries }
    }

    #[test]
    fn one_feature_two_reviews() {
        let reviews = BTreeMap::from([(
            "pool".to_string(),
            vec!["the pool is fantastic".to_string(), "great pool".to_string()],
        )]);
        let prompt = build_profile_prompt(&ranking(vec![stats("pool", 1.0)]), &reviews, Domain::Hotels).unwrap();
        let text = prompt.render();
        assert_eq!(text.lines().filter(|l| l.starts_with("- ")).count(), 2);
        assert!(text.contains("\nReviews:\n- the pool is fantastic\n- great pool"));
        assert!(prompt.instruction.contains("hotel preferences"));
        assert_eq!(prompt.feature_stems(), vec!["pool"]);
    }

    #[test]
    fn movie_instruction() {
        let p = profile_instruction(Domain::MoviesTv);
        assert!(p.contains("movie and tv preferences"));
        assert!(p.starts_with("Summarize in a single paragraph using the first person"));
        assert!(p.ends_with("Do not mention the word reviews."));
    }

    #[test]
    fn review_lines_follow_rank_order() {
        let reviews = BTreeMap::from([
            ("bed".to_string(), vec!["b1".to_string()]),
            ("view".to_string(), vec!["v1".to_string(), "v2".to_string()]),
        ]);
        let r = ranking(vec![stats("view", 1.0), stats("bed", 0.5)]);
        let prompt = build_profile_prompt(&r, &reviews, Domain::Hotels).unwrap();
        assert_eq!(prompt.review_lines, vec!["v1", "v2", "b1"]);
    }

    #[test]
    fn empty_ranking_and_oversized_review_lists() {
        assert!(matches!(
            build_profile_prompt(&ranking(vec![]), &BTreeMap::new(), Domain::Hotels),
            Err(ProfileError::EmptyRanking(_))
        ));
        let reviews = BTreeMap::from([("pool".to_string(), vec!["x".to_string(); 6])]);
        assert!(matches!(
            build_profile_prompt(&ranking(vec![stats("pool", 1.0)]), &reviews, Domain::Hotels),
            Err(ProfileError::TooManyReviews { .. })
        ));
    }

    fn profile(text: &str) -> NlProfile {
        NlProfile::new("u", text, vec![], "test", super::super::GenerationParams::profile())
    }

    #[test]
    fn add_like_prompt() {
        let p = build_edit_prompt(&profile("I enjoy dramas."), "comedy", EditDirection::AddLike, Domain::MoviesTv).unwrap();
        assert!(p.contains("also likes comedy movies"));
        assert_eq!(p.matches("Original Profile:").count(), 4);
        assert_eq!(p.matches("New Profile:").count(), 4);
        assert!(p.ends_with("Original Profile: I enjoy dramas.\nNew Profile:"));
        assert!(!p.contains("{target}"));
    }

    #[test]
    fn remove_like_prompt() {
        let p = build_edit_prompt(&profile("I love beach films."), "beach", EditDirection::RemoveLike, Domain::MoviesTv).unwrap();
        assert!(p.contains("does not like beach movies"));
        assert!(p.contains(": I love beach films.."));
    }

    #[test]
    fn edit_preconditions() {
        let liked = profile("I generally enjoy comedy.");
        assert!(matches!(
            build_edit_prompt(&liked, "comedy", EditDirection::AddLike, Domain::MoviesTv),
            Err(ProfileError::AlreadyMentioned(_))
        ));
        let disliked = profile("I tend to dislike comedy.");
        assert!(matches!(
            build_edit_prompt(&disliked, "comedy", EditDirection::RemoveLike, Domain::MoviesTv),
            Err(ProfileError::NotLiked(_))
        ));
    }

    #[test]
    fn rating_prompt() {
        assert_eq!(
            recommendation_prompt("I like pools.", "Azure Inn"),
            "I like pools. Based on my user profile, from a scale of 1 to 5 (1 being the lowest and 5 being the highest), i would give Azure Inn a rating of"
        );
    }
}
