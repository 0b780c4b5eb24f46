//! Word tokenization with sentence-scoped negation marking.
//!
//! Words that follow a negation cue ("not", "dislike", "don't", ...) up to the
//! end of the sentence or a contrastive "but" are flagged as negated. Profile
//! featurization and mention checks both rely on this.

use crate::preference::stem_feature;

const NEGATION_CUES: &[&str] = &[
    "not", "no", "never", "nor", "dislike", "dislikes", "disliked", "hate", "hates", "hated",
    "avoid", "avoids", "don't", "doesn't", "didn't", "isn't", "wasn't", "aren't", "can't",
    "cannot", "won't", "dont", "doesnt",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub word: String,
    pub negated: bool,
}

fn is_sentence_end(c: char) -> bool {
    matches!(c, '.' | '!' | '?' | ';' | '\n')
}

/// Lowercase word tokens. Apostrophes inside words are kept ("don't").
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut out = Vec::new();
    let mut negated = false;
    let mut word = String::new();
    let flush = |word: &mut String, negated: &mut bool, out: &mut Vec<Token>| {
        if word.is_empty() {
            return;
        }
        let w = word.trim_matches('\'').to_string();
        word.clear();
        if w.is_empty() {
            return;
        }
        if w == "but" {
            *negated = false;
            out.push(Token { word: w, negated: false });
            return;
        }
        let cue = NEGATION_CUES.contains(&w.as_str());
        out.push(Token { word: w, negated: *negated });
        if cue {
            *negated = true;
        }
    };
    for c in text.chars() {
        if c.is_alphanumeric() || (c == '\'' && !word.is_empty()) || c == '’' && !word.is_empty() {
            word.extend(c.to_lowercase().map(|c| if c == '’' { '\'' } else { c }));
        } else {
            flush(&mut word, &mut negated, &mut out);
            if is_sentence_end(c) {
                negated = false;
            }
        }
    }
    flush(&mut word, &mut negated, &mut out);
    out
}

/// Number of whitespace-separated tokens.
pub fn whitespace_len(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Keeps the first `max_tokens` whitespace tokens, joined by single spaces.
pub fn truncate_tokens(text: &str, max_tokens: usize) -> String {
    text.split_whitespace().take(max_tokens).collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Mentions {
    pub positive: usize,
    pub negative: usize,
}

impl Mentions {
    pub fn any(&self) -> bool {
        self.positive + self.negative > 0
    }
}

/// Counts words of `text` whose stem equals `stem`, split by negation.
pub fn mentions(text: &str, stem: &str) -> Mentions {
    let mut m = Mentions::default();
    for token in tokenize(text) {
        if stem_feature(&token.word) == stem {
            if token.negated {
                m.negative += 1;
            } else {
                m.positive += 1;
            }
        }
    }
    m
}

/// Splits text into sentences, keeping terminal punctuation.
pub fn sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    for (i, c) in text.char_indices() {
        if matches!(c, '.' | '!' | '?') {
            let end = i + c.len_utf8();
            let s = text[start..end].trim();
            if !s.is_empty() {
                out.push(s);
            }
            start = end;
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        out.push(tail);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn negated_words(text: &str) -> Vec<String> {
        tokenize(text).into_iter().filter(|t| t.negated).map(|t| t.word).collect()
    }

    #[test]
    fn negation_scope_ends_at_sentence() {
        let text = "I generally enjoy pools. I tend to dislike noise and crowds. The bed was fine.";
        assert_eq!(negated_words(text), vec!["noise", "and", "crowds"]);
    }

    #[test]
    fn but_resets_scope() {
        assert_eq!(negated_words("I don't like beaches but love pools"), vec!["like", "beaches"]);
    }

    #[test]
    fn apostrophes_and_case() {
        let words: Vec<_> = tokenize("Don't STOP").into_iter().map(|t| t.word).collect();
        assert_eq!(words, vec!["don't", "stop"]);
    }

    #[test]
    fn mention_counts() {
        let text = "I love the pool. I do not like pools at night.";
        assert_eq!(mentions(text, "pool"), Mentions { positive: 1, negative: 1 });
        assert!(!mentions(text, "beach").any());
    }

    #[test]
    fn truncation() {
        assert_eq!(truncate_tokens("a  b c\nd", 3), "a b c");
        assert_eq!(whitespace_len("a  b c\nd"), 4);
    }

    #[test]
    fn sentence_split() {
        assert_eq!(sentences("One. Two! Three"), vec!["One.", "Two!", "Three"]);
    }
}
