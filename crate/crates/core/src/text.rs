//! Tokenization and vocabulary for short social-media-style messages.

use std::collections::HashMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const TARGET: &str = "<target>";

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const TARGET_ID: usize = 2;

pub const RESERVED: [&str; 3] = [PAD, UNK, TARGET];

/// The literal placeholder marking the removed word in cloze datasets.
pub const PLACEHOLDER: &str = "[#TARGETWORD#]";

fn token_pattern() -> &'static Regex {
    static PATTERN: OnceLock<Regex> = OnceLock::new();
    PATTERN.get_or_init(|| {
        Regex::new(
            r"(?x)
            (?P<target>(?i:\[\#targetword\#\]))
            |(?P<tag><(?:url|user|number|target|pad|unk)>)
            |(?P<url>https?://\S+|www\.\S+)
            |(?P<user>@\w+)
            |(?P<hashtag>\#\w+)
            |(?P<number>[0-9]+(?:[.,][0-9]+)*)
            |(?P<word>[\p{L}_][\p{L}\p{M}\p{N}_]*)
            |(?P<other>\S)
            ",
        )
        .expect("token pattern compiles")
    })
}

/// Lowercased tokens with URL/mention/number normalization. Punctuation
/// splits into separate tokens; hashtags and emoji stay whole. The cloze
/// placeholder becomes the reserved `<target>` token.
///
/// Idempotent on its own output joined by spaces.
pub fn tokenize(text: &str) -> Vec<String> {
    let pattern = token_pattern();
    let mut tokens = Vec::new();
    for caps in pattern.captures_iter(text) {
        if caps.name("target").is_some() {
            tokens.push(TARGET.to_string());
        } else if let Some(m) = caps.name("tag") {
            tokens.push(m.as_str().to_lowercase());
        } else if caps.name("url").is_some() {
            tokens.push("<url>".to_string());
        } else if caps.name("user").is_some() {
            tokens.push("<user>".to_string());
        } else if let Some(m) = caps.name("hashtag") {
            tokens.push(m.as_str().to_lowercase());
        } else if caps.name("number").is_some() {
            tokens.push("<number>".to_string());
        } else if let Some(m) = caps.name("word") {
            tokens.push(m.as_str().to_lowercase());
        } else if let Some(m) = caps.name("other") {
            tokens.push(m.as_str().to_string());
        }
    }
    tokens
}

/// Token/id bijection with reserved ids 0=`<pad>`, 1=`<unk>`, 2=`<target>`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabularyData", into = "VocabularyData")]
pub struct Vocabulary {
    tokens: Vec<String>,
    counts: Vec<u64>,
    ids: HashMap<String, usize>,
}

#[derive(Clone, Serialize, Deserialize)]
struct VocabularyData {
    tokens: Vec<String>,
    counts: Vec<u64>,
}

impl From<VocabularyData> for Vocabulary {
    fn from(data: VocabularyData) -> Self {
        let ids = data
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary {
            tokens: data.tokens,
            counts: data.counts,
            ids,
        }
    }
}

impl From<Vocabulary> for VocabularyData {
    fn from(v: Vocabulary) -> Self {
        VocabularyData {
            tokens: v.tokens,
            counts: v.counts,
        }
    }
}

impl Vocabulary {
    fn reserved_only() -> Self {
        let tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let ids = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary {
            counts: vec![0; tokens.len()],
            tokens,
            ids,
        }
    }

    /// Builds a vocabulary from token lines. Ids are assigned by descending
    /// frequency with lexicographic tie-break; reserved tokens come first.
    /// `max_size` caps the number of non-reserved entries.
    pub fn build<'a, I, L>(corpus: I, min_count: u64, max_size: Option<usize>) -> Result<Self>
    where
        I: IntoIterator<Item = L>,
        L: IntoIterator<Item = &'a String>,
    {
        if min_count < 1 {
            return Err(Error::config("min_count must be >= 1".to_string()));
        }
        let mut counts: HashMap<&'a String, u64> = HashMap::new();
        for line in corpus {
            for token in line {
                *counts.entry(token).or_insert(0) += 1;
            }
        }
        let mut vocab = Vocabulary::reserved_only();
        for (i, reserved) in RESERVED.iter().enumerate() {
            if let Some(&c) = counts.get(&reserved.to_string()) {
                vocab.counts[i] = c;
            }
        }
        let mut candidates: Vec<(&String, u64)> = counts
            .into_iter()
            .filter(|(t, c)| *c >= min_count && !RESERVED.contains(&t.as_str()))
            .collect();
        candidates.sort_by(|(ta, ca), (tb, cb)| cb.cmp(ca).then_with(|| ta.cmp(tb)));
        if let Some(cap) = max_size {
            candidates.truncate(cap);
        }
        for (token, count) in candidates {
            let id = vocab.tokens.len();
            vocab.ids.insert(token.clone(), id);
            vocab.tokens.push(token.clone());
            vocab.counts.push(count);
        }
        Ok(vocab)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false // reserved tokens are always present
    }

    pub fn id_of(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    pub fn token_of(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn count_of(&self, id: usize) -> u64 {
        self.counts.get(id).copied().unwrap_or(0)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.ids.contains_key(token)
    }

    /// Out-of-vocabulary tokens map to `<unk>`; length is preserved.
    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens
            .iter()
            .map(|t| self.id_of(t).unwrap_or(UNK_ID))
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .map(|&id| self.token_of(id).unwrap_or(UNK).to_string())
            .collect()
    }

    /// Non-reserved ids, i.e. real corpus tokens.
    pub fn content_ids(&self) -> impl Iterator<Item = usize> + '_ {
        RESERVED.len()..self.tokens.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(text: &str) -> Vec<String> {
        tokenize(text)
    }

    #[test]
    fn placeholder_becomes_target_token() {
        assert_eq!(
            toks("I feel [#TARGETWORD#] today!"),
            vec!["i", "feel", "<target>", "today", "!"]
        );
    }

    #[test]
    fn urls_mentions_numbers_normalize() {
        assert_eq!(
            toks("@sam see http://x.co 42"),
            vec!["<user>", "see", "<url>", "<number>"]
        );
    }

    #[test]
    fn empty_string_yields_no_tokens() {
        assert!(toks("").is_empty());
    }

    #[test]
    fn hashtags_and_emoji_stay_single_tokens() {
        assert_eq!(toks("#Happy 🎉 yes"), vec!["#happy", "🎉", "yes"]);
    }

    #[test]
    fn punctuation_splits() {
        assert_eq!(toks("wow,really?!"), vec!["wow", ",", "really", "?", "!"]);
    }

    #[test]
    fn tokenize_idempotent_on_examples() {
        for text in [
            "I feel [#TARGETWORD#] today!",
            "@sam see http://x.co 42",
            "#Happy 🎉 yes... wow,really?! İstanbul",
            "<url> <user> <number> <target> mixedّ",
        ] {
            let once = toks(text);
            let rejoined = once.join(" ");
            assert_eq!(toks(&rejoined), once, "not idempotent for {text:?}");
        }
    }

    #[test]
    fn vocab_min_count_filters() {
        let corpus = vec![
            vec!["a".to_string(), "a".to_string(), "a".to_string()],
            vec!["b".to_string()],
        ];
        let vocab = Vocabulary::build(corpus.iter().map(|l| l.iter()), 2, None).unwrap();
        assert_eq!(vocab.len(), RESERVED.len() + 1);
        assert!(vocab.contains("a"));
        assert_eq!(vocab.encode(&["b".to_string()]), vec![UNK_ID]);
    }

    #[test]
    fn vocab_max_size_breaks_ties_lexicographically() {
        let corpus = vec![vec!["b".to_string(); 5], vec!["a".to_string(); 5]];
        let vocab = Vocabulary::build(corpus.iter().map(|l| l.iter()), 1, Some(1)).unwrap();
        assert!(vocab.contains("a"));
        assert!(!vocab.contains("b"));
    }

    #[test]
    fn vocab_min_count_one_keeps_everything() {
        let corpus = vec![vec!["x".to_string(), "y".to_string(), "z".to_string()]];
        let vocab = Vocabulary::build(corpus.iter().map(|l| l.iter()), 1, None).unwrap();
        assert_eq!(vocab.len(), RESERVED.len() + 3);
    }

    #[test]
    fn empty_corpus_keeps_reserved_only() {
        let corpus: Vec<Vec<String>> = vec![];
        let vocab = Vocabulary::build(corpus.iter().map(|l| l.iter()), 1, None).unwrap();
        assert_eq!(vocab.len(), RESERVED.len());
        assert_eq!(vocab.id_of(PAD), Some(PAD_ID));
        assert_eq!(vocab.id_of(UNK), Some(UNK_ID));
        assert_eq!(vocab.id_of(TARGET), Some(TARGET_ID));
    }

    #[test]
    fn encode_decode_roundtrip_in_vocab() {
        let corpus = vec![vec!["hello".to_string(), "world".to_string()]];
        let vocab = Vocabulary::build(corpus.iter().map(|l| l.iter()), 1, None).unwrap();
        let tokens = vec!["world".to_string(), "hello".to_string()];
        assert_eq!(vocab.decode(&vocab.encode(&tokens)), tokens);
    }

    #[test]
    fn ids_follow_frequency_then_lex_order() {
        let corpus = vec![
            vec!["mid".to_string(); 2],
            vec!["top".to_string(); 3],
            vec!["aaa".to_string(); 2],
        ];
        let vocab = Vocabulary::build(corpus.iter().map(|l| l.iter()), 1, None).unwrap();
        assert_eq!(vocab.token_of(RESERVED.len()), Some("top"));
        assert_eq!(vocab.token_of(RESERVED.len() + 1), Some("aaa"));
        assert_eq!(vocab.token_of(RESERVED.len() + 2), Some("mid"));
    }

    #[test]
    fn vocab_survives_serde_roundtrip() {
        let corpus = vec![vec!["hello".to_string(), "world".to_string()]];
        let vocab = Vocabulary::build(corpus.iter().map(|l| l.iter()), 1, None).unwrap();
        let json = serde_json::to_string(&vocab).unwrap();
        let back: Vocabulary = serde_json::from_str(&json).unwrap();
        assert_eq!(vocab, back);
    }

    proptest! {
        #[test]
        fn tokenize_is_idempotent(text in "[ -~🎉😀é#@:/\\.]{0,60}") {
            let once = tokenize(&text);
            let rejoined = once.join(" ");
            prop_assert_eq!(tokenize(&rejoined), once);
        }

        #[test]
        fn encode_preserves_length(tokens in proptest::collection::vec("[a-z]{1,6}", 0..20)) {
            let corpus = vec![vec!["known".to_string()]];
            let vocab = Vocabulary::build(corpus.iter().map(|l| l.iter()), 1, None).unwrap();
            let tokens: Vec<String> = tokens;
            prop_assert_eq!(vocab.encode(&tokens).len(), tokens.len());
        }
    }
}
