//! Prompt and response text features.
//!
//! Everything here is rule based and locale independent. Words are
//! whitespace-separated tokens; a token's "lexicon word" is the token with
//! every non-alphanumeric character removed, and tokens that become empty are
//! not lexicon words.

mod pos;
pub mod table;

use std::collections::HashSet;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

pub use pos::{tag_word, PosTag};
pub use table::{build_feature_table, FeatureTable, TableError, FEATURE_COLUMNS, TARGET_COLUMN};

/// Milliseconds of reading time per character.
pub const MS_PER_CHAR: f64 = 14.69;
/// Words with more letters than this are long.
pub const LONG_WORD_LETTERS: usize = 6;

const STOPWORDS: &str = include_str!("../../data/stopwords.txt");

pub fn stopwords() -> &'static HashSet<&'static str> {
    static SET: OnceLock<HashSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| STOPWORDS.lines().map(str::trim).filter(|l| !l.is_empty()).collect())
}

/// Features computed from text alone.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TextFeatures {
    pub char_count: u64,
    pub letter_count: u64,
    pub word_count: u64,
    pub lexicon_count: u64,
    pub syllable_count: u64,
    pub monosyllabcount: u64,
    pub polysyllabcount: u64,
    pub long_word_count: u64,
    pub stop_word_count: u64,
    /// Seconds.
    pub reading_time: f64,
    pub sentence_count: u64,
    pub avg_word_length: f64,
    pub adj_count: u64,
    pub adverb_count: u64,
    pub noun_count: u64,
    pub verb_count: u64,
}

impl TextFeatures {
    /// `(name, value)` pairs in table column order.
    pub fn pairs(&self) -> [(&'static str, f64); 16] {
        [
            ("char_count", self.char_count as f64),
            ("letter_count", self.letter_count as f64),
            ("word_count", self.word_count as f64),
            ("lexicon_count", self.lexicon_count as f64),
            ("syllable_count", self.syllable_count as f64),
            ("monosyllabcount", self.monosyllabcount as f64),
            ("polysyllabcount", self.polysyllabcount as f64),
            ("long_word_count", self.long_word_count as f64),
            ("stop_word_count", self.stop_word_count as f64),
            ("reading_time", self.reading_time),
            ("sentence_count", self.sentence_count as f64),
            ("avg_word_length", self.avg_word_length),
            ("adj_count", self.adj_count as f64),
            ("adverb_count", self.adverb_count as f64),
            ("noun_count", self.noun_count as f64),
            ("verb_count", self.verb_count as f64),
        ]
    }
}

/// Syllables in one word: vowel groups (`y` counts as a vowel), minus a
/// silent final `e`, at least one.
pub fn syllables(word: &str) -> u64 {
    let lower: Vec<char> = word.chars().filter(|c| c.is_alphabetic()).flat_map(char::to_lowercase).collect();
    let is_vowel = |c: char| matches!(c, 'a' | 'e' | 'i' | 'o' | 'u' | 'y');
    let mut groups = 0u64;
    let mut prev = false;
    for &c in &lower {
        let v = is_vowel(c);
        if v && !prev {
            groups += 1;
        }
        prev = v;
    }
    let n = lower.len();
    let silent_e = n >= 2 && lower[n - 1] == 'e' && !is_vowel(lower[n - 2]);
    if silent_e && groups > 1 {
        groups -= 1;
    }
    groups.max(1)
}

fn lexicon_word(token: &str) -> String {
    token.chars().filter(|c| c.is_alphanumeric()).collect()
}

pub fn sentence_count(text: &str) -> u64 {
    text.split(['.', '!', '?'])
        .filter(|s| s.chars().any(char::is_alphanumeric))
        .count() as u64
}

pub fn extract_features(text: &str) -> TextFeatures {
    let mut f = TextFeatures {
        char_count: text.chars().count() as u64,
        letter_count: text.chars().filter(|c| c.is_alphabetic()).count() as u64,
        sentence_count: sentence_count(text),
        ..TextFeatures::default()
    };
    let stop = stopwords();
    for token in text.split_whitespace() {
        f.word_count += 1;
        let word = lexicon_word(token);
        if word.is_empty() {
            continue;
        }
        f.lexicon_count += 1;
        let s = syllables(&word);
        f.syllable_count += s;
        match s {
            1 => f.monosyllabcount += 1,
            2 => {}
            _ => f.polysyllabcount += 1,
        }
        if word.chars().filter(|c| c.is_alphabetic()).count() > LONG_WORD_LETTERS {
            f.long_word_count += 1;
        }
        let lower = word.to_lowercase();
        if stop.contains(lower.as_str()) {
            f.stop_word_count += 1;
        }
        match tag_word(&lower) {
            PosTag::Noun => f.noun_count += 1,
            PosTag::Verb => f.verb_count += 1,
            PosTag::Adjective => f.adj_count += 1,
            PosTag::Adverb => f.adverb_count += 1,
            PosTag::Other => {}
        }
    }
    f.reading_time = f.char_count as f64 * MS_PER_CHAR / 1000.0;
    f.avg_word_length = if f.lexicon_count == 0 {
        0.0
    } else {
        f.letter_count as f64 / f.lexicon_count as f64
    };
    f
}
