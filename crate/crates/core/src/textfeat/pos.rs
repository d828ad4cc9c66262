//! Coarse part-of-speech tagging: a lexicon lookup, then suffix rules,
//! then noun.

use std::collections::HashMap;
use std::sync::OnceLock;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PosTag {
    Noun,
    Verb,
    Adjective,
    Adverb,
    /// Determiners, pronouns, prepositions, auxiliaries, numbers.
    Other,
}

const LEXICON: &str = include_str!("../../data/pos_lexicon.txt");

fn lexicon() -> &'static HashMap<&'static str, PosTag> {
    static MAP: OnceLock<HashMap<&'static str, PosTag>> = OnceLock::new();
    MAP.get_or_init(|| {
        LEXICON
            .lines()
            .filter(|l| !l.starts_with('#'))
            .filter_map(|l| {
                let (word, tag) = l.split_once('\t')?;
                let tag = match tag.trim() {
                    "noun" => PosTag::Noun,
                    "verb" => PosTag::Verb,
                    "adjective" => PosTag::Adjective,
                    "adverb" => PosTag::Adverb,
                    _ => PosTag::Other,
                };
                Some((word, tag))
            })
            .collect()
    })
}

/// Tags one lowercase word with punctuation already removed.
pub fn tag_word(word: &str) -> PosTag {
    if let Some(&tag) = lexicon().get(word) {
        return tag;
    }
    if super::stopwords().contains(word) || word.chars().all(|c| c.is_ascii_digit()) {
        return PosTag::Other;
    }
    const RULES: &[(&str, PosTag)] = &[
        ("ly", PosTag::Adverb),
        ("ous", PosTag::Adjective),
        ("ful", PosTag::Adjective),
        ("ive", PosTag::Adjective),
        ("able", PosTag::Adjective),
        ("ible", PosTag::Adjective),
        ("tion", PosTag::Noun),
        ("sion", PosTag::Noun),
        ("ness", PosTag::Noun),
        ("ment", PosTag::Noun),
        ("ize", PosTag::Verb),
        ("ise", PosTag::Verb),
        ("ate", PosTag::Verb),
        ("ing", PosTag::Verb),
        ("ed", PosTag::Verb),
    ];
    for (suffix, tag) in RULES {
        if word.len() > suffix.len() + 2 && word.ends_with(suffix) {
            return *tag;
        }
    }
    // Regular third-person and plural forms of lexicon words.
    for stem in [word.strip_suffix('s'), word.strip_suffix("es")].into_iter().flatten() {
        if let Some(&tag) = lexicon().get(stem) {
            return tag;
        }
    }
    PosTag::Noun
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lexicon_then_suffix_then_default() {
        assert_eq!(tag_word("model"), PosTag::Noun);
        assert_eq!(tag_word("explain"), PosTag::Verb);
        assert_eq!(tag_word("the"), PosTag::Other);
        assert_eq!(tag_word("blazingly"), PosTag::Adverb);
        assert_eq!(tag_word("gorgeous"), PosTag::Adjective);
        assert_eq!(tag_word("tokenization"), PosTag::Noun);
        assert_eq!(tag_word("vectorize"), PosTag::Verb);
        assert_eq!(tag_word("generates"), PosTag::Verb);
        assert_eq!(tag_word("zorblax"), PosTag::Noun);
        assert_eq!(tag_word("2024"), PosTag::Other);
    }

    #[test]
    fn lexicon_is_sizable() {
        assert!(lexicon().len() > 1500);
    }
}
