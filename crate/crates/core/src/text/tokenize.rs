use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lowercases and splits on whitespace; punctuation marks become tokens of
/// their own, apostrophes inside words are kept.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    let chars: Vec<char> = text.chars().collect();
    for (i, &c) in chars.iter().enumerate() {
        let inner_apostrophe = c == '\'' && !word.is_empty() && chars.get(i + 1).is_some_and(|n| n.is_alphanumeric());
        if c.is_alphanumeric() || inner_apostrophe {
            word.extend(c.to_lowercase());
        } else {
            if !word.is_empty() {
                out.push(std::mem::take(&mut word));
            }
            if !c.is_whitespace() {
                out.push(c.to_string());
            }
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

/// Coarse part-of-speech classes, one-hot encoded next to embeddings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PosTag {
    Noun,
    Verb,
    Adj,
    Adv,
    Pron,
    Det,
    Adp,
    Num,
    Conj,
    Prt,
    Punct,
    Other,
}

impl PosTag {
    pub const COUNT: usize = 12;
    pub const ALL: [PosTag; 12] = [
        PosTag::Noun,
        PosTag::Verb,
        PosTag::Adj,
        PosTag::Adv,
        PosTag::Pron,
        PosTag::Det,
        PosTag::Adp,
        PosTag::Num,
        PosTag::Conj,
        PosTag::Prt,
        PosTag::Punct,
        PosTag::Other,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        ["NOUN", "VERB", "ADJ", "ADV", "PRON", "DET", "ADP", "NUM", "CONJ", "PRT", ".", "X"][self.index()]
    }
}

impl fmt::Display for PosTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PosTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let up = s.trim().to_ascii_uppercase();
        let canon = match up.as_str() {
            "PUNCT" => ".",
            "ADJECTIVE" => "ADJ",
            "ADVERB" => "ADV",
            "PRONOUN" => "PRON",
            "CCONJ" | "SCONJ" => "CONJ",
            "PART" => "PRT",
            "PROPN" => "NOUN",
            "AUX" => "VERB",
            "OTHER" => "X",
            other => other,
        };
        PosTag::ALL
            .into_iter()
            .find(|t| t.name() == canon)
            .ok_or_else(|| Error::Data(format!("unknown POS tag '{s}'")))
    }
}

impl TryFrom<String> for PosTag {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<PosTag> for String {
    fn from(t: PosTag) -> String {
        t.name().to_string()
    }
}

const PRONOUNS: &[&str] = &[
    "i",
    "me",
    "my",
    "mine",
    "you",
    "your",
    "yours",
    "he",
    "him",
    "his",
    "she",
    "her",
    "hers",
    "it",
    "its",
    "we",
    "us",
    "our",
    "ours",
    "they",
    "them",
    "their",
    "theirs",
    "this",
    "that",
    "these",
    "those",
    "who",
    "what",
    "which",
    "myself",
    "yourself",
    "itself",
    "themselves",
    "something",
    "anything",
    "nothing",
    "everything",
];
const DETERMINERS: &[&str] = &["a", "an", "the", "some", "any", "no", "every", "each", "all", "both", "another"];
const ADPOSITIONS: &[&str] = &[
    "in", "on", "at", "by", "for", "with", "about", "against", "between", "into", "through", "during", "before", "after", "above", "below",
    "from", "up", "down", "of", "off", "over", "under", "like", "than", "without",
];
const CONJUNCTIONS: &[&str] = &[
    "and", "or", "but", "nor", "so", "yet", "because", "if", "while", "although", "though",
];
const PARTICLES: &[&str] = &["to", "not", "n't", "'s", "'re", "'ve", "'ll", "'d", "'m"];
const VERBS: &[&str] = &[
    "is", "am", "are", "was", "were", "be", "been", "being", "have", "has", "had", "do", "does", "did", "will", "would", "can", "could",
    "should", "may", "might", "must", "shall", "go", "went", "get", "got", "make", "made", "think", "thought", "know", "knew", "see",
    "saw", "say", "said", "like", "liked", "love", "loved", "hate", "hated", "want", "feel", "felt", "seem", "seemed", "watch", "watched",
];
const ADVERBS: &[&str] = &[
    "very", "really", "too", "quite", "just", "also", "never", "always", "often", "so", "well", "pretty", "still", "even", "again", "here",
    "there", "now", "then", "maybe",
];

/// Rule-based coarse tagger: closed-class word lists, then suffix rules,
/// defaulting to noun.
pub fn tag_token(token: &str) -> PosTag {
    let t = token;
    if t.chars().all(|c| !c.is_alphanumeric() && c != '\'') {
        return PosTag::Punct;
    }
    if t.chars().all(|c| c.is_ascii_digit() || c == '.' || c == ',') {
        return PosTag::Num;
    }
    let lists: [(&[&str], PosTag); 7] = [
        (PRONOUNS, PosTag::Pron),
        (DETERMINERS, PosTag::Det),
        (CONJUNCTIONS, PosTag::Conj),
        (PARTICLES, PosTag::Prt),
        (VERBS, PosTag::Verb),
        (ADPOSITIONS, PosTag::Adp),
        (ADVERBS, PosTag::Adv),
    ];
    if let Some((_, tag)) = lists.iter().find(|(words, _)| words.contains(&t)) {
        return *tag;
    }
    if t.len() > 4 && t.ends_with("ly") {
        return PosTag::Adv;
    }
    if t.len() > 4 && (t.ends_with("ing") || t.ends_with("ed") || t.ends_with("ize")) {
        return PosTag::Verb;
    }
    const ADJ_SUFFIXES: &[&str] = &["ous", "ful", "ive", "able", "ible", "al", "ic", "less", "ish", "est"];
    if t.len() > 4 && ADJ_SUFFIXES.iter().any(|s| t.ends_with(s)) {
        return PosTag::Adj;
    }
    if !t.is_ascii() {
        return PosTag::Other;
    }
    PosTag::Noun
}

pub fn tag_tokens(tokens: &[String]) -> Vec<PosTag> {
    tokens.iter().map(|t| tag_token(t)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_and_lowercases() {
        assert_eq!(
            tokenize("It's GREAT, really!  Don't  go."),
            vec!["it's", "great", ",", "really", "!", "don't", "go", "."]
        );
        assert!(tokenize("   ").is_empty());
    }

    #[test]
    fn tags_closed_classes_and_suffixes() {
        let toks = tokenize("the movie was really wonderful and surprisingly moving , 42");
        let tags: Vec<&str> = tag_tokens(&toks).iter().map(|t| t.name()).collect();
        assert_eq!(tags, vec!["DET", "NOUN", "VERB", "ADV", "ADJ", "CONJ", "ADV", "VERB", ".", "NUM"]);
    }

    #[test]
    fn tag_names_roundtrip() {
        for t in PosTag::ALL {
            assert_eq!(t.name().parse::<PosTag>().unwrap(), t);
        }
        assert_eq!("PUNCT".parse::<PosTag>().unwrap(), PosTag::Punct);
        assert!("FOO".parse::<PosTag>().is_err());
    }
}
