//! Closed-vocabulary word tokenizer.
//!
//! Text splits on spaces; trailing punctuation (`, . ? ! ; :`) is peeled off
//! into separate tokens. Detokenizing joins with single spaces and attaches
//! punctuation to the preceding token, so every serialized prompt round-trips
//! exactly.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::dataset::QuestionnaireSchema;
use crate::error::{Error, Result};

pub const UNK: &str = "<unk>";
pub const YES: &str = "yes";
pub const NO: &str = "no";

const PUNCT: &[char] = &[',', '.', '?', '!', ';', ':'];

/// Words of the prompt grammars and the answer-interpretation instruction.
const GLUE: &[&str] = &[
    "=", "is", "A", "patient", "with", ",", ".", "Does", "this", "have", "severe", "COVID-19", "or",
    "?", "Question", ":", "Answer", "Is", "the", "answer",
];

/// Common words in free-text questionnaire replies. Anything else maps to
/// the unknown token.
const CONVERSATION: &[&str] = &[
    "I", "i", "he", "she", "they", "we", "it", "my", "our", "child", "son", "daughter", "do",
    "does", "did", "not", "don't", "doesn't", "didn't", "has", "had", "was", "were", "been",
    "since", "for", "days", "day", "week", "weeks", "a", "an", "little", "bit", "lot", "some",
    "sometimes", "often", "always", "never", "at", "all", "definitely", "think", "so", "yesterday",
    "today", "last", "night", "two", "three", "few", "of", "and", "but", "on", "off", "mild",
    "bad", "very", "really", "sure", "yeah", "yep", "nope", "nah", "none", "maybe", "Yes", "No",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Tokenizer {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Tokenizer {
    /// Vocabulary for a questionnaire: special tokens, grammar words, digits,
    /// feature names, value words, question texts and reply words.
    pub fn build(schema: &QuestionnaireSchema) -> Self {
        let mut words: Vec<String> = vec![UNK.into(), YES.into(), NO.into()];
        words.extend(GLUE.iter().map(|s| s.to_string()));
        words.extend((0..10).map(|d| d.to_string()));
        for f in schema.features() {
            words.extend(split_words(&f.name));
            words.extend(f.value_words.iter().cloned());
            words.extend(split_words(&f.question_text));
        }
        words.extend(CONVERSATION.iter().map(|s| s.to_string()));
        let mut seen = std::collections::HashSet::new();
        words.retain(|w| seen.insert(w.clone()));
        Self::from_tokens(words).expect("built vocabulary is valid")
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.first().map(String::as_str) != Some(UNK) {
            return Err(Error::arg("vocabulary must start with the unknown token"));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::arg(format!("duplicate vocabulary entry {t:?}")));
            }
        }
        if !index.contains_key(YES) || !index.contains_key(NO) {
            return Err(Error::arg("vocabulary lacks the yes/no answer tokens"));
        }
        Ok(Self { tokens, index })
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn unk_id(&self) -> u32 {
        0
    }

    pub fn yes_id(&self) -> u32 {
        self.index[YES]
    }

    pub fn no_id(&self) -> u32 {
        self.index[NO]
    }

    pub fn id(&self, word: &str) -> Option<u32> {
        self.index.get(word).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Lenient encoding: exact match, then lowercase match, else unknown.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        split_words(text)
            .iter()
            .map(|w| {
                self.id(w)
                    .or_else(|| self.id(&w.to_lowercase()))
                    .unwrap_or(self.unk_id())
            })
            .collect()
    }

    /// Strict encoding of pre-split words; any out-of-vocabulary word fails.
    pub fn encode_words(&self, words: &[&str]) -> Result<Vec<u32>> {
        words
            .iter()
            .map(|w| self.id(w).ok_or_else(|| Error::arg(format!("word {w:?} is not in the vocabulary"))))
            .collect()
    }

    pub fn decode(&self, ids: &[u32]) -> String {
        let words: Vec<&str> = ids.iter().map(|&i| self.token(i).unwrap_or(UNK)).collect();
        join_words(&words)
    }
}

impl TryFrom<Vec<String>> for Tokenizer {
    type Error = Error;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        Self::from_tokens(tokens)
    }
}

impl From<Tokenizer> for Vec<String> {
    fn from(t: Tokenizer) -> Self {
        t.tokens
    }
}

fn is_punct_token(w: &str) -> bool {
    w.len() == 1 && w.starts_with(PUNCT)
}

/// Splits text into word and punctuation tokens.
pub fn split_words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let mut tail = Vec::new();
        let mut word = chunk;
        while let Some(c) = word.chars().last() {
            if PUNCT.contains(&c) && word.len() > 1 {
                tail.push(c.to_string());
                word = &word[..word.len() - c.len_utf8()];
            } else {
                break;
            }
        }
        out.push(word.to_string());
        out.extend(tail.into_iter().rev());
    }
    out
}

pub(crate) fn join_words(words: &[&str]) -> String {
    let mut text = String::new();
    for (i, w) in words.iter().enumerate() {
        if i > 0 && !is_punct_token(w) {
            text.push(' ');
        }
        text.push_str(w);
    }
    text
}
