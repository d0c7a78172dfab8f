//! Record-to-prompt serialization.
//!
//! Two grammars are supported:
//!
//! * List: `{name} = {value}` pairs joined by `", "`.
//! * Text: `"A patient with "` + `{name} is {value}` pairs joined by `", "` + `"."`.
//!
//! Both end with [`QUESTION_SUFFIX`]. Each feature-value pair is tracked as a
//! token span so attention can be aggregated per feature.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{PatientRecord, QuestionnaireSchema};
use crate::error::{Error, Result};
use crate::microlm::tokenizer::{join_words, split_words, Tokenizer};

pub const QUESTION_SUFFIX: &str = " Does this patient have severe COVID-19, yes or no?";
const TEXT_PREFIX: &str = "A patient with ";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemplateKind {
    List,
    Text,
}

impl TemplateKind {
    pub const ALL: [TemplateKind; 2] = [TemplateKind::List, TemplateKind::Text];

    /// Row-label suffix used in reports: `L` or `T`.
    pub fn tag(self) -> char {
        match self {
            TemplateKind::List => 'L',
            TemplateKind::Text => 'T',
        }
    }

    fn connector(self) -> &'static str {
        match self {
            TemplateKind::List => "=",
            TemplateKind::Text => "is",
        }
    }
}

impl fmt::Display for TemplateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TemplateKind::List => "list",
            TemplateKind::Text => "text",
        })
    }
}

impl FromStr for TemplateKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "list" | "l" => Ok(TemplateKind::List),
            "text" | "t" => Ok(TemplateKind::Text),
            other => Err(Error::arg(format!("unknown template {other:?} (expected list or text)"))),
        }
    }
}

/// Token range `[start, end)` covering one feature-value pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpan {
    pub feature_id: u32,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SerializedPrompt {
    pub text: String,
    pub template: TemplateKind,
    pub token_ids: Vec<u32>,
    pub spans: Vec<FeatureSpan>,
    pub suffix_start: usize,
}

pub fn serialize(
    record: &PatientRecord,
    schema: &QuestionnaireSchema,
    template: TemplateKind,
    tokenizer: &Tokenizer,
) -> Result<SerializedPrompt> {
    record.check_schema(schema)?;
    let name_words: Vec<Vec<String>> = schema.features().iter().map(|f| split_words(&f.name)).collect();

    let mut words: Vec<&str> = Vec::new();
    let mut spans = Vec::with_capacity(schema.d());
    if template == TemplateKind::Text {
        words.extend(["A", "patient", "with"]);
    }
    for (i, (f, &v)) in schema.features().iter().zip(&record.values).enumerate() {
        if i > 0 {
            words.push(",");
        }
        let start = words.len();
        words.extend(name_words[i].iter().map(String::as_str));
        words.push(template.connector());
        words.push(f.value_word(v));
        spans.push(FeatureSpan { feature_id: f.id, start, end: words.len() });
    }
    if template == TemplateKind::Text {
        words.push(".");
    }
    let suffix_start = words.len();
    let suffix_words = split_words(QUESTION_SUFFIX);
    words.extend(suffix_words.iter().map(String::as_str));

    let token_ids = tokenizer.encode_words(&words)?;
    Ok(SerializedPrompt {
        text: join_words(&words),
        template,
        token_ids,
        spans,
        suffix_start,
    })
}

/// Serializes questionnaire answers given in schema order.
pub fn serialize_answers(
    answers: &[u8],
    schema: &QuestionnaireSchema,
    template: TemplateKind,
    tokenizer: &Tokenizer,
) -> Result<SerializedPrompt> {
    if answers.len() != schema.d() {
        return Err(Error::arg(format!("expected {} answers, got {}", schema.d(), answers.len())));
    }
    let record = PatientRecord::unlabeled(answers.to_vec())?;
    serialize(&record, schema, template, tokenizer)
}

/// Inverse of [`serialize`] on the prompt text. The label is not recovered.
pub fn parse_prompt(text: &str, schema: &QuestionnaireSchema, template: TemplateKind) -> Result<PatientRecord> {
    let mut rest = text
        .strip_suffix(QUESTION_SUFFIX)
        .ok_or_else(|| Error::Prompt("missing question suffix".into()))?;
    if template == TemplateKind::Text {
        rest = rest
            .strip_prefix(TEXT_PREFIX)
            .ok_or_else(|| Error::Prompt(format!("text template must start with {TEXT_PREFIX:?}")))?;
        rest = rest
            .strip_suffix('.')
            .ok_or_else(|| Error::Prompt("text template must end with a period".into()))?;
    }

    let d = schema.d();
    let mut values = Vec::with_capacity(d);
    for (i, f) in schema.features().iter().enumerate() {
        let head = format!("{} {} ", f.name, template.connector());
        rest = rest.strip_prefix(head.as_str()).ok_or_else(|| {
            let found: String = rest.chars().take(head.len()).collect();
            Error::Prompt(format!("expected feature {:?}, found {found:?}", f.name))
        })?;
        let (word, tail) = if i + 1 < d {
            rest.split_once(", ")
                .ok_or_else(|| Error::Prompt(format!("missing separator after feature {:?}", f.name)))?
        } else {
            (rest, "")
        };
        let value = f
            .value_words
            .iter()
            .position(|w| w == word)
            .ok_or_else(|| Error::Prompt(format!("unrecognized value {word:?} for feature {:?}", f.name)))?;
        values.push(value as u8);
        rest = tail;
    }
    PatientRecord::unlabeled(values)
}
