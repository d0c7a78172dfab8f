//! Pre-training corpora: serialized labeled records plus answer
//! interpretation pairs.

use super::backward::Example;
use super::score::interpretation_example;
use super::tokenizer::Tokenizer;
use crate::dataset::{PatientRecord, QuestionnaireSchema};
use crate::error::{Error, Result};
use crate::serialization::{serialize, TemplateKind};

/// Replies that mean yes.
pub const AFFIRMATIVE_REPLIES: &[&str] = &[
    "yes",
    "Yes",
    "yeah",
    "yep",
    "yes, for two days",
    "yes, since yesterday",
    "yes, a little bit",
    "yes, sometimes",
    "yes, it was bad",
    "yes, for a few days",
    "I think so",
    "definitely",
    "she has",
    "he did",
    "a lot",
];

/// Replies that mean no.
pub const NEGATIVE_REPLIES: &[&str] = &[
    "no",
    "No",
    "nope",
    "nah",
    "no, never",
    "not at all",
    "none",
    "he didn't",
    "she doesn't",
    "no, not really",
    "never",
    "I don't think so",
    "no, none",
    "not really",
    "we didn't",
];

/// One example per (record, template), target `yes` for label 1.
pub fn record_examples(
    records: &[PatientRecord],
    schema: &QuestionnaireSchema,
    templates: &[TemplateKind],
    tokenizer: &Tokenizer,
) -> Result<Vec<Example>> {
    let mut out = Vec::with_capacity(records.len() * templates.len());
    for (i, r) in records.iter().enumerate() {
        let label = r.label.ok_or_else(|| Error::Row { row: i + 1, message: "record has no label".into() })?;
        for &t in templates {
            out.push(Example::labeled(serialize(r, schema, t, tokenizer)?.token_ids, label, tokenizer));
        }
    }
    Ok(out)
}

/// Every schema question paired with every reply above.
pub fn interpretation_examples(schema: &QuestionnaireSchema, tokenizer: &Tokenizer) -> Vec<Example> {
    let mut out = Vec::new();
    for f in schema.features() {
        for (replies, label) in [(AFFIRMATIVE_REPLIES, 1), (NEGATIVE_REPLIES, 0)] {
            out.extend(replies.iter().map(|r| interpretation_example(tokenizer, &f.question_text, r, label)));
        }
    }
    out
}
