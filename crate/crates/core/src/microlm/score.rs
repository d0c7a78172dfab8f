//! Yes/no risk scoring, attention feature importance and free-text answer
//! interpretation.

use ndarray::Axis;
use serde::{Deserialize, Serialize};

use super::backward::Example;
use super::forward::forward;
use super::lora::LoraAdapter;
use super::tokenizer::Tokenizer;
use super::weights::MicroLmWeights;
use crate::error::{Error, Result};
use crate::serialization::SerializedPrompt;

/// Half-width of the band around 0.5 inside which an interpreted answer
/// counts as ambiguous.
pub const AMBIGUITY_BAND: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreOutput {
    pub logit_yes: f64,
    pub logit_no: f64,
    pub p_yes: f64,
    pub predicted_label: u8,
    pub importance: Option<Vec<f64>>,
}

impl ScoreOutput {
    pub fn from_logits(logit_yes: f64, logit_no: f64) -> Self {
        let (p_yes, _) = two_way_softmax(logit_yes, logit_no);
        Self { logit_yes, logit_no, p_yes, predicted_label: predicted_label(p_yes), importance: None }
    }

    pub fn p_no(&self) -> f64 {
        two_way_softmax(self.logit_yes, self.logit_no).1
    }
}

/// `(p_yes, p_no)` of the two-token softmax, evaluated through the logistic
/// function of the logit gap so neither exponential can overflow.
pub fn two_way_softmax(logit_yes: f64, logit_no: f64) -> (f64, f64) {
    let gap = logit_yes - logit_no;
    (logistic(gap), logistic(-gap))
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// 1 iff `p_yes > 0.5`.
pub fn predicted_label(p_yes: f64) -> u8 {
    u8::from(p_yes > 0.5)
}

pub fn is_ambiguous(p_yes: f64) -> bool {
    (p_yes - 0.5).abs() < AMBIGUITY_BAND
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterpretedAnswer {
    pub binary: u8,
    pub p_yes: f64,
    pub ambiguous: bool,
}

/// Instruction asking the model to map a free-text reply to yes or no.
pub fn interpretation_prompt(question: &str, free_text: &str) -> String {
    let answer = free_text.trim().trim_end_matches(['.', '!', '?', ',', ';', ':']);
    format!("Question: {} Answer: {answer}. Is the answer yes or no?", question.trim())
}

/// Scores a tokenized prompt without bundling the parts into a [`MicroLm`].
pub fn score_tokens(
    weights: &MicroLmWeights,
    adapter: Option<&LoraAdapter>,
    tokenizer: &Tokenizer,
    token_ids: &[u32],
) -> Result<ScoreOutput> {
    let out = forward(weights, adapter, token_ids)?;
    let last = out.final_logits();
    Ok(ScoreOutput::from_logits(last[tokenizer.yes_id() as usize], last[tokenizer.no_id() as usize]))
}

/// A scoring model: tokenizer, frozen base weights and an optional adapter.
#[derive(Debug, Clone)]
pub struct MicroLm {
    pub tokenizer: Tokenizer,
    pub weights: MicroLmWeights,
    pub adapter: Option<LoraAdapter>,
}

impl MicroLm {
    pub fn new(tokenizer: Tokenizer, weights: MicroLmWeights, adapter: Option<LoraAdapter>) -> Result<Self> {
        if tokenizer.vocab_size() != weights.config.vocab_size {
            return Err(Error::arg(format!(
                "tokenizer has {} entries, model vocabulary is {}",
                tokenizer.vocab_size(),
                weights.config.vocab_size
            )));
        }
        if let Some(a) = &adapter {
            a.check_compatible(&weights)?;
        }
        Ok(Self { tokenizer, weights, adapter })
    }

    pub fn score_ids(&self, token_ids: &[u32]) -> Result<ScoreOutput> {
        score_tokens(&self.weights, self.adapter.as_ref(), &self.tokenizer, token_ids)
    }

    pub fn score(&self, prompt: &SerializedPrompt) -> Result<ScoreOutput> {
        self.score_ids(&prompt.token_ids)
    }

    /// Score plus the normalized importance vector from a single forward pass.
    pub fn score_with_importance(&self, prompt: &SerializedPrompt) -> Result<ScoreOutput> {
        if prompt.spans.is_empty() {
            return Err(Error::arg("prompt carries no feature spans"));
        }
        let out = forward(&self.weights, self.adapter.as_ref(), &prompt.token_ids)?;
        let last = out.final_logits();
        let mut score = ScoreOutput::from_logits(
            last[self.tokenizer.yes_id() as usize],
            last[self.tokenizer.no_id() as usize],
        );
        score.importance = Some(span_importance(out.attention.last().expect("at least one layer"), prompt)?);
        Ok(score)
    }

    /// Last-layer attention from the final position, averaged over heads,
    /// then over each feature's span tokens, renormalized to sum to one.
    pub fn feature_importance(&self, prompt: &SerializedPrompt) -> Result<Vec<f64>> {
        self.score_with_importance(prompt)
            .map(|s| s.importance.expect("importance computed"))
    }

    pub fn interpret_answer(&self, question: &str, free_text: &str) -> Result<InterpretedAnswer> {
        if question.trim().is_empty() || free_text.trim().is_empty() {
            return Err(Error::arg("question and answer must be non-empty"));
        }
        let ids = self.tokenizer.encode(&interpretation_prompt(question, free_text));
        let s = self.score_ids(&ids)?;
        Ok(InterpretedAnswer { binary: s.predicted_label, p_yes: s.p_yes, ambiguous: is_ambiguous(s.p_yes) })
    }
}

fn span_importance(attention: &ndarray::Array3<f64>, prompt: &SerializedPrompt) -> Result<Vec<f64>> {
    let t = attention.shape()[1];
    let row = attention
        .index_axis(Axis(1), t - 1)
        .mean_axis(Axis(0))
        .expect("at least one head");
    let mut raw = Vec::with_capacity(prompt.spans.len());
    for span in &prompt.spans {
        if span.start >= span.end || span.end > t {
            return Err(Error::arg(format!("span {span:?} outside the {t}-token prompt")));
        }
        let slice = row.slice(ndarray::s![span.start..span.end]);
        raw.push(slice.sum() / (span.end - span.start) as f64);
    }
    let total: f64 = raw.iter().sum();
    if !(total > 0.0) {
        return Err(Error::arg("attention on feature spans sums to zero"));
    }
    Ok(raw.into_iter().map(|v| v / total).collect())
}

/// Training pair for answer interpretation: the reply's polarity is the
/// target.
pub fn interpretation_example(tokenizer: &Tokenizer, question: &str, free_text: &str, label: u8) -> Example {
    Example::labeled(tokenizer.encode(&interpretation_prompt(question, free_text)), label, tokenizer)
}

/// Top `k` `(feature_id, importance)` pairs, highest first; ties keep
/// schema order.
pub fn top_features(importance: &[f64], feature_ids: &[u32], k: usize) -> Vec<(u32, f64)> {
    let mut pairs: Vec<(u32, f64)> = feature_ids.iter().copied().zip(importance.iter().copied()).collect();
    pairs.sort_by(|a, b| b.1.total_cmp(&a.1));
    pairs.truncate(k);
    pairs
}
