use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Characters that carry grammar in serialized prompts and therefore cannot
/// appear inside a feature name or value word.
pub(crate) const RESERVED_CHARS: &[char] = &[',', '.', '?', '!', ';', ':', '='];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    /// 1-based position in the questionnaire.
    pub id: u32,
    pub name: String,
    pub question_text: String,
    /// Renderings of the values 0 and 1.
    #[serde(default = "default_value_words")]
    pub value_words: [String; 2],
}

fn default_value_words() -> [String; 2] {
    ["no".to_string(), "yes".to_string()]
}

impl FeatureSpec {
    pub fn new(id: u32, name: &str, question_text: &str) -> Self {
        Self {
            id,
            name: name.to_string(),
            question_text: question_text.to_string(),
            value_words: default_value_words(),
        }
    }

    pub fn value_word(&self, value: u8) -> &str {
        &self.value_words[usize::from(value != 0)]
    }
}

/// Ordered questionnaire. Feature order defines serialization order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<FeatureSpec>", into = "Vec<FeatureSpec>")]
pub struct QuestionnaireSchema {
    features: Vec<FeatureSpec>,
}

impl QuestionnaireSchema {
    pub fn new(features: Vec<FeatureSpec>) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::Schema("schema needs at least one feature".into()));
        }
        let mut seen_ids = std::collections::HashSet::new();
        let mut seen_names = std::collections::HashSet::new();
        for f in &features {
            if !seen_ids.insert(f.id) {
                return Err(Error::Schema(format!("duplicate feature id {}", f.id)));
            }
            if !seen_names.insert(f.name.as_str()) {
                return Err(Error::Schema(format!("duplicate feature name {:?}", f.name)));
            }
            check_words(&f.name, "feature name")?;
            if f.question_text.trim().is_empty() {
                return Err(Error::Schema(format!("feature {} has an empty question", f.id)));
            }
            for w in &f.value_words {
                if w.is_empty() || w.contains(char::is_whitespace) || w.contains(RESERVED_CHARS) {
                    return Err(Error::Schema(format!(
                        "value word {w:?} of feature {} must be a single plain word",
                        f.id
                    )));
                }
            }
            if f.value_words[0] == f.value_words[1] {
                return Err(Error::Schema(format!("feature {} has identical value words", f.id)));
            }
        }
        Ok(Self { features })
    }

    pub fn features(&self) -> &[FeatureSpec] {
        &self.features
    }

    pub fn d(&self) -> usize {
        self.features.len()
    }

    pub fn feature(&self, id: u32) -> Option<&FeatureSpec> {
        self.features.iter().find(|f| f.id == id)
    }

    /// Index of a feature id in schema order.
    pub fn position(&self, id: u32) -> Option<usize> {
        self.features.iter().position(|f| f.id == id)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serializes")
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// The built-in 15-question pediatric COVID-19 questionnaire.
    ///
    /// Features 9, 12, 13, 14 and 15 carry the names used in the original
    /// study; the remaining ten are illustrative stand-ins.
    pub fn covid_default() -> Self {
        let rows: [(&str, &str); 15] = [
            ("fever", "Has the patient had a fever?"),
            ("age under two", "Is the patient younger than two years old?"),
            ("chronic lung disease", "Does the patient have a chronic lung disease?"),
            ("asthma", "Does the patient have asthma?"),
            ("obesity", "Has the patient been told they have obesity?"),
            ("heart disease", "Does the patient have a heart condition?"),
            ("shortness of breath", "Has the patient had shortness of breath?"),
            ("fast breathing", "Is the patient breathing faster than usual?"),
            ("cough", "Has the patient had a cough?"),
            ("sore throat", "Has the patient had a sore throat?"),
            ("diarrhea", "Has the patient had diarrhea?"),
            ("nausea or vomiting", "Has the patient had nausea or vomiting?"),
            ("lungs check", "Did the lungs check show abnormal sounds?"),
            ("eye redness", "Has the patient had eye redness?"),
            ("COVID-19 antibody test", "Was the COVID-19 antibody test positive?"),
        ];
        let features = rows
            .iter()
            .enumerate()
            .map(|(i, (name, q))| FeatureSpec::new(i as u32 + 1, name, q))
            .collect();
        Self::new(features).expect("built-in schema is valid")
    }
}

impl TryFrom<Vec<FeatureSpec>> for QuestionnaireSchema {
    type Error = Error;

    fn try_from(features: Vec<FeatureSpec>) -> Result<Self> {
        Self::new(features)
    }
}

impl From<QuestionnaireSchema> for Vec<FeatureSpec> {
    fn from(schema: QuestionnaireSchema) -> Self {
        schema.features
    }
}

fn check_words(text: &str, what: &str) -> Result<()> {
    if text.is_empty() {
        return Err(Error::Schema(format!("{what} is empty")));
    }
    if text.contains(RESERVED_CHARS) {
        return Err(Error::Schema(format!("{what} {text:?} contains reserved punctuation")));
    }
    if text.split(' ').any(str::is_empty) || text.contains(|c: char| c.is_whitespace() && c != ' ') {
        return Err(Error::Schema(format!("{what} {text:?} must be words separated by single spaces")));
    }
    Ok(())
}
