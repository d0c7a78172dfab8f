//! Model bundle directory: everything needed to serve risk scores.
//!
//! ```text
//! manifest.json   format version, d, template, base fingerprint, adapter flag
//! schema.json     questionnaire schema
//! tokenizer.json  vocabulary as a JSON list
//! base.weights    base model container
//! adapter.lora    optional adapter container
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::QuestionnaireSchema;
use crate::error::{Error, Result};
use crate::microlm::io::{decode_weights, encode_adapter, encode_weights, load_adapter};
use crate::microlm::{MicroLm, ScoreOutput, Tokenizer};
use crate::serialization::{serialize_answers, SerializedPrompt, TemplateKind};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SCHEMA_FILE: &str = "schema.json";
pub const TOKENIZER_FILE: &str = "tokenizer.json";
pub const BASE_FILE: &str = "base.weights";
pub const ADAPTER_FILE: &str = "adapter.lora";
pub const BUNDLE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleManifest {
    pub format_version: u32,
    pub d: usize,
    pub template: TemplateKind,
    pub base_fingerprint: String,
    pub adapter: bool,
}

#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub manifest: BundleManifest,
    pub schema: QuestionnaireSchema,
    pub model: MicroLm,
}

fn pretty_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable") + "\n"
}

fn bundle_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Format { path: path.to_path_buf(), message: message.into() }
}

impl ModelBundle {
    pub fn new(schema: QuestionnaireSchema, template: TemplateKind, model: MicroLm) -> Result<Self> {
        // Fingerprint what a reader will see after storage rounding.
        let stored = decode_weights(&encode_weights(&model.weights), Path::new("<memory>"))?;
        let manifest = BundleManifest {
            format_version: BUNDLE_VERSION,
            d: schema.d(),
            template,
            base_fingerprint: stored.fingerprint(),
            adapter: model.adapter.is_some(),
        };
        let bundle = Self { manifest, schema, model: MicroLm { weights: stored, ..model } };
        bundle.check(Path::new("<memory>"))?;
        Ok(bundle)
    }

    pub fn template(&self) -> TemplateKind {
        self.manifest.template
    }

    pub fn tokenizer(&self) -> &Tokenizer {
        &self.model.tokenizer
    }

    /// Every answer pattern must tokenize without unknown words and fit the
    /// context window.
    fn check(&self, dir: &Path) -> Result<()> {
        if self.manifest.format_version != BUNDLE_VERSION {
            return Err(bundle_err(dir, format!("unsupported bundle version {}", self.manifest.format_version)));
        }
        if self.manifest.d != self.schema.d() {
            return Err(bundle_err(
                dir,
                format!("manifest declares d = {} but the schema has {} features", self.manifest.d, self.schema.d()),
            ));
        }
        if self.manifest.adapter != self.model.adapter.is_some() {
            return Err(bundle_err(dir, "manifest adapter flag disagrees with bundle contents"));
        }
        for fill in [0u8, 1] {
            let prompt = self.prompt(&vec![fill; self.schema.d()]).map_err(|e| bundle_err(dir, e.to_string()))?;
            let max = self.model.weights.config.context_length;
            if prompt.token_ids.len() > max {
                return Err(bundle_err(dir, format!("prompts need {} tokens, context is {max}", prompt.token_ids.len())));
            }
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(MANIFEST_FILE), pretty_json(&self.manifest))?;
        fs::write(dir.join(SCHEMA_FILE), self.schema.to_json())?;
        fs::write(dir.join(TOKENIZER_FILE), pretty_json(&self.model.tokenizer))?;
        fs::write(dir.join(BASE_FILE), encode_weights(&self.model.weights))?;
        let adapter_path = dir.join(ADAPTER_FILE);
        match &self.model.adapter {
            Some(a) => fs::write(&adapter_path, encode_adapter(a, self.model.weights.config.precision))?,
            None if adapter_path.exists() => fs::remove_file(&adapter_path)?,
            None => {}
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| fs::read_to_string(dir.join(name)).map_err(|e| bundle_err(&dir.join(name), e.to_string()));
        let manifest: BundleManifest =
            serde_json::from_str(&read(MANIFEST_FILE)?).map_err(|e| bundle_err(&dir.join(MANIFEST_FILE), e.to_string()))?;
        let schema = QuestionnaireSchema::from_json(&read(SCHEMA_FILE)?)
            .map_err(|e| bundle_err(&dir.join(SCHEMA_FILE), e.to_string()))?;
        let tokenizer: Tokenizer = serde_json::from_str(&read(TOKENIZER_FILE)?)
            .map_err(|e| bundle_err(&dir.join(TOKENIZER_FILE), e.to_string()))?;
        let base_path = dir.join(BASE_FILE);
        let weights = decode_weights(&fs::read(&base_path)?, &base_path)?;
        if weights.fingerprint() != manifest.base_fingerprint {
            return Err(bundle_err(&base_path, "base weights do not match the manifest fingerprint"));
        }
        let adapter_path = dir.join(ADAPTER_FILE);
        let adapter = if manifest.adapter { Some(load_adapter(&adapter_path)?) } else { None };
        let model = MicroLm::new(tokenizer, weights, adapter).map_err(|e| bundle_err(dir, e.to_string()))?;
        let bundle = Self { manifest, schema, model };
        bundle.check(dir)?;
        Ok(bundle)
    }

    /// The prompt for binary answers given in schema order.
    pub fn prompt(&self, answers: &[u8]) -> Result<SerializedPrompt> {
        serialize_answers(answers, &self.schema, self.template(), &self.model.tokenizer)
    }

    /// Risk score with feature importance for binary answers.
    pub fn assess(&self, answers: &[u8]) -> Result<ScoreOutput> {
        self.model.score_with_importance(&self.prompt(answers)?)
    }
}
