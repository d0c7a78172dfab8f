//! Patient records, questionnaire schema, synthetic cohorts, splits and
//! balanced few-shot sampling.

mod io;
mod schema;
mod split;
mod synthetic;

pub use io::{dataset_fingerprint, load_dataset, load_dataset_with_schema, write_dataset};
pub use schema::{FeatureSpec, QuestionnaireSchema};
pub use split::{sample_few_shot, split_dataset, DatasetSplit};
pub use synthetic::{generate_synthetic_dataset, SyntheticSpec};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary questionnaire answers for one patient plus the optional severity
/// outcome.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PatientRecord {
    pub values: Vec<u8>,
    pub label: Option<u8>,
}

impl PatientRecord {
    pub fn new(values: Vec<u8>, label: Option<u8>) -> Result<Self> {
        if let Some(v) = values.iter().find(|&&v| v > 1) {
            return Err(Error::arg(format!("feature value {v} is not binary")));
        }
        if matches!(label, Some(l) if l > 1) {
            return Err(Error::arg("label is not binary"));
        }
        Ok(Self { values, label })
    }

    pub fn unlabeled(values: Vec<u8>) -> Result<Self> {
        Self::new(values, None)
    }

    pub fn check_schema(&self, schema: &QuestionnaireSchema) -> Result<()> {
        if self.values.len() != schema.d() {
            return Err(Error::arg(format!(
                "record has {} values but the schema has {} features",
                self.values.len(),
                schema.d()
            )));
        }
        if self.values.iter().any(|&v| v > 1) {
            return Err(Error::arg("record holds a non-binary value"));
        }
        Ok(())
    }
}

/// Labels of a labelled cohort; fails on the first unlabelled record.
pub fn labels_of(records: &[PatientRecord]) -> Result<Vec<u8>> {
    records
        .iter()
        .enumerate()
        .map(|(i, r)| r.label.ok_or_else(|| Error::arg(format!("record {i} has no label"))))
        .collect()
}
