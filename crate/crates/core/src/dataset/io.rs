use std::path::Path;

use sha2::{Digest, Sha256};

use super::{FeatureSpec, PatientRecord, QuestionnaireSchema};
use crate::error::{Error, Result};

/// Reads a dataset CSV (`<feature columns...>,label`) and derives the schema
/// from its header: each column name becomes a feature name.
pub fn load_dataset(path: &Path) -> Result<(QuestionnaireSchema, Vec<PatientRecord>)> {
    let text = std::fs::read_to_string(path)?;
    parse_dataset(&text)
}

/// Like [`load_dataset`] but names features from an existing schema; the CSV
/// only has to agree on the column count.
pub fn load_dataset_with_schema(path: &Path, schema: &QuestionnaireSchema) -> Result<Vec<PatientRecord>> {
    let (header, records) = load_dataset(path)?;
    if header.d() != schema.d() {
        return Err(Error::Schema(format!(
            "dataset has {} feature columns, schema has {}",
            header.d(),
            schema.d()
        )));
    }
    Ok(records)
}

pub(crate) fn parse_dataset(text: &str) -> Result<(QuestionnaireSchema, Vec<PatientRecord>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| Error::Row { row: 1, message: e.to_string() })?
        .clone();
    let columns: Vec<&str> = header.iter().collect();
    match columns.last() {
        Some(&"label") => {}
        _ => {
            return Err(Error::Row { row: 1, message: "missing trailing `label` column".into() });
        }
    }
    let names = &columns[..columns.len() - 1];
    let features = names
        .iter()
        .enumerate()
        .map(|(i, name)| FeatureSpec::new(i as u32 + 1, name, name))
        .collect();
    let schema = QuestionnaireSchema::new(features)?;

    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::Row { row: line, message: e.to_string() })?;
        if row.len() != columns.len() {
            return Err(Error::Row {
                row: line,
                message: format!("expected {} fields, found {}", columns.len(), row.len()),
            });
        }
        let mut values = Vec::with_capacity(schema.d());
        for (cell, name) in row.iter().zip(names) {
            values.push(parse_bit(cell).ok_or_else(|| Error::Row {
                row: line,
                message: format!("column {name}: value {cell:?} is not 0 or 1"),
            })?);
        }
        let label_cell = &row[columns.len() - 1];
        let label = if label_cell.is_empty() {
            None
        } else {
            Some(parse_bit(label_cell).ok_or_else(|| Error::Row {
                row: line,
                message: format!("label {label_cell:?} is not 0 or 1"),
            })?)
        };
        records.push(PatientRecord { values, label });
    }
    Ok((schema, records))
}

fn parse_bit(cell: &str) -> Option<u8> {
    match cell {
        "0" => Some(0),
        "1" => Some(1),
        _ => None,
    }
}

/// Canonical CSV bytes: header `f1,...,fd,label`, one record per line.
pub(crate) fn dataset_csv(d: usize, records: &[PatientRecord]) -> String {
    let mut out = String::new();
    for j in 1..=d {
        out.push_str(&format!("f{j},"));
    }
    out.push_str("label\n");
    for r in records {
        for v in &r.values {
            out.push(if *v == 1 { '1' } else { '0' });
            out.push(',');
        }
        if let Some(l) = r.label {
            out.push(if l == 1 { '1' } else { '0' });
        }
        out.push('\n');
    }
    out
}

pub fn write_dataset(path: &Path, schema: &QuestionnaireSchema, records: &[PatientRecord]) -> Result<()> {
    for r in records {
        r.check_schema(schema)?;
    }
    std::fs::write(path, dataset_csv(schema.d(), records))?;
    Ok(())
}

/// SHA-256 over the canonical CSV form of the records.
pub fn dataset_fingerprint(records: &[PatientRecord]) -> String {
    let d = records.first().map_or(0, |r| r.values.len());
    hex::encode(Sha256::digest(dataset_csv(d, records).as_bytes()))
}
