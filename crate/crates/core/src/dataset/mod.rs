//! Crash-record schema, CSV ingestion, encoding, splitting and synthesis.

mod csv_io;
mod encode;
mod schema;
mod split;
mod synth;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::spatial::GeoPoint;
pub use csv_io::{parse_csv, read_csv_file, write_csv, write_csv_file};
pub use encode::{column_offsets, encode_record, one_hot_encode, FeatureMatrix};
pub use schema::*;
pub use split::{stratified_split, stratified_split_indices};
pub use synth::{generate_synthetic, DependencyPlan, PlantedEffect, Synthesizer};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("{}value {value:?} is outside the domain of {attribute:?}", line.map(|l| format!("line {l}: ")).unwrap_or_default())]
    Domain {
        attribute: String,
        value: String,
        line: Option<u64>,
    },
    #[error("header: {0}")]
    Header(String),
    #[error("stratification: {0}")]
    Stratification(String),
    #[error("degenerate class balance: {0}")]
    DegenerateClass(String),
    #[error("empty dataset")]
    Empty,
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Binary outcome; `Fatal` is the positive (minority) class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Class {
    NotFatal,
    Fatal,
}

impl Class {
    pub const ALL: [Class; 2] = [Class::NotFatal, Class::Fatal];

    /// `+1` for Fatal, `-1` for NotFatal.
    pub fn sign(self) -> f64 {
        match self {
            Class::Fatal => 1.0,
            Class::NotFatal => -1.0,
        }
    }

    pub fn from_sign(y: f64) -> Self {
        if y > 0.0 {
            Class::Fatal
        } else {
            Class::NotFatal
        }
    }

    /// Index into per-class arrays: NotFatal = 0, Fatal = 1.
    pub fn index(self) -> usize {
        match self {
            Class::NotFatal => 0,
            Class::Fatal => 1,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Class::NotFatal => "not_fatal",
            Class::Fatal => "fatal",
        }
    }

    pub fn parse(raw: &str) -> Option<Self> {
        match normalize_label(raw).as_str() {
            "fatal" => Some(Class::Fatal),
            "not_fatal" | "notfatal" => Some(Class::NotFatal),
            _ => None,
        }
    }

    pub fn other(self) -> Self {
        match self {
            Class::NotFatal => Class::Fatal,
            Class::Fatal => Class::NotFatal,
        }
    }
}

/// One crash: a category index per schema input, the outcome, and an
/// optional location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrashRecord {
    pub values: Vec<u16>,
    pub label: Class,
    pub location: Option<GeoPoint>,
}

impl CrashRecord {
    pub fn new(values: Vec<u16>, label: Class) -> Self {
        Self {
            values,
            label,
            location: None,
        }
    }

    pub fn with_location(mut self, location: GeoPoint) -> Self {
        self.location = Some(location);
        self
    }

    /// Build from `(attribute, label)` pairs; every schema input must be given.
    pub fn from_labels(
        schema: &Schema,
        pairs: &[(&str, &str)],
        label: Class,
    ) -> Result<Self, DatasetError> {
        let mut values = vec![None; schema.n_inputs()];
        for (attr, value) in pairs {
            let a = schema.attribute_index(attr).ok_or_else(|| {
                DatasetError::InvalidSchema(format!("unknown attribute {attr:?}"))
            })?;
            let spec = &schema.inputs()[a];
            values[a] = Some(spec.index_of(value).ok_or_else(|| DatasetError::Domain {
                attribute: spec.name().to_string(),
                value: value.to_string(),
                line: None,
            })?);
        }
        let values = values
            .into_iter()
            .zip(schema.inputs())
            .map(|(v, spec)| {
                v.ok_or_else(|| {
                    DatasetError::InvalidSchema(format!("missing attribute {:?}", spec.name()))
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(Self::new(values, label))
    }

    pub fn value_label<'s>(&self, schema: &'s Schema, attribute: usize) -> &'s str {
        schema.inputs()[attribute].label(self.values[attribute])
    }
}

/// Immutable, schema-validated collection of crash records.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: Arc<Schema>,
    rows: Vec<CrashRecord>,
}

impl Dataset {
    pub fn new(schema: Arc<Schema>, rows: Vec<CrashRecord>) -> Result<Self, DatasetError> {
        for (i, row) in rows.iter().enumerate() {
            validate_record(&schema, row).map_err(|e| match e {
                DatasetError::Domain {
                    attribute, value, ..
                } => DatasetError::Domain {
                    attribute,
                    value,
                    line: Some(i as u64 + 1),
                },
                other => other,
            })?;
        }
        Ok(Self { schema, rows })
    }

    /// Subset by row indices, in the order given.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            schema: Arc::clone(&self.schema),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }

    /// Rows already validated against the same schema.
    pub(crate) fn from_trusted(schema: Arc<Schema>, rows: Vec<CrashRecord>) -> Self {
        Self { schema, rows }
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn schema_arc(&self) -> &Arc<Schema> {
        &self.schema
    }

    pub fn rows(&self) -> &[CrashRecord] {
        &self.rows
    }

    pub fn into_rows(self) -> Vec<CrashRecord> {
        self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn labels(&self) -> Vec<Class> {
        self.rows.iter().map(|r| r.label).collect()
    }

    /// `[not_fatal, fatal]` counts.
    pub fn class_counts(&self) -> [usize; 2] {
        let mut counts = [0; 2];
        for r in &self.rows {
            counts[r.label.index()] += 1;
        }
        counts
    }

    /// The rarer class; `None` unless both classes are present. Equal counts
    /// resolve to `Fatal`.
    pub fn minority_class(&self) -> Option<Class> {
        let [neg, pos] = self.class_counts();
        match (neg, pos) {
            (0, _) | (_, 0) => None,
            (neg, pos) if pos <= neg => Some(Class::Fatal),
            _ => Some(Class::NotFatal),
        }
    }
}

pub(crate) fn validate_record(schema: &Schema, row: &CrashRecord) -> Result<(), DatasetError> {
    if row.values.len() != schema.n_inputs() {
        return Err(DatasetError::InvalidSchema(format!(
            "record has {} values, schema has {} inputs",
            row.values.len(),
            schema.n_inputs()
        )));
    }
    for (v, spec) in row.values.iter().zip(schema.inputs()) {
        if *v as usize >= spec.len() {
            return Err(DatasetError::Domain {
                attribute: spec.name().to_string(),
                value: v.to_string(),
                line: None,
            });
        }
    }
    if let Some(loc) = row.location {
        loc.validate()
            .map_err(|e| DatasetError::InvalidSchema(e.to_string()))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_helpers() {
        assert_eq!(Class::parse("FATAL"), Some(Class::Fatal));
        assert_eq!(Class::parse("Not Fatal"), Some(Class::NotFatal));
        assert_eq!(Class::parse("not_fatal"), Some(Class::NotFatal));
        assert_eq!(Class::parse("maybe"), None);
        assert_eq!(Class::Fatal.sign(), 1.0);
        assert_eq!(Class::from_sign(-1.0), Class::NotFatal);
    }

    #[test]
    fn dataset_rejects_out_of_domain_values() {
        let schema = Arc::new(Schema::lrap());
        let mut values = vec![0u16; 9];
        values[3] = 24;
        let err = Dataset::new(schema, vec![CrashRecord::new(values, Class::Fatal)]).unwrap_err();
        assert!(err.to_string().contains("Hour of Crash"), "{err}");
    }

    #[test]
    fn minority_requires_both_classes() {
        let schema = Arc::new(Schema::lrap());
        let r = |c| CrashRecord::new(vec![0; 9], c);
        let ds = Dataset::new(schema.clone(), vec![r(Class::NotFatal), r(Class::NotFatal)]).unwrap();
        assert_eq!(ds.minority_class(), None);
        let ds = Dataset::new(schema, vec![r(Class::NotFatal), r(Class::Fatal), r(Class::Fatal)])
            .unwrap();
        assert_eq!(ds.minority_class(), Some(Class::NotFatal));
        assert_eq!(ds.class_counts(), [1, 2]);
    }
}
