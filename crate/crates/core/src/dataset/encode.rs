use serde::{Deserialize, Serialize};

use super::{CrashRecord, Dataset, DatasetError, Schema};

/// One-hot view of a dataset.
///
/// Rows are stored sparsely as the active column of each input attribute, in
/// schema order; every row has exactly `n_inputs` ones. Labels are `+1` for
/// Fatal and `-1` for NotFatal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    width: usize,
    n_inputs: usize,
    offsets: Vec<usize>,
    active: Vec<u32>,
    labels: Vec<f64>,
}

impl FeatureMatrix {
    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    /// Total one-hot width.
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn n_inputs(&self) -> usize {
        self.n_inputs
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    /// Active column indices of row `i`, ascending.
    pub fn active(&self, i: usize) -> &[u32] {
        &self.active[i * self.n_inputs..(i + 1) * self.n_inputs]
    }

    /// Column of `(attribute, category)`.
    pub fn column_index(&self, attribute: usize, category: u16) -> usize {
        self.offsets[attribute] + category as usize
    }

    pub fn dense_row(&self, i: usize) -> Vec<f64> {
        let mut row = vec![0.0; self.width];
        for &c in self.active(i) {
            row[c as usize] = 1.0;
        }
        row
    }

    /// Build directly from active-column rows (sorted here).
    pub fn from_active(width: usize, mut rows: Vec<Vec<u32>>, labels: Vec<f64>) -> Self {
        rows.iter_mut().for_each(|r| r.sort_unstable());
        let n_inputs = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == n_inputs));
        assert!(rows.iter().flatten().all(|&c| (c as usize) < width));
        assert_eq!(rows.len(), labels.len());
        Self {
            width,
            n_inputs,
            offsets: Vec::new(),
            active: rows.into_iter().flatten().collect(),
            labels,
        }
    }
}

/// First one-hot column of each input attribute.
pub fn column_offsets(schema: &Schema) -> Vec<usize> {
    schema
        .inputs()
        .iter()
        .scan(0, |acc, spec| {
            let at = *acc;
            *acc += spec.len();
            Some(at)
        })
        .collect()
}

/// Active one-hot columns of a single record.
pub fn encode_record(schema: &Schema, record: &CrashRecord) -> Vec<u32> {
    column_offsets(schema)
        .iter()
        .zip(&record.values)
        .map(|(&off, &v)| (off + v as usize) as u32)
        .collect()
}

pub fn one_hot_encode(dataset: &Dataset) -> Result<FeatureMatrix, DatasetError> {
    if dataset.is_empty() {
        return Err(DatasetError::Empty);
    }
    let schema = dataset.schema();
    let offsets = column_offsets(schema);
    let mut active = Vec::with_capacity(dataset.len() * schema.n_inputs());
    for row in dataset.rows() {
        active.extend(
            offsets
                .iter()
                .zip(&row.values)
                .map(|(&off, &v)| (off + v as usize) as u32),
        );
    }
    Ok(FeatureMatrix {
        width: schema.one_hot_width(),
        n_inputs: schema.n_inputs(),
        offsets,
        active,
        labels: dataset.rows().iter().map(|r| r.label.sign()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::dataset::Class;

    #[test]
    fn nine_ones_per_row_and_width_106() {
        let schema = Arc::new(Schema::lrap());
        let rows = vec![
            CrashRecord::new(vec![0, 30, 6, 23, 1, 10, 2, 5, 9], Class::Fatal),
            CrashRecord::new(vec![0, 30, 6, 23, 1, 10, 2, 5, 9], Class::Fatal),
            CrashRecord::new(vec![1; 9], Class::NotFatal),
        ];
        let ds = Dataset::new(schema, rows).unwrap();
        let fm = one_hot_encode(&ds).unwrap();
        assert_eq!(fm.width(), 12 + 31 + 7 + 24 + 2 + 11 + 3 + 6 + 10);
        assert_eq!(fm.width(), 106);
        for i in 0..fm.n_rows() {
            assert_eq!(fm.dense_row(i).iter().sum::<f64>(), 9.0);
        }
        assert_eq!(fm.dense_row(0), fm.dense_row(1));
        assert_eq!(fm.active(0)[0], 0);
        assert_eq!(fm.active(0)[8], 105);
        assert_eq!(fm.labels(), &[1.0, 1.0, -1.0]);
        assert_eq!(fm.column_index(1, 0), 12);
        assert_eq!(encode_record(ds.schema(), &ds.rows()[2]), fm.active(2));
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let ds = Dataset::new(Arc::new(Schema::lrap()), vec![]).unwrap();
        assert!(matches!(one_hot_encode(&ds), Err(DatasetError::Empty)));
    }
}
