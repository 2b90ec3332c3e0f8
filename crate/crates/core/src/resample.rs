//! Hybrid rebalancing: categorical SMOTE on the minority class, then random
//! under-sampling of the majority class to a target class ratio.
//!
//! Every input attribute is categorical, so SMOTE works in its nominal form:
//! neighbours are found by Hamming distance over attribute values and each
//! attribute of a synthetic record is copied from either the source record or
//! the chosen neighbour with equal probability.

use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Class, CrashRecord, Dataset};
use crate::seed;

#[derive(Debug, Error, PartialEq)]
pub enum ResampleError {
    #[error("invalid resample plan: {0}")]
    InvalidPlan(String),
    #[error("SMOTE needs at least 2 minority records, got {0}")]
    InsufficientMinority(usize),
    #[error("cannot draw {target} records from {available}")]
    Size { target: usize, available: usize },
    #[error("rebalancing needs both classes present")]
    SingleClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResamplePlan {
    /// Synthetic records as a percentage of the minority count.
    pub smote_percent: f64,
    /// Upper bound on the neighbourhood size.
    pub k_neighbors: usize,
    pub target_majority_fraction: f64,
    pub seed: u64,
}

impl Default for ResamplePlan {
    fn default() -> Self {
        Self {
            smote_percent: 100.0,
            k_neighbors: 5,
            target_majority_fraction: 0.83,
            seed: 0,
        }
    }
}

impl ResamplePlan {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// No oversampling, and a majority fraction equal to `train`'s own.
    pub fn pass_through(train: &Dataset) -> Self {
        let [neg, pos] = train.class_counts();
        Self {
            smote_percent: 0.0,
            target_majority_fraction: neg.max(pos) as f64 / (neg + pos) as f64,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ResampleError> {
        if !(self.smote_percent >= 0.0 && self.smote_percent.is_finite()) {
            return Err(ResampleError::InvalidPlan(format!(
                "smote_percent {} must be finite and >= 0",
                self.smote_percent
            )));
        }
        if self.k_neighbors == 0 {
            return Err(ResampleError::InvalidPlan("k_neighbors must be >= 1".into()));
        }
        let f = self.target_majority_fraction;
        if !(0.5..1.0).contains(&f) {
            return Err(ResampleError::InvalidPlan(format!(
                "target_majority_fraction {f} is outside [0.5, 1)"
            )));
        }
        Ok(())
    }
}

fn hamming(a: &[u16], b: &[u16]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

/// The `k` nearest other records by Hamming distance; ties by row index.
fn neighbours(pool: &[CrashRecord], source: usize, k: usize) -> Vec<usize> {
    let mut cand: Vec<(usize, usize)> = pool
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != source)
        .map(|(i, r)| (hamming(&pool[source].values, &r.values), i))
        .collect();
    cand.sort_unstable();
    cand.truncate(k);
    cand.into_iter().map(|(_, i)| i).collect()
}

/// Number of synthetic records SMOTE emits for `minority` records.
pub fn synthetic_count(minority: usize, percent: f64) -> usize {
    (percent * minority as f64 / 100.0).floor() as usize
}

/// Generate `floor(percent / 100 * |minority|)` synthetic minority records.
///
/// Sources cycle through a seeded permutation of the minority records, so at
/// 100% every record seeds exactly one synthetic. `k` is capped at
/// `|minority| - 1`. Synthetic records carry no location.
pub fn smote(
    minority: &[CrashRecord],
    percent: f64,
    k: usize,
    seed: u64,
) -> Result<Vec<CrashRecord>, ResampleError> {
    if !(percent >= 0.0 && percent.is_finite()) || k == 0 {
        return Err(ResampleError::InvalidPlan(format!(
            "percent {percent} / k {k} out of range"
        )));
    }
    let n_synth = synthetic_count(minority.len(), percent);
    if n_synth == 0 {
        return Ok(Vec::new());
    }
    let m = minority.len();
    if m < 2 {
        return Err(ResampleError::InsufficientMinority(m));
    }
    let k = k.min(m - 1);

    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut seed::derived_rng(seed, "smote-order", 0));
    let mut nn_cache: Vec<Option<Vec<usize>>> = vec![None; m];

    let mut out = Vec::with_capacity(n_synth);
    for j in 0..n_synth {
        let src = order[j % m];
        let nn = nn_cache[src].get_or_insert_with(|| neighbours(minority, src, k));
        let mut rng = seed::derived_rng(seed, "smote", j as u64);
        let nb = &minority[nn[rng.random_range(0..nn.len())]];
        let values = minority[src]
            .values
            .iter()
            .zip(&nb.values)
            .map(|(&a, &b)| if rng.random::<bool>() { a } else { b })
            .collect();
        out.push(CrashRecord::new(values, minority[src].label));
    }
    Ok(out)
}

/// Uniform random subset of `target_count` records; input order is kept.
pub fn undersample(
    majority: &[CrashRecord],
    target_count: usize,
    seed: u64,
) -> Result<Vec<CrashRecord>, ResampleError> {
    if target_count > majority.len() {
        return Err(ResampleError::Size {
            target: target_count,
            available: majority.len(),
        });
    }
    let mut rng = seed::derived_rng(seed, "undersample", 0);
    let mut picked = index::sample(&mut rng, majority.len(), target_count).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| majority[i].clone()).collect())
}

/// Majority count that puts `minority_after` at `1 - majority_fraction`.
pub fn majority_target(minority_after: usize, majority_fraction: f64) -> usize {
    (minority_after as f64 * majority_fraction / (1.0 - majority_fraction)).round() as usize
}

/// SMOTE the minority class, then trim the majority class to the plan's ratio.
///
/// All original minority records are kept. The majority class is never grown:
/// when it already falls short of the target it is kept whole. Output order is
/// kept originals in input order, then synthetic records.
pub fn rebalance(train: &Dataset, plan: &ResamplePlan) -> Result<Dataset, ResampleError> {
    plan.validate()?;
    let minority_class = train.minority_class().ok_or(ResampleError::SingleClass)?;
    let minority: Vec<CrashRecord> = train
        .rows()
        .iter()
        .filter(|r| r.label == minority_class)
        .cloned()
        .collect();
    let synthetic = smote(
        &minority,
        plan.smote_percent,
        plan.k_neighbors,
        seed::derive(plan.seed, "rebalance-smote", 0),
    )?;

    let majority_idx: Vec<usize> = train
        .rows()
        .iter()
        .enumerate()
        .filter(|(_, r)| r.label != minority_class)
        .map(|(i, _)| i)
        .collect();
    let target = majority_target(minority.len() + synthetic.len(), plan.target_majority_fraction)
        .min(majority_idx.len());
    let mut keep = vec![false; train.len()];
    let mut rng = seed::derived_rng(plan.seed, "rebalance-undersample", 0);
    for slot in index::sample(&mut rng, majority_idx.len(), target) {
        keep[majority_idx[slot]] = true;
    }

    let mut rows: Vec<CrashRecord> = train
        .rows()
        .iter()
        .zip(&keep)
        .filter(|(r, &k)| k || r.label == minority_class)
        .map(|(r, _)| r.clone())
        .collect();
    rows.extend(synthetic);
    Ok(Dataset::from_trusted(train.schema_arc().clone(), rows))
}

/// Fraction of `class` rows in `dataset`.
pub fn class_fraction(dataset: &Dataset, class: Class) -> f64 {
    dataset.class_counts()[class.index()] as f64 / dataset.len() as f64
}
