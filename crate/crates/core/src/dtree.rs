//! C4.5-style decision trees over categorical attributes.
//!
//! Splits are multiway on the category values observed at a node and are
//! chosen by gain ratio. Growth is followed by pessimistic-error subtree
//! replacement at the configured confidence. Leaves report class frequencies,
//! optionally Laplace-smoothed.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dataset::{CrashRecord, Dataset};
use crate::model::{ClassDistribution, ProbabilisticClassifier};

/// `[not_fatal, fatal]`.
pub type ClassCounts = [usize; 2];

const MIN_GAIN: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeParams {
    pub min_leaf: usize,
    /// Confidence for pessimistic pruning, in `(0, 0.5]`.
    pub pruning_confidence: f64,
    pub use_laplace: bool,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            min_leaf: 2,
            pruning_confidence: 0.25,
            use_laplace: true,
        }
    }
}

impl TreeParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.min_leaf == 0 {
            return Err("min_leaf must be >= 1".into());
        }
        if !(self.pruning_confidence > 0.0 && self.pruning_confidence <= 0.5) {
            return Err(format!(
                "pruning_confidence {} is outside (0, 0.5]",
                self.pruning_confidence
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Leaf {
        counts: ClassCounts,
    },
    Split {
        attribute: usize,
        name: String,
        /// Counts of all training rows reaching this node; also the
        /// distribution used for categories with no child.
        counts: ClassCounts,
        #[serde(with = "children_as_pairs")]
        children: BTreeMap<u16, Node>,
    },
}

/// Children as `[category, node]` pairs; integer map keys would become
/// strings in JSON and fail to read back inside a tagged enum.
mod children_as_pairs {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use super::Node;

    pub fn serialize<S: Serializer>(map: &BTreeMap<u16, Node>, s: S) -> Result<S::Ok, S::Error> {
        let pairs: Vec<(&u16, &Node)> = map.iter().collect();
        pairs.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<u16, Node>, D::Error> {
        Ok(Vec::<(u16, Node)>::deserialize(d)?.into_iter().collect())
    }
}

impl Node {
    pub fn counts(&self) -> ClassCounts {
        match self {
            Node::Leaf { counts } | Node::Split { counts, .. } => *counts,
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Node::Leaf { .. } => 0,
            Node::Split { children, .. } => {
                1 + children.values().map(Node::depth).max().unwrap_or(0)
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        match self {
            Node::Leaf { .. } => 1,
            Node::Split { children, .. } => children.values().map(Node::n_leaves).sum(),
        }
    }

    /// Sum over leaves of observed errors plus the pessimistic correction.
    pub fn pessimistic_error(&self, confidence: f64) -> f64 {
        match self {
            Node::Leaf { counts } => leaf_error_estimate(*counts, confidence),
            Node::Split { children, .. } => children
                .values()
                .map(|c| c.pessimistic_error(confidence))
                .sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub root: Node,
    pub laplace: bool,
}

impl DecisionTree {
    pub fn depth(&self) -> usize {
        self.root.depth()
    }

    pub fn n_leaves(&self) -> usize {
        self.root.n_leaves()
    }

    /// Attribute index of the root split, if any.
    pub fn root_attribute(&self) -> Option<usize> {
        match &self.root {
            Node::Split { attribute, .. } => Some(*attribute),
            Node::Leaf { .. } => None,
        }
    }
}

impl ProbabilisticClassifier for DecisionTree {
    fn predict_proba(&self, record: &CrashRecord) -> ClassDistribution {
        tree_predict_proba(self, record)
    }
}

/// Shannon entropy in bits; `0 log 0 = 0`.
pub fn entropy(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let n = total as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

/// `(information gain, split information)` of a category-by-class table.
/// Empty rows are ignored.
pub fn gain_and_split_info(table: &[ClassCounts]) -> (f64, f64) {
    let mut parent = [0usize; 2];
    for row in table {
        parent[0] += row[0];
        parent[1] += row[1];
    }
    let n = (parent[0] + parent[1]) as f64;
    if n == 0.0 {
        return (0.0, 0.0);
    }
    let mut conditional = 0.0;
    let mut split_info = 0.0;
    for row in table {
        let size = (row[0] + row[1]) as f64;
        if size > 0.0 {
            let w = size / n;
            conditional += w * entropy(row);
            split_info -= w * w.log2();
        }
    }
    (entropy(&parent) - conditional, split_info)
}

/// Gain divided by split information; 0 when split information is 0.
pub fn ratio_of(table: &[ClassCounts]) -> f64 {
    let (gain, split) = gain_and_split_info(table);
    if split <= 0.0 {
        0.0
    } else {
        gain / split
    }
}

fn contingency(dataset: &Dataset, rows: &[usize], attribute: usize) -> Vec<ClassCounts> {
    let mut table = vec![[0usize; 2]; dataset.schema().inputs()[attribute].len()];
    for &i in rows {
        let r = &dataset.rows()[i];
        table[r.values[attribute] as usize][r.label.index()] += 1;
    }
    table
}

/// Gain ratio of splitting all of `dataset` on `attribute` (index in schema).
pub fn gain_ratio(dataset: &Dataset, attribute: usize) -> f64 {
    let rows: Vec<usize> = (0..dataset.len()).collect();
    ratio_of(&contingency(dataset, &rows, attribute))
}

/// Whether a split on this table is allowed: at least two branches must hold
/// `min_leaf` rows, and the gain must be positive.
pub fn admissible(table: &[ClassCounts], min_leaf: usize) -> bool {
    let big = table
        .iter()
        .filter(|r| r[0] + r[1] >= min_leaf)
        .count();
    big >= 2 && gain_and_split_info(table).0 > MIN_GAIN
}

/// Best admissible attribute by gain ratio; ties keep schema order.
fn choose_split(
    dataset: &Dataset,
    rows: &[usize],
    params: &TreeParams,
) -> Option<(usize, Vec<ClassCounts>)> {
    let mut best: Option<(usize, f64, Vec<ClassCounts>)> = None;
    for a in 0..dataset.schema().n_inputs() {
        let table = contingency(dataset, rows, a);
        if !admissible(&table, params.min_leaf) {
            continue;
        }
        let ratio = ratio_of(&table);
        if best.as_ref().is_none_or(|b| ratio > b.1) {
            best = Some((a, ratio, table));
        }
    }
    best.map(|(a, _, t)| (a, t))
}

fn counts_of(dataset: &Dataset, rows: &[usize]) -> ClassCounts {
    let mut c = [0usize; 2];
    for &i in rows {
        c[dataset.rows()[i].label.index()] += 1;
    }
    c
}

fn grow(dataset: &Dataset, rows: &[usize], params: &TreeParams) -> Node {
    let counts = counts_of(dataset, rows);
    let n = counts[0] + counts[1];
    if counts[0] == 0 || counts[1] == 0 || n < 2 * params.min_leaf {
        return Node::Leaf { counts };
    }
    let Some((attribute, table)) = choose_split(dataset, rows, params) else {
        return Node::Leaf { counts };
    };
    let mut parts: Vec<Vec<usize>> = table
        .iter()
        .map(|c| Vec::with_capacity(c[0] + c[1]))
        .collect();
    for &i in rows {
        parts[dataset.rows()[i].values[attribute] as usize].push(i);
    }
    let children = parts
        .iter()
        .enumerate()
        .filter(|(_, p)| !p.is_empty())
        .map(|(cat, p)| (cat as u16, grow(dataset, p, params)))
        .collect();
    Node::Split {
        attribute,
        name: dataset.schema().inputs()[attribute].name().to_string(),
        counts,
        children,
    }
}

fn standard_normal() -> &'static Normal {
    static N: OnceLock<Normal> = OnceLock::new();
    N.get_or_init(|| Normal::new(0.0, 1.0).expect("standard normal"))
}

/// Extra errors to add to `errors` observed among `n` rows: the gap to the
/// upper confidence limit of the binomial error rate at `confidence`.
pub fn added_errors(n: f64, errors: f64, confidence: f64) -> f64 {
    if n <= 0.0 {
        return 0.0;
    }
    if errors < 1.0 {
        let base = n * (1.0 - confidence.powf(1.0 / n));
        if errors == 0.0 {
            return base;
        }
        return base + errors * (added_errors(n, 1.0, confidence) - base);
    }
    if errors + 0.5 >= n {
        return (n - errors).max(0.0);
    }
    let z = standard_normal().inverse_cdf(1.0 - confidence);
    let f = (errors + 0.5) / n;
    let r = (f + z * z / (2.0 * n)
        + z * (f / n - f * f / n + z * z / (4.0 * n * n)).sqrt())
        / (1.0 + z * z / n);
    r * n - errors
}

fn leaf_error_estimate(counts: ClassCounts, confidence: f64) -> f64 {
    let n = (counts[0] + counts[1]) as f64;
    let errors = counts[0].min(counts[1]) as f64;
    errors + added_errors(n, errors, confidence)
}

/// Bottom-up subtree replacement: a subtree collapses to a leaf when the
/// leaf's pessimistic error does not exceed the subtree's.
fn prune(node: Node, confidence: f64) -> Node {
    match node {
        Node::Leaf { .. } => node,
        Node::Split {
            attribute,
            name,
            counts,
            children,
        } => {
            let children: BTreeMap<u16, Node> = children
                .into_iter()
                .map(|(k, c)| (k, prune(c, confidence)))
                .collect();
            let subtree: f64 = children
                .values()
                .map(|c| c.pessimistic_error(confidence))
                .sum();
            if leaf_error_estimate(counts, confidence) <= subtree {
                Node::Leaf { counts }
            } else {
                Node::Split {
                    attribute,
                    name,
                    counts,
                    children,
                }
            }
        }
    }
}

/// Grow without pruning, on the given row indices (duplicates allowed).
pub fn grow_tree(dataset: &Dataset, rows: &[usize], params: &TreeParams) -> DecisionTree {
    DecisionTree {
        root: grow(dataset, rows, params),
        laplace: params.use_laplace,
    }
}

/// Train on the given row indices (duplicates allowed, as in a bootstrap).
pub fn train_tree_on(dataset: &Dataset, rows: &[usize], params: &TreeParams) -> DecisionTree {
    let grown = grow(dataset, rows, params);
    DecisionTree {
        root: prune(grown, params.pruning_confidence),
        laplace: params.use_laplace,
    }
}

/// Train on every row of `dataset`. Deterministic given row order.
pub fn train_tree(dataset: &Dataset, params: &TreeParams) -> DecisionTree {
    let rows: Vec<usize> = (0..dataset.len()).collect();
    train_tree_on(dataset, &rows, params)
}

fn distribution(counts: ClassCounts, laplace: bool) -> ClassDistribution {
    let (neg, pos) = (counts[0] as f64, counts[1] as f64);
    let n = neg + pos;
    if laplace {
        ClassDistribution::new((neg + 1.0) / (n + 2.0), (pos + 1.0) / (n + 2.0))
    } else if n > 0.0 {
        ClassDistribution::new(neg / n, pos / n)
    } else {
        ClassDistribution::new(0.5, 0.5)
    }
}

/// Walk to a leaf; a category with no child yields the node's own
/// distribution.
pub fn tree_predict_proba(tree: &DecisionTree, record: &CrashRecord) -> ClassDistribution {
    let mut node = &tree.root;
    loop {
        match node {
            Node::Leaf { counts } => return distribution(*counts, tree.laplace),
            Node::Split {
                attribute,
                counts,
                children,
                ..
            } => match children.get(&record.values[*attribute]) {
                Some(child) => node = child,
                None => return distribution(*counts, tree.laplace),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::dataset::{Class, Schema};

    fn ds(rows: Vec<(Vec<u16>, Class)>) -> Dataset {
        Dataset::new(
            Arc::new(Schema::lrap()),
            rows.into_iter()
                .map(|(v, c)| CrashRecord::new(v, c))
                .collect(),
        )
        .unwrap()
    }

    fn row(overrides: &[(usize, u16)]) -> Vec<u16> {
        let mut v = vec![0u16; 9];
        for &(a, x) in overrides {
            v[a] = x;
        }
        v
    }

    #[test]
    fn entropy_values() {
        assert_eq!(entropy(&[10, 0]), 0.0);
        assert_eq!(entropy(&[7, 7]), 1.0);
        assert_eq!(entropy(&[]), 0.0);
        let p: f64 = 9.0 / 14.0;
        let q: f64 = 5.0 / 14.0;
        let direct = -p * p.log2() - q * q.log2();
        assert!((entropy(&[9, 5]) - direct).abs() < 1e-15);
        assert!((entropy(&[9, 5]) - 0.9403).abs() < 1e-4);
    }

    #[test]
    fn constant_attribute_has_zero_ratio() {
        let d = ds(vec![
            (row(&[]), Class::Fatal),
            (row(&[]), Class::NotFatal),
            (row(&[]), Class::NotFatal),
        ]);
        assert_eq!(gain_ratio(&d, 0), 0.0);
    }

    #[test]
    fn perfect_balanced_split() {
        // Four rows, attribute 6 separates the classes into two equal halves.
        let d = ds(vec![
            (row(&[(6, 2)]), Class::Fatal),
            (row(&[(6, 2)]), Class::Fatal),
            (row(&[(6, 0)]), Class::NotFatal),
            (row(&[(6, 0)]), Class::NotFatal),
        ]);
        let (gain, split) = gain_and_split_info(&contingency(&d, &[0, 1, 2, 3], 6));
        assert_eq!(gain, 1.0);
        assert_eq!(split, 1.0);
        assert_eq!(gain_ratio(&d, 6), 1.0);
    }

    #[test]
    fn pure_dataset_is_a_leaf() {
        let d = ds(vec![(row(&[(1, 3)]), Class::NotFatal), (row(&[]), Class::NotFatal)]);
        let t = train_tree(&d, &TreeParams::default());
        assert_eq!(t.root, Node::Leaf { counts: [2, 0] });
    }

    #[test]
    fn single_attribute_determines_class() {
        // Twelve rows: Injury Severity decides the label; other columns vary.
        let mut rows = Vec::new();
        for i in 0..12u16 {
            let sev = i % 3;
            let label = if sev == 2 { Class::Fatal } else { Class::NotFatal };
            rows.push((row(&[(0, i % 12), (2, i % 7), (3, (i * 5) % 24), (6, sev)]), label));
        }
        let d = ds(rows);
        let t = train_tree(&d, &TreeParams::default());
        assert_eq!(t.depth(), 1);
        assert_eq!(t.root_attribute(), Some(6));
        for r in d.rows() {
            assert_eq!(t.predict(r), r.label);
        }
    }

    #[test]
    fn laplace_leaf_probabilities() {
        let t = DecisionTree {
            root: Node::Leaf { counts: [8, 2] },
            laplace: true,
        };
        let p = t.predict_proba(&CrashRecord::new(row(&[]), Class::Fatal));
        assert_eq!((p.not_fatal, p.fatal), (0.75, 0.25));
        let t = DecisionTree {
            root: Node::Leaf { counts: [5, 5] },
            laplace: true,
        };
        let p = t.predict_proba(&CrashRecord::new(row(&[]), Class::Fatal));
        assert_eq!((p.not_fatal, p.fatal), (0.5, 0.5));
    }

    #[test]
    fn unseen_category_uses_fallback() {
        let mut children = BTreeMap::new();
        children.insert(0, Node::Leaf { counts: [9, 0] });
        children.insert(1, Node::Leaf { counts: [0, 9] });
        let t = DecisionTree {
            root: Node::Split {
                attribute: 5,
                name: "Crash Type".into(),
                counts: [9, 9],
                children,
            },
            laplace: false,
        };
        let p = t.predict_proba(&CrashRecord::new(row(&[(5, 7)]), Class::Fatal));
        assert_eq!((p.not_fatal, p.fatal), (0.5, 0.5));
        let p = t.predict_proba(&CrashRecord::new(row(&[(5, 1)]), Class::Fatal));
        assert_eq!(p.fatal, 1.0);
    }

    #[test]
    fn added_errors_reference_points() {
        // n = 6, e = 0 at CF 0.25: 6 * (1 - 0.25^(1/6)).
        let base = 6.0 * (1.0 - 0.25f64.powf(1.0 / 6.0));
        assert!((added_errors(6.0, 0.0, 0.25) - base).abs() < 1e-12);
        assert!((added_errors(4.0, 3.6, 0.25) - 0.4).abs() < 1e-12);
        // Upper limit of the error rate always exceeds the observed rate.
        for (n, e) in [(10.0, 1.0), (100.0, 20.0), (50.0, 5.0)] {
            assert!(added_errors(n, e, 0.25) > 0.0);
        }
    }
}
