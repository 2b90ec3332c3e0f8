use rand::seq::SliceRandom;

use super::{Class, Dataset, DatasetError};
use crate::seed;

/// Stratified train/test partition of row indices.
///
/// The test size is `floor(test_fraction * n + 0.5)`; it is shared between the
/// classes by largest-remainder allocation (ties to NotFatal), and each class's
/// rows are shuffled with their own derived stream. Both index lists are sorted.
pub fn stratified_split_indices(
    labels: &[Class],
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>), DatasetError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(DatasetError::Stratification(format!(
            "test fraction {test_fraction} is outside (0, 1)"
        )));
    }
    let n = labels.len();
    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, c) in labels.iter().enumerate() {
        by_class[c.index()].push(i);
    }
    if by_class.iter().any(Vec::is_empty) {
        return Err(DatasetError::Stratification(
            "both classes must be present".into(),
        ));
    }
    let n_test = (test_fraction * n as f64 + 0.5).floor() as usize;
    if n_test == 0 || n_test >= n {
        return Err(DatasetError::Stratification(format!(
            "test size {n_test} leaves an empty side for n = {n}"
        )));
    }

    let mut quota = [0usize; 2];
    let mut remainders = [(0usize, 0usize); 2];
    for c in 0..2 {
        let scaled = n_test * by_class[c].len();
        quota[c] = scaled / n;
        remainders[c] = (scaled % n, c);
    }
    let mut left = n_test - quota[0] - quota[1];
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, c) in &remainders {
        if left == 0 {
            break;
        }
        quota[c] += 1;
        left -= 1;
    }

    let mut train = Vec::with_capacity(n - n_test);
    let mut test = Vec::with_capacity(n_test);
    for (c, members) in by_class.iter_mut().enumerate() {
        members.shuffle(&mut seed::derived_rng(seed, "split", c as u64));
        test.extend_from_slice(&members[..quota[c]]);
        train.extend_from_slice(&members[quota[c]..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Stratified `(train, test)` datasets; rows keep their original order.
pub fn stratified_split(
    dataset: &Dataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset), DatasetError> {
    let (train, test) = stratified_split_indices(&dataset.labels(), test_fraction, seed)?;
    Ok((dataset.select(&train), dataset.select(&test)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labels(neg: usize, pos: usize) -> Vec<Class> {
        let mut v = vec![Class::NotFatal; neg];
        v.extend(vec![Class::Fatal; pos]);
        v
    }

    fn count(labels: &[Class], idx: &[usize], c: Class) -> usize {
        idx.iter().filter(|&&i| labels[i] == c).count()
    }

    #[test]
    fn ninety_five_five_split() {
        let l = labels(95, 5);
        let (train, test) = stratified_split_indices(&l, 0.2, 11).unwrap();
        assert_eq!(test.len(), 20);
        assert_eq!(count(&l, &test, Class::NotFatal), 19);
        assert_eq!(count(&l, &test, Class::Fatal), 1);
        assert_eq!(train.len(), 80);
    }

    #[test]
    fn full_size_split() {
        let l = labels(8482 - 424, 424);
        let (_, test) = stratified_split_indices(&l, 0.2, 1).unwrap();
        assert_eq!(test.len(), 1696);
        assert_eq!(count(&l, &test, Class::Fatal), 85);
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let l = labels(200, 30);
        let a = stratified_split_indices(&l, 0.25, 5).unwrap();
        assert_eq!(a, stratified_split_indices(&l, 0.25, 5).unwrap());
        assert_ne!(a, stratified_split_indices(&l, 0.25, 6).unwrap());
    }

    #[test]
    fn single_class_is_an_error() {
        let l = labels(10, 0);
        assert!(matches!(
            stratified_split_indices(&l, 0.2, 0),
            Err(DatasetError::Stratification(_))
        ));
        assert!(stratified_split_indices(&labels(5, 5), 0.01, 0).is_err());
        assert!(stratified_split_indices(&labels(5, 5), 1.0, 0).is_err());
    }

    proptest! {
        #[test]
        fn partition_and_class_shares(neg in 1usize..300, pos in 1usize..60, frac in 0.05f64..0.6, seed: u64) {
            let l = labels(neg, pos);
            let n = l.len();
            let n_test = (frac * n as f64 + 0.5).floor() as usize;
            prop_assume!(n_test >= 1 && n_test < n);
            let (train, test) = stratified_split_indices(&l, frac, seed).unwrap();
            prop_assert_eq!(test.len(), n_test);
            let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            for (c, total) in [(Class::NotFatal, neg), (Class::Fatal, pos)] {
                let share = count(&l, &test, c) as f64 / total as f64;
                prop_assert!((share - frac).abs() <= 1.0 / total as f64 + 1e-12);
            }
        }
    }
}
