//! Probability outputs shared by every learner.

use serde::{Deserialize, Serialize};

use crate::dataset::{Class, CrashRecord};

/// `(P(NotFatal), P(Fatal))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassDistribution {
    pub not_fatal: f64,
    pub fatal: f64,
}

impl ClassDistribution {
    pub fn new(not_fatal: f64, fatal: f64) -> Self {
        Self { not_fatal, fatal }
    }

    pub fn from_fatal(p: f64) -> Self {
        Self::new(1.0 - p, p)
    }

    pub fn get(&self, class: Class) -> f64 {
        match class {
            Class::Fatal => self.fatal,
            Class::NotFatal => self.not_fatal,
        }
    }

    /// Argmax; an exact tie goes to NotFatal.
    pub fn predicted(&self) -> Class {
        if self.fatal > self.not_fatal {
            Class::Fatal
        } else {
            Class::NotFatal
        }
    }

    pub fn sum(&self) -> f64 {
        self.not_fatal + self.fatal
    }

    /// Component-wise mean. Each component is summed in ascending order, so
    /// the result does not depend on the order of `items`.
    pub fn mean(items: &[ClassDistribution]) -> Self {
        let avg = |mut xs: Vec<f64>| {
            xs.sort_by(f64::total_cmp);
            xs.iter().sum::<f64>() / xs.len() as f64
        };
        Self {
            not_fatal: avg(items.iter().map(|d| d.not_fatal).collect()),
            fatal: avg(items.iter().map(|d| d.fatal).collect()),
        }
    }
}

/// A fitted model that scores crash records.
pub trait ProbabilisticClassifier: Send + Sync {
    fn predict_proba(&self, record: &CrashRecord) -> ClassDistribution;

    fn predict(&self, record: &CrashRecord) -> Class {
        self.predict_proba(record).predicted()
    }

    /// Names of the members of a composite model, in member order.
    fn member_names(&self) -> Vec<String> {
        Vec::new()
    }

    /// Distributions of each member, aligned with [`member_names`].
    ///
    /// [`member_names`]: ProbabilisticClassifier::member_names
    fn member_probas(&self, _record: &CrashRecord) -> Vec<ClassDistribution> {
        Vec::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tie_goes_to_not_fatal() {
        assert_eq!(ClassDistribution::new(0.5, 0.5).predicted(), Class::NotFatal);
        assert_eq!(ClassDistribution::new(0.4, 0.6).predicted(), Class::Fatal);
    }

    #[test]
    fn mean_is_order_free() {
        let a = ClassDistribution::new(0.9, 0.1);
        let b = ClassDistribution::new(0.5, 0.5);
        let c = ClassDistribution::new(0.1, 0.9);
        let m = ClassDistribution::mean(&[a, b, c]);
        assert!((m.fatal - 0.5).abs() < 1e-15 && (m.not_fatal - 0.5).abs() < 1e-15);
        assert_eq!(m, ClassDistribution::mean(&[c, a, b]));
    }
}
