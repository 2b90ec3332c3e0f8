//! Platt's SMO: pick a KKT violator, pair it with the multiplier that
//! maximizes `|E1 - E2|` (falling back to sweeps from a seeded random start),
//! and solve the two-variable subproblem analytically.

use rand::Rng as _;

use super::{overlap, KernelSpec, SmoParams, SvmError, SvmModel};
use crate::dataset::FeatureMatrix;
use crate::seed;

/// Minimum relative change of a multiplier for a step to count.
const STEP_EPS: f64 = 1e-10;

enum Outputs {
    /// Linear kernel: primal weights, so `f(x)` costs one lookup per active column.
    Linear(Vec<f64>),
    /// Other kernels: cached `Σ αⱼ yⱼ K(xⱼ, xᵢ)` for every row.
    Cached(Vec<f64>),
}

struct Solver<'a> {
    fm: &'a FeatureMatrix,
    y: &'a [f64],
    kernel: KernelSpec,
    c: f64,
    tol: f64,
    alpha: Vec<f64>,
    bias: f64,
    outputs: Outputs,
    diag: Vec<f64>,
    rng: seed::Rng,
    steps: usize,
    max_steps: usize,
}

impl<'a> Solver<'a> {
    fn k(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return self.diag[i];
        }
        self.kernel
            .apply(overlap(self.fm.active(i), self.fm.active(j)) as f64)
    }

    fn output(&self, i: usize) -> f64 {
        match &self.outputs {
            Outputs::Linear(w) => self.fm.active(i).iter().map(|&c| w[c as usize]).sum(),
            Outputs::Cached(f) => f[i],
        }
    }

    fn error(&self, i: usize) -> f64 {
        self.output(i) + self.bias - self.y[i]
    }

    fn non_bound(&self, i: usize) -> bool {
        self.alpha[i] > 0.0 && self.alpha[i] < self.c
    }

    fn violates(&self, i: usize, e: f64) -> bool {
        let r = e * self.y[i];
        (r < -self.tol && self.alpha[i] < self.c) || (r > self.tol && self.alpha[i] > 0.0)
    }

    /// Recompute outputs from the multipliers, discarding accumulated drift.
    fn refresh(&mut self) {
        let n = self.fm.n_rows();
        match &mut self.outputs {
            Outputs::Linear(w) => {
                w.iter_mut().for_each(|x| *x = 0.0);
                for i in 0..n {
                    if self.alpha[i] > 0.0 {
                        let coef = self.alpha[i] * self.y[i];
                        for &col in self.fm.active(i) {
                            w[col as usize] += coef;
                        }
                    }
                }
            }
            Outputs::Cached(_) => {
                let support: Vec<usize> = (0..n).filter(|&j| self.alpha[j] > 0.0).collect();
                let fresh: Vec<f64> = (0..n)
                    .map(|i| {
                        support
                            .iter()
                            .map(|&j| self.alpha[j] * self.y[j] * self.k(i, j))
                            .sum()
                    })
                    .collect();
                self.outputs = Outputs::Cached(fresh);
            }
        }
    }

    fn take_step(&mut self, i1: usize, i2: usize, e2: f64) -> bool {
        if i1 == i2 {
            return false;
        }
        let (a1, a2) = (self.alpha[i1], self.alpha[i2]);
        let (y1, y2) = (self.y[i1], self.y[i2]);
        let e1 = self.error(i1);
        let s = y1 * y2;
        let c = self.c;
        let (lo, hi) = if y1 != y2 {
            ((a2 - a1).max(0.0), (c + a2 - a1).min(c))
        } else {
            ((a1 + a2 - c).max(0.0), (a1 + a2).min(c))
        };
        if hi - lo <= 0.0 {
            return false;
        }
        let k11 = self.diag[i1];
        let k22 = self.diag[i2];
        let k12 = self.k(i1, i2);
        let eta = k11 + k22 - 2.0 * k12;

        let mut new_a2 = if eta > 0.0 {
            (a2 + y2 * (e1 - e2) / eta).clamp(lo, hi)
        } else {
            // Objective (to minimize) at both ends of the segment.
            let f1 = y1 * (e1 - self.bias) - a1 * k11 - s * a2 * k12;
            let f2 = y2 * (e2 - self.bias) - s * a1 * k12 - a2 * k22;
            let obj = |a2n: f64| {
                let a1n = a1 + s * (a2 - a2n);
                a1n * f1 + a2n * f2 + 0.5 * a1n * a1n * k11 + 0.5 * a2n * a2n * k22
                    + s * a2n * a1n * k12
            };
            let (lobj, hobj) = (obj(lo), obj(hi));
            if lobj < hobj - STEP_EPS {
                lo
            } else if lobj > hobj + STEP_EPS {
                hi
            } else {
                a2
            }
        };
        let snap = 1e-12 * c;
        if new_a2 < snap {
            new_a2 = 0.0;
        } else if new_a2 > c - snap {
            new_a2 = c;
        }
        if (new_a2 - a2).abs() < STEP_EPS * (new_a2 + a2 + STEP_EPS) {
            return false;
        }
        let mut new_a1 = a1 + s * (a2 - new_a2);
        if new_a1 < snap {
            new_a1 = 0.0;
        } else if new_a1 > c - snap {
            new_a1 = c;
        }

        let d1 = y1 * (new_a1 - a1);
        let d2 = y2 * (new_a2 - a2);
        let b1 = self.bias - e1 - d1 * k11 - d2 * k12;
        let b2 = self.bias - e2 - d1 * k12 - d2 * k22;
        let new_bias = if new_a1 > 0.0 && new_a1 < c {
            b1
        } else if new_a2 > 0.0 && new_a2 < c {
            b2
        } else {
            0.5 * (b1 + b2)
        };

        if cfg!(debug_assertions) {
            let gain = -(e1 * d1 + e2 * d2) - 0.5 * (k11 * d1 * d1 + 2.0 * k12 * d1 * d2 + k22 * d2 * d2);
            let scale = 1.0 + (e1 * d1).abs() + (e2 * d2).abs();
            debug_assert!(gain >= -1e-9 * scale, "dual objective decreased by {gain}");
        }

        match &mut self.outputs {
            Outputs::Linear(w) => {
                for &col in self.fm.active(i1) {
                    w[col as usize] += d1;
                }
                for &col in self.fm.active(i2) {
                    w[col as usize] += d2;
                }
            }
            Outputs::Cached(_) => {
                let n = self.fm.n_rows();
                let delta: Vec<f64> = (0..n)
                    .map(|k| d1 * self.k(i1, k) + d2 * self.k(i2, k))
                    .collect();
                if let Outputs::Cached(f) = &mut self.outputs {
                    f.iter_mut().zip(delta).for_each(|(v, d)| *v += d);
                }
            }
        }
        self.alpha[i1] = new_a1;
        self.alpha[i2] = new_a2;
        self.bias = new_bias;
        self.steps += 1;
        true
    }

    fn examine(&mut self, i2: usize) -> bool {
        let e2 = self.error(i2);
        if !self.violates(i2, e2) {
            return false;
        }
        let n = self.fm.n_rows();

        // Second-choice heuristic over the non-bound multipliers.
        let mut best: Option<(usize, f64)> = None;
        let mut n_non_bound = 0;
        for i in 0..n {
            if self.non_bound(i) {
                n_non_bound += 1;
                let gap = (self.error(i) - e2).abs();
                if best.is_none_or(|(_, g)| gap > g) {
                    best = Some((i, gap));
                }
            }
        }
        if n_non_bound > 1 {
            if let Some((i1, _)) = best {
                if self.take_step(i1, i2, e2) {
                    return true;
                }
            }
        }

        let start = self.rng.random_range(0..n);
        for k in 0..n {
            let i1 = (start + k) % n;
            if self.non_bound(i1) && self.take_step(i1, i2, e2) {
                return true;
            }
        }
        let start = self.rng.random_range(0..n);
        for k in 0..n {
            let i1 = (start + k) % n;
            if self.take_step(i1, i2, e2) {
                return true;
            }
        }
        false
    }

    /// Platt's outer loop: alternate full sweeps and non-bound sweeps until a
    /// full sweep changes nothing. Returns the number of accepted steps.
    fn sweep_until_quiet(&mut self) -> usize {
        let n = self.fm.n_rows();
        let start_steps = self.steps;
        let mut examine_all = true;
        loop {
            let mut changed = 0;
            for i in 0..n {
                if self.steps >= self.max_steps {
                    return self.steps - start_steps;
                }
                if (examine_all || self.non_bound(i)) && self.examine(i) {
                    changed += 1;
                }
            }
            if examine_all {
                if changed == 0 {
                    break;
                }
                examine_all = false;
            } else if changed == 0 {
                examine_all = true;
            }
        }
        self.steps - start_steps
    }

    fn count_violators(&self) -> usize {
        (0..self.fm.n_rows())
            .filter(|&i| self.violates(i, self.error(i)))
            .count()
    }
}

/// Solve the soft-margin SVM dual.
///
/// Training stops when a full pass finds no KKT violation beyond `tol`
/// (`converged` is set), when `max_passes` consecutive rounds make no progress
/// on the remaining violators, or after `max_iter` accepted pair updates.
pub fn train_smo(
    features: &FeatureMatrix,
    params: &SmoParams,
    kernel: KernelSpec,
    seed: u64,
) -> Result<SvmModel, SvmError> {
    params.validate()?;
    kernel.validate()?;
    let y = features.labels();
    let n = y.len();
    if n < 2 || !y.iter().any(|&v| v > 0.0) || !y.iter().any(|&v| v < 0.0) {
        return Err(SvmError::SingleClass);
    }

    let diag: Vec<f64> = (0..n)
        .map(|i| kernel.apply(features.active(i).len() as f64))
        .collect();
    let outputs = match kernel {
        KernelSpec::Linear => Outputs::Linear(vec![0.0; features.width()]),
        _ => Outputs::Cached(vec![0.0; n]),
    };
    let mut solver = Solver {
        fm: features,
        y,
        kernel,
        c: params.c,
        tol: params.tol,
        alpha: vec![0.0; n],
        bias: 0.0,
        outputs,
        diag,
        rng: seed::derived_rng(seed, "smo", 0),
        steps: 0,
        max_steps: params.max_iter,
    };

    let mut idle_rounds = 0;
    let converged = loop {
        let progress = solver.sweep_until_quiet();
        solver.refresh();
        if solver.count_violators() == 0 {
            break true;
        }
        if solver.steps >= solver.max_steps {
            break false;
        }
        if progress == 0 {
            idle_rounds += 1;
            if idle_rounds >= params.max_passes {
                break false;
            }
        } else {
            idle_rounds = 0;
        }
    };

    Ok(SvmModel::from_solution(
        features,
        kernel,
        params.c,
        solver.alpha,
        solver.bias,
        converged,
        solver.steps,
    ))
}

/// `Σ αᵢ - ½ ΣΣ αᵢαⱼyᵢyⱼK(xᵢ,xⱼ)`, evaluated directly.
pub fn dual_objective(model: &SvmModel, features: &FeatureMatrix) -> f64 {
    let sv = &model.support;
    let quad: f64 = sv
        .iter()
        .flat_map(|a| {
            sv.iter().map(move |b| {
                a.coef * b.coef * model.kernel.apply(overlap(&a.active, &b.active) as f64)
            })
        })
        .sum();
    let _ = features;
    model.alphas.iter().sum::<f64>() - 0.5 * quad
}

/// Largest KKT violation over the training rows, measured on `y f(x)`:
/// `α = 0` needs `y f ≥ 1`, `0 < α < C` needs `y f = 1`, `α = C` needs `y f ≤ 1`.
pub fn kkt_residual(model: &SvmModel, features: &FeatureMatrix) -> f64 {
    (0..features.n_rows())
        .map(|i| {
            let margin = features.labels()[i] * model.decision_value_active(features.active(i));
            let a = model.alphas[i];
            if a <= 0.0 {
                (1.0 - margin).max(0.0)
            } else if a >= model.c {
                (margin - 1.0).max(0.0)
            } else {
                (margin - 1.0).abs()
            }
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::svm::decision_value;

    fn two_points() -> FeatureMatrix {
        // Two one-hot rows over three attributes of width 3 each, sharing one
        // category.
        FeatureMatrix::from_active(
            9,
            vec![vec![0, 3, 6], vec![1, 4, 6]],
            vec![1.0, -1.0],
        )
    }

    #[test]
    fn two_point_maximal_margin() {
        let fm = two_points();
        let params = SmoParams {
            c: 1e6,
            ..Default::default()
        };
        let m = train_smo(&fm, &params, KernelSpec::Linear, 1).unwrap();
        assert!(m.converged);
        // ||x1 - x2||^2 = 4, so alpha = 2 / 4 on both rows.
        assert!((m.alphas[0] - 0.5).abs() < 1e-12);
        assert!((m.alphas[1] - 0.5).abs() < 1e-12);
        let x1 = fm.dense_row(0);
        let x2 = fm.dense_row(1);
        let mid: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| 0.5 * (a + b)).collect();
        assert!(decision_value(&m, &mid).unwrap().abs() < 1e-6);
        assert!((decision_value(&m, &x1).unwrap() - 1.0).abs() < 1e-9);
        assert!((decision_value(&m, &x2).unwrap() + 1.0).abs() < 1e-9);
        // w = alpha (x1 - x2).
        for (c, (a, b)) in x1.iter().zip(&x2).enumerate() {
            let mut e = vec![0.0; 9];
            e[c] = 1.0;
            let wc = decision_value(&m, &e).unwrap() - m.bias;
            assert!((wc - 0.5 * (a - b)).abs() < 1e-12);
        }
    }

    #[test]
    fn single_class_rejected() {
        let fm = FeatureMatrix::from_active(2, vec![vec![0], vec![1]], vec![1.0, 1.0]);
        assert_eq!(
            train_smo(&fm, &SmoParams::default(), KernelSpec::Linear, 0).unwrap_err(),
            SvmError::SingleClass
        );
    }

    #[test]
    fn polynomial_kernel_matches_brute_force_sum() {
        let rows = vec![
            vec![0, 3, 6],
            vec![1, 4, 6],
            vec![0, 4, 7],
            vec![2, 5, 8],
            vec![1, 3, 8],
            vec![2, 3, 7],
        ];
        let fm = FeatureMatrix::from_active(9, rows, vec![1.0, -1.0, 1.0, -1.0, -1.0, 1.0]);
        let kernel = KernelSpec::Polynomial {
            degree: 2,
            coef0: 1.0,
        };
        let m = train_smo(&fm, &SmoParams { c: 10.0, ..Default::default() }, kernel, 3).unwrap();
        assert!(m.converged);
        let sum_ay: f64 = m.alphas.iter().zip(&m.labels).map(|(a, y)| a * y).sum();
        assert!(sum_ay.abs() < 1e-8);
        assert!(kkt_residual(&m, &fm) <= 1e-3);
        let probe = [0.2, 0.0, 1.0, 0.5, 0.0, 0.0, 0.0, 1.0, 0.3];
        let brute: f64 = (0..fm.n_rows())
            .map(|i| {
                let xi = fm.dense_row(i);
                let dot: f64 = xi.iter().zip(&probe).map(|(a, b)| a * b).sum();
                m.alphas[i] * m.labels[i] * kernel.apply(dot)
            })
            .sum::<f64>()
            + m.bias;
        assert!((decision_value(&m, &probe).unwrap() - brute).abs() < 1e-12);
    }
}
