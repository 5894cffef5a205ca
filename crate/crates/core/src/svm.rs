//! Soft-margin RBF-kernel SVM trained by sequential minimal optimization.
//!
//! Fraud is coded +1. Class imbalance is handled with per-class box
//! constraints: fraud rows get `C * class_weight_fraud`, non-fraud rows
//! get `C`. The solver works on the dual
//!
//! ```text
//! max  sum_i a_i - 1/2 sum_ij a_i a_j y_i y_j K(x_i, x_j)
//! s.t. sum_i a_i y_i = 0,  0 <= a_i <= C_i
//! ```
//!
//! picking the maximal-violating pair with second-order working-set
//! selection and clipping each pair update analytically to the box.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Label, Standardizer};
use crate::error::{Error, Result};
use crate::par::*;

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SVMParams {
    pub cost: f64,
    pub gamma: f64,
    /// Multiplier on `cost` for fraud rows. `None` uses
    /// `n_nonfraud / n_fraud` of the training set.
    pub class_weight_fraud: Option<f64>,
    /// Stopping threshold on the maximal KKT violation gap.
    pub tolerance: f64,
    /// Hard cap on pair updates; exceeding it is a training error.
    pub max_iterations: usize,
    /// Kernel-row cache budget in MiB.
    pub cache_mb: usize,
}

impl Default for SVMParams {
    fn default() -> Self {
        Self {
            cost: 1.0,
            gamma: 0.077,
            class_weight_fraud: None,
            tolerance: 1e-3,
            max_iterations: 10_000_000,
            cache_mb: 256,
        }
    }
}

impl SVMParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.cost > 0.0 && self.cost.is_finite()) {
            return Err(Error::input("cost must be positive"));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::input("gamma must be positive"));
        }
        if let Some(w) = self.class_weight_fraud {
            if !(w >= 1.0 && w.is_finite()) {
                return Err(Error::input("class_weight_fraud must be at least 1"));
            }
        }
        if self.tolerance.is_nan() || self.tolerance <= 0.0 {
            return Err(Error::input("tolerance must be positive"));
        }
        Ok(())
    }
}

/// `exp(-gamma * |x - z|^2)`.
pub fn rbf_kernel(x: &[f64], z: &[f64], gamma: f64) -> Result<f64> {
    if x.len() != z.len() {
        return Err(Error::input(format!(
            "kernel dimension mismatch: {} vs {}",
            x.len(),
            z.len()
        )));
    }
    Ok(rbf(x, z, gamma))
}

#[inline]
fn rbf(x: &[f64], z: &[f64], gamma: f64) -> f64 {
    let d2: f64 = x.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
    (-gamma * d2).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SVMModel {
    pub params: SVMParams,
    /// Resolved fraud-row cost multiplier.
    pub class_weight_fraud: f64,
    pub feature_names: Vec<String>,
    /// Applied by [`SVMModel::decision_raw`] before the kernel.
    pub standardizer: Option<Standardizer>,
    pub support_vectors: Vec<Vec<f64>>,
    /// `alpha_i * y_i` per support vector.
    pub coefficients: Vec<f64>,
    pub bias: f64,
}

/// `f(x) = sum_i alpha_i y_i K(x_i, x) + b` for an already standardized `x`.
pub fn decision_function(m: &SVMModel, x: &[f64]) -> f64 {
    m.support_vectors
        .iter()
        .zip(&m.coefficients)
        .map(|(sv, c)| c * rbf(sv, x, m.params.gamma))
        .sum::<f64>()
        + m.bias
}

/// Fraud iff `f >= 0`.
pub fn classify_svm(f: f64) -> Label {
    if f >= 0.0 {
        Label::Fraud
    } else {
        Label::NonFraud
    }
}

impl SVMModel {
    /// Decision value for a raw feature row.
    pub fn decision_raw(&self, x: &[f64]) -> f64 {
        match &self.standardizer {
            Some(s) => decision_function(self, &s.transform_row(x)),
            None => decision_function(self, x),
        }
    }

    pub fn predict(&self, d: &Dataset) -> Vec<Label> {
        (0..d.len())
            .into_par_iter()
            .map(|i| classify_svm(self.decision_raw(d.row(i))))
            .collect()
    }
}

/// Solver diagnostics. `alpha` is indexed like the training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoReport {
    pub alpha: Vec<f64>,
    pub upper: Vec<f64>,
    pub iterations: usize,
    /// Dual objective after each accepted update (empty unless traced).
    pub objective: Vec<f64>,
}

pub fn train_svm(train: &Dataset, p: &SVMParams) -> Result<SVMModel> {
    train_svm_detailed(train, p, false).map(|(m, _)| m)
}

/// Trains on `train` as given; inputs are expected to be standardized.
pub fn train_svm_detailed(
    train: &Dataset,
    p: &SVMParams,
    trace_objective: bool,
) -> Result<(SVMModel, SmoReport)> {
    train.require_both_classes()?;
    p.validate()?;
    let (n_fraud, n_nonfraud) = train.class_counts();
    let weight = p
        .class_weight_fraud
        .unwrap_or(n_nonfraud as f64 / n_fraud as f64)
        .max(1.0);
    let y: Vec<f64> = train
        .labels()
        .iter()
        .map(|l| if l.is_fraud() { 1.0 } else { -1.0 })
        .collect();
    let upper: Vec<f64> = y
        .iter()
        .map(|&yi| if yi > 0.0 { p.cost * weight } else { p.cost })
        .collect();

    let mut solver = Smo::new(train, &y, &upper, p);
    let objective = solver.run(trace_objective)?;
    let rho = solver.rho();

    let mut support_vectors = Vec::new();
    let mut coefficients = Vec::new();
    for (i, &a) in solver.alpha.iter().enumerate() {
        if a > 0.0 {
            support_vectors.push(train.row(i).to_vec());
            coefficients.push(a * y[i]);
        }
    }
    let model = SVMModel {
        params: p.clone(),
        class_weight_fraud: weight,
        feature_names: train.feature_names().to_vec(),
        standardizer: None,
        support_vectors,
        coefficients,
        bias: -rho,
    };
    let (alpha, iterations) = (solver.alpha, solver.iterations);
    let report = SmoReport {
        alpha,
        upper,
        iterations,
        objective,
    };
    Ok((model, report))
}

/// Fits a standardizer on `train`, trains on the transformed rows and
/// stores the standardizer in the model.
pub fn train_svm_standardized(train: &Dataset, p: &SVMParams) -> Result<SVMModel> {
    let s = Standardizer::fit(train)?;
    let mut model = train_svm(&s.transform(train)?, p)?;
    model.standardizer = Some(s);
    Ok(model)
}

/// Largest KKT violation over the training rows, measured on `y_i f(x_i)`:
/// rows at the lower bound need `y f >= 1`, rows at the upper bound need
/// `y f <= 1`, free rows need `y f = 1`.
pub fn kkt_violation(m: &SVMModel, train: &Dataset, report: &SmoReport) -> f64 {
    (0..train.len())
        .map(|i| {
            let y = if train.label(i).is_fraud() { 1.0 } else { -1.0 };
            let margin = y * decision_function(m, train.row(i));
            let (a, c) = (report.alpha[i], report.upper[i]);
            if a <= 0.0 {
                (1.0 - margin).max(0.0)
            } else if a >= c {
                (margin - 1.0).max(0.0)
            } else {
                (margin - 1.0).abs()
            }
        })
        .fold(0.0, f64::max)
}

/// LRU cache of kernel rows.
struct KernelCache<'a> {
    data: &'a Dataset,
    gamma: f64,
    rows: HashMap<usize, (Arc<Vec<f64>>, u64)>,
    capacity: usize,
    clock: u64,
}

impl<'a> KernelCache<'a> {
    fn new(data: &'a Dataset, gamma: f64, cache_mb: usize) -> Self {
        let row_bytes = (data.len() * std::mem::size_of::<f64>()).max(1);
        let capacity = ((cache_mb << 20) / row_bytes).max(2);
        Self {
            data,
            gamma,
            rows: HashMap::new(),
            capacity,
            clock: 0,
        }
    }

    fn row(&mut self, i: usize) -> Arc<Vec<f64>> {
        self.clock += 1;
        if let Some(entry) = self.rows.get_mut(&i) {
            entry.1 = self.clock;
            return entry.0.clone();
        }
        if self.rows.len() >= self.capacity {
            if let Some(&oldest) = self
                .rows
                .iter()
                .min_by_key(|(_, (_, t))| *t)
                .map(|(k, _)| k)
            {
                self.rows.remove(&oldest);
            }
        }
        let xi = self.data.row(i);
        let (data, gamma) = (self.data, self.gamma);
        let row: Vec<f64> = (0..data.len())
            .into_par_iter()
            .map(|t| rbf(xi, data.row(t), gamma))
            .collect();
        let row = Arc::new(row);
        self.rows.insert(i, (row.clone(), self.clock));
        row
    }
}

struct Smo<'a> {
    y: &'a [f64],
    upper: &'a [f64],
    alpha: Vec<f64>,
    grad: Vec<f64>,
    cache: KernelCache<'a>,
    tolerance: f64,
    max_iterations: usize,
    iterations: usize,
}

impl<'a> Smo<'a> {
    fn new(d: &'a Dataset, y: &'a [f64], upper: &'a [f64], p: &SVMParams) -> Self {
        Self {
            y,
            upper,
            alpha: vec![0.0; y.len()],
            grad: vec![-1.0; y.len()],
            cache: KernelCache::new(d, p.gamma, p.cache_mb),
            tolerance: p.tolerance,
            max_iterations: p.max_iterations,
            iterations: 0,
        }
    }

    fn at_upper(&self, t: usize) -> bool {
        self.alpha[t] >= self.upper[t]
    }

    fn at_lower(&self, t: usize) -> bool {
        self.alpha[t] <= 0.0
    }

    /// `sum a - 1/2 a'Qa`, using `grad = Qa - 1`.
    fn objective(&self) -> f64 {
        -0.5 * self
            .alpha
            .iter()
            .zip(&self.grad)
            .map(|(a, g)| a * (g - 1.0))
            .sum::<f64>()
    }

    /// Second-order working-set selection. `None` once the violation gap
    /// drops below the tolerance.
    fn select(&mut self) -> Option<(usize, usize, Arc<Vec<f64>>)> {
        let n = self.y.len();
        let mut gmax = f64::NEG_INFINITY;
        let mut i = None;
        for t in 0..n {
            let v = -self.y[t] * self.grad[t];
            let movable = if self.y[t] > 0.0 {
                !self.at_upper(t)
            } else {
                !self.at_lower(t)
            };
            if movable && v >= gmax {
                gmax = v;
                i = Some(t);
            }
        }
        let i = i?;
        let k_i = self.cache.row(i);
        let mut gmin = f64::INFINITY;
        let mut best = f64::INFINITY;
        let mut j = None;
        for t in 0..n {
            let movable = if self.y[t] > 0.0 {
                !self.at_lower(t)
            } else {
                !self.at_upper(t)
            };
            if !movable {
                continue;
            }
            let v = -self.y[t] * self.grad[t];
            gmin = gmin.min(v);
            let diff = gmax - v;
            if diff > 0.0 {
                // K(x, x) = 1 for the RBF kernel
                let quad = (2.0 - 2.0 * k_i[t]).max(TAU);
                let obj = -(diff * diff) / quad;
                if obj <= best {
                    best = obj;
                    j = Some(t);
                }
            }
        }
        if gmax - gmin < self.tolerance {
            return None;
        }
        j.map(|j| (i, j, k_i))
    }

    fn run(&mut self, trace: bool) -> Result<Vec<f64>> {
        let mut objective = Vec::new();
        while let Some((i, j, k_i)) = self.select() {
            if self.iterations >= self.max_iterations {
                return Err(Error::NotConverged(self.max_iterations));
            }
            self.iterations += 1;
            let k_j = self.cache.row(j);
            self.update_pair(i, j, &k_i, &k_j);
            if trace {
                objective.push(self.objective());
            }
        }
        Ok(objective)
    }

    fn update_pair(&mut self, i: usize, j: usize, k_i: &[f64], k_j: &[f64]) {
        let (yi, yj) = (self.y[i], self.y[j]);
        let (ci, cj) = (self.upper[i], self.upper[j]);
        let (old_i, old_j) = (self.alpha[i], self.alpha[j]);
        let quad = (2.0 - 2.0 * k_i[j]).max(TAU);
        let (mut ai, mut aj) = (old_i, old_j);
        if yi != yj {
            let delta = (-self.grad[i] - self.grad[j]) / quad;
            let diff = ai - aj;
            ai += delta;
            aj += delta;
            if diff > 0.0 {
                if aj < 0.0 {
                    aj = 0.0;
                    ai = diff;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = -diff;
            }
            if diff > ci - cj {
                if ai > ci {
                    ai = ci;
                    aj = ci - diff;
                }
            } else if aj > cj {
                aj = cj;
                ai = cj + diff;
            }
        } else {
            let delta = (self.grad[i] - self.grad[j]) / quad;
            let sum = ai + aj;
            ai -= delta;
            aj += delta;
            if sum > ci {
                if ai > ci {
                    ai = ci;
                    aj = sum - ci;
                }
            } else if aj < 0.0 {
                aj = 0.0;
                ai = sum;
            }
            if sum > cj {
                if aj > cj {
                    aj = cj;
                    ai = sum - cj;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = sum;
            }
        }
        self.alpha[i] = ai;
        self.alpha[j] = aj;
        let (di, dj) = ((ai - old_i) * yi, (aj - old_j) * yj);
        for (t, g) in self.grad.iter_mut().enumerate() {
            *g += self.y[t] * (k_i[t] * di + k_j[t] * dj);
        }
    }

    /// Offset from the free multipliers, or the midpoint of the feasible
    /// interval when none is free.
    fn rho(&self) -> f64 {
        let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut sum_free, mut n_free) = (0.0, 0usize);
        for t in 0..self.y.len() {
            let yg = self.y[t] * self.grad[t];
            if self.at_upper(t) {
                if self.y[t] < 0.0 {
                    ub = ub.min(yg)
                } else {
                    lb = lb.max(yg)
                }
            } else if self.at_lower(t) {
                if self.y[t] > 0.0 {
                    ub = ub.min(yg)
                } else {
                    lb = lb.max(yg)
                }
            } else {
                n_free += 1;
                sum_free += yg;
            }
        }
        if n_free > 0 {
            sum_free / n_free as f64
        } else {
            (ub + lb) / 2.0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_values() {
        assert_eq!(rbf_kernel(&[1.0, 2.0], &[1.0, 2.0], 0.5).unwrap(), 1.0);
        let k = rbf_kernel(&[0.0, 0.0], &[1.0, 0.0], 0.077).unwrap();
        assert!((k - 0.92589).abs() < 1e-5);
        assert!((k - (-0.077f64).exp()).abs() < 1e-15);
        assert_eq!(
            rbf_kernel(&[0.3, -1.0], &[2.0, 0.5], 0.4).unwrap(),
            rbf_kernel(&[2.0, 0.5], &[0.3, -1.0], 0.4).unwrap()
        );
        assert!(rbf_kernel(&[0.0], &[0.0, 1.0], 1.0).is_err());
    }

    fn two_points() -> Dataset {
        Dataset::new(
            vec!["a".into(), "b".into()],
            vec!["p".into(), "q".into()],
            vec![Label::Fraud, Label::NonFraud],
            vec![1.0, 0.0, -1.0, 0.0],
        )
        .unwrap()
    }

    #[test]
    fn two_point_boundary_at_midpoint() {
        let p = SVMParams {
            cost: 1e3,
            gamma: 0.5,
            tolerance: 1e-8,
            ..Default::default()
        };
        let d = two_points();
        let (m, report) = train_svm_detailed(&d, &p, false).unwrap();
        assert_eq!(m.support_vectors.len(), 2);
        assert!(report.alpha.iter().all(|&a| a > 0.0));
        assert!(decision_function(&m, &[0.0, 0.0]).abs() < 1e-6);
        assert!(decision_function(&m, &[0.0, 7.0]).abs() < 1e-6);
        assert_eq!(classify_svm(decision_function(&m, d.row(0))), Label::Fraud);
        assert_eq!(
            classify_svm(decision_function(&m, d.row(1))),
            Label::NonFraud
        );
    }

    #[test]
    fn far_point_decays_to_bias() {
        let d = two_points();
        let m = train_svm(&d, &SVMParams::default()).unwrap();
        assert_eq!(decision_function(&m, &[1e3, -1e3]), m.bias);
    }

    #[test]
    fn zero_decision_is_fraud() {
        assert_eq!(classify_svm(0.0), Label::Fraud);
        assert_eq!(classify_svm(-1e-12), Label::NonFraud);
    }

    #[test]
    fn class_weight_resolves_from_counts() {
        let d = Dataset::new(
            vec!["x".into()],
            (0..5).map(|i| i.to_string()).collect(),
            vec![
                Label::Fraud,
                Label::NonFraud,
                Label::NonFraud,
                Label::NonFraud,
                Label::NonFraud,
            ],
            vec![2.0, -1.0, -0.5, 0.0, 0.5],
        )
        .unwrap();
        let m = train_svm(&d, &SVMParams::default()).unwrap();
        assert_eq!(m.class_weight_fraud, 4.0);
    }

    #[test]
    fn iteration_cap_is_an_error() {
        let d = crate::dataset::tests::toy(
            &[
                Label::Fraud,
                Label::NonFraud,
                Label::Fraud,
                Label::NonFraud,
                Label::NonFraud,
            ],
            2,
            3,
        );
        let p = SVMParams {
            max_iterations: 0,
            ..Default::default()
        };
        assert!(matches!(train_svm(&d, &p), Err(Error::NotConverged(0))));
    }
}
