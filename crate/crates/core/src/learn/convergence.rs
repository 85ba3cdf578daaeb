//! Empirical check of the convex convergence bound for sketched SGD:
//!
//! ```text
//! F(xbar_i) - F(x*) <= (R^2 / (2c) + c sqrt((i+1)/i) (n mu^2 + 1) G^2) / sqrt(i)
//! ```
//!
//! with `xbar_i` the running mean of the first `i` iterates, `G^2` a bound on
//! the squared stochastic-gradient norm, `R^2` a bound on `||x_i - x*||^2` and
//! `mu = sqrt(e / k)` the sketch's relative error. `G` and `R` are measured
//! from the run itself.

use serde::Serialize;

use super::model::{least_squares_optimum, loss_value, LossKind, LossSpec};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::sketch::{DenseVector, SketchDims};

/// Iterates `x_1, x_2, ...` and the largest squared worker-gradient norm
/// seen at each.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceHistory<T> {
    pub iterates: Vec<DenseVector<T>>,
    pub grad_norm_sq: Vec<T>,
}

impl<T> Default for ConvergenceHistory<T> {
    fn default() -> Self {
        Self {
            iterates: Vec::new(),
            grad_norm_sq: Vec::new(),
        }
    }
}

impl<T: Scalar> ConvergenceHistory<T> {
    pub fn push(&mut self, x: DenseVector<T>, grad_norm_sq: T) {
        self.iterates.push(x);
        self.grad_norm_sq.push(grad_norm_sq);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    /// `F(xbar_i) - F(x*)` for `i = 1..`.
    pub suboptimality: Vec<f64>,
    pub bound: Vec<f64>,
    /// Measured `G^2`.
    pub g2: f64,
    /// Measured `R^2`.
    pub r2: f64,
    pub mu: f64,
    pub c: f64,
    /// Probability with which the bound is expected to fail on a run.
    pub delta: f64,
    pub optimum_loss: f64,
    /// First one-based round where the bound fails.
    pub first_violation: Option<usize>,
}

impl ConvergenceReport {
    pub fn holds(&self) -> bool {
        self.first_violation.is_none()
    }
}

/// Right-hand side of the bound at one-based round `i`.
pub fn bound_at(i: usize, c: f64, r2: f64, g2: f64, n: usize, mu: f64) -> f64 {
    let i = i as f64;
    let growth = ((i + 1.0) / i).sqrt();
    (r2 / (2.0 * c) + c * growth * (n as f64 * mu * mu + 1.0) * g2) / i.sqrt()
}

pub fn convergence_check<T: Scalar>(
    history: &ConvergenceHistory<T>,
    loss: &LossSpec<T>,
    data: &Dataset<T>,
    dims: &SketchDims,
    c: T,
    delta: T,
) -> Result<ConvergenceReport> {
    if loss.kind != LossKind::LeastSquares {
        return Err(Error::Unsupported(
            "convergence check needs a closed-form optimum (least squares only)".into(),
        ));
    }
    if history.iterates.is_empty() {
        return Err(Error::invalid("empty history"));
    }
    dims.validate()?;
    let x_star = least_squares_optimum(data, loss.l2)?;
    let f_star = loss_value(&x_star, loss, data)?.as_f64();

    let n = x_star.len();
    let mu = (std::f64::consts::E / dims.k as f64).sqrt();
    let g2 = history
        .grad_norm_sq
        .iter()
        .fold(0.0f64, |m, v| m.max(v.as_f64()));
    let mut r2 = 0.0f64;
    let mut sum = DenseVector::<T>::zeros(n);
    let mut subopt = Vec::with_capacity(history.iterates.len());
    for (idx, x) in history.iterates.iter().enumerate() {
        let d2: f64 = x
            .iter()
            .zip(x_star.iter())
            .map(|(a, b)| (*a - *b).as_f64().powi(2))
            .sum();
        r2 = r2.max(d2);
        sum.axpy(T::one(), x)?;
        let inv = T::one() / T::of((idx + 1) as f64);
        let mean: Vec<T> = sum.iter().map(|&v| v * inv).collect();
        subopt.push(loss_value(&mean, loss, data)?.as_f64() - f_star);
    }
    let c = c.as_f64();
    let bound: Vec<f64> = (1..=subopt.len())
        .map(|i| bound_at(i, c, r2, g2, n, mu))
        .collect();
    let first_violation = subopt
        .iter()
        .zip(&bound)
        .position(|(s, b)| s > b)
        .map(|i| i + 1);
    Ok(ConvergenceReport {
        suboptimality: subopt,
        bound,
        g2,
        r2,
        mu,
        c,
        delta: delta.as_f64(),
        optimum_loss: f_star,
        first_violation,
    })
}
