//! Convex losses and their exact gradients.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::sketch::DenseVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// `1/(2N) sum (<w, x> - y)^2`
    LeastSquares,
    /// Softmax cross-entropy. Weights are a `classes x dim` matrix
    /// (row-major) followed by `classes` biases.
    Logistic { classes: usize },
}

/// A loss plus an L2 penalty `l2/2 * ||w||^2` on every parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSpec<T> {
    pub kind: LossKind,
    pub l2: T,
}

impl<T: Scalar> LossSpec<T> {
    pub fn least_squares(l2: T) -> Self {
        Self {
            kind: LossKind::LeastSquares,
            l2,
        }
    }

    pub fn logistic(classes: usize, l2: T) -> Self {
        Self {
            kind: LossKind::Logistic { classes },
            l2,
        }
    }

    /// Number of parameters for `dim` input features.
    pub fn param_count(&self, dim: usize) -> usize {
        match self.kind {
            LossKind::LeastSquares => dim,
            LossKind::Logistic { classes } => classes * dim + classes,
        }
    }

    fn check(&self, weights: &[T], data: &Dataset<T>) -> Result<()> {
        if !(self.l2 >= T::zero()) {
            return Err(Error::invalid("l2 coefficient must be nonnegative"));
        }
        if let LossKind::Logistic { classes } = self.kind {
            if classes < 2 {
                return Err(Error::invalid("logistic loss needs at least two classes"));
            }
        }
        let expected = self.param_count(data.dim());
        if weights.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: weights.len(),
            });
        }
        Ok(())
    }
}

/// Model weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub weights: DenseVector<T>,
}

impl<T: Scalar> Model<T> {
    pub fn zeros(loss: &LossSpec<T>, dim: usize) -> Self {
        Self {
            weights: DenseVector::zeros(loss.param_count(dim)),
        }
    }
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

fn class_of<T: Scalar>(y: T, classes: usize) -> Result<usize> {
    let c = y
        .to_usize()
        .filter(|&c| T::of(c as f64) == y && c < classes);
    c.ok_or_else(|| Error::invalid(format!("label {y} is not a class index below {classes}")))
}

/// Writes the logits of `x` into `out` and returns log-sum-exp.
fn logits<T: Scalar>(weights: &[T], x: &[T], classes: usize, out: &mut [T]) -> T {
    let dim = x.len();
    let bias = &weights[classes * dim..];
    for c in 0..classes {
        out[c] = dot(&weights[c * dim..(c + 1) * dim], x) + bias[c];
    }
    let max = out.iter().copied().fold(T::neg_infinity(), T::max);
    max + out.iter().map(|&z| (z - max).exp()).sum::<T>().ln()
}

/// Gradient of the batch-average loss plus the L2 term.
pub fn gradient<T: Scalar>(
    weights: &[T],
    loss: &LossSpec<T>,
    batch: &Dataset<T>,
) -> Result<DenseVector<T>> {
    loss.check(weights, batch)?;
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let dim = batch.dim();
    let inv_n = T::one() / T::of(batch.len() as f64);
    let mut grad = vec![T::zero(); weights.len()];
    match loss.kind {
        LossKind::LeastSquares => {
            for i in 0..batch.len() {
                let x = batch.row(i);
                let r = (dot(weights, x) - batch.label(i)) * inv_n;
                for (g, &xj) in grad.iter_mut().zip(x) {
                    *g += r * xj;
                }
            }
        }
        LossKind::Logistic { classes } => {
            let mut z = vec![T::zero(); classes];
            for i in 0..batch.len() {
                let x = batch.row(i);
                let y = class_of(batch.label(i), classes)?;
                let lse = logits(weights, x, classes, &mut z);
                for c in 0..classes {
                    let p = (z[c] - lse).exp();
                    let coef = (if c == y { p - T::one() } else { p }) * inv_n;
                    for (g, &xj) in grad[c * dim..(c + 1) * dim].iter_mut().zip(x) {
                        *g += coef * xj;
                    }
                    grad[classes * dim + c] += coef;
                }
            }
        }
    }
    if loss.l2 > T::zero() {
        for (g, &w) in grad.iter_mut().zip(weights) {
            *g += loss.l2 * w;
        }
    }
    Ok(DenseVector::from_vec(grad))
}

/// Average loss over `data` plus the L2 term.
pub fn loss_value<T: Scalar>(weights: &[T], loss: &LossSpec<T>, data: &Dataset<T>) -> Result<T> {
    loss.check(weights, data)?;
    if data.is_empty() {
        return Err(Error::invalid("empty dataset"));
    }
    let mut total = T::zero();
    match loss.kind {
        LossKind::LeastSquares => {
            for i in 0..data.len() {
                let r = dot(weights, data.row(i)) - data.label(i);
                total += r * r;
            }
            total /= T::of(2.0);
        }
        LossKind::Logistic { classes } => {
            let mut z = vec![T::zero(); classes];
            for i in 0..data.len() {
                let y = class_of(data.label(i), classes)?;
                let lse = logits(weights, data.row(i), classes, &mut z);
                total += lse - z[y];
            }
        }
    }
    let reg = loss.l2 / T::of(2.0) * dot(weights, weights);
    Ok(total / T::of(data.len() as f64) + reg)
}

/// Fraction of rows classified correctly; `None` for regression.
pub fn accuracy<T: Scalar>(
    weights: &[T],
    loss: &LossSpec<T>,
    data: &Dataset<T>,
) -> Result<Option<T>> {
    loss.check(weights, data)?;
    let LossKind::Logistic { classes } = loss.kind else {
        return Ok(None);
    };
    if data.is_empty() {
        return Err(Error::invalid("empty dataset"));
    }
    let mut z = vec![T::zero(); classes];
    let mut correct = 0usize;
    for i in 0..data.len() {
        let y = class_of(data.label(i), classes)?;
        logits(weights, data.row(i), classes, &mut z);
        let mut best = 0;
        for c in 1..classes {
            if z[c] > z[best] {
                best = c;
            }
        }
        correct += usize::from(best == y);
    }
    Ok(Some(T::of(correct as f64 / data.len() as f64)))
}

/// Exact minimizer of the regularized least-squares loss over `data`,
/// from the normal equations by Cholesky.
pub fn least_squares_optimum<T: Scalar>(data: &Dataset<T>, l2: T) -> Result<DenseVector<T>> {
    if data.is_empty() {
        return Err(Error::invalid("empty dataset"));
    }
    let d = data.dim();
    let inv_n = T::one() / T::of(data.len() as f64);
    let mut a = vec![T::zero(); d * d];
    let mut b = vec![T::zero(); d];
    for i in 0..data.len() {
        let x = data.row(i);
        let y = data.label(i);
        for r in 0..d {
            b[r] += x[r] * y * inv_n;
            for c in 0..=r {
                a[r * d + c] += x[r] * x[c] * inv_n;
            }
        }
    }
    for r in 0..d {
        a[r * d + r] += l2;
    }
    // In-place lower Cholesky factor.
    for j in 0..d {
        let mut diag = a[j * d + j];
        for p in 0..j {
            diag -= a[j * d + p] * a[j * d + p];
        }
        if !(diag > T::zero()) {
            return Err(Error::invalid("normal equations are singular"));
        }
        let diag = diag.sqrt();
        a[j * d + j] = diag;
        for i in j + 1..d {
            let mut v = a[i * d + j];
            for p in 0..j {
                v -= a[i * d + p] * a[j * d + p];
            }
            a[i * d + j] = v / diag;
        }
    }
    let mut z = b;
    for i in 0..d {
        for p in 0..i {
            z[i] = z[i] - a[i * d + p] * z[p];
        }
        z[i] /= a[i * d + i];
    }
    for i in (0..d).rev() {
        for p in i + 1..d {
            z[i] = z[i] - a[p * d + i] * z[p];
        }
        z[i] /= a[i * d + i];
    }
    Ok(DenseVector::from_vec(z))
}
