//! Sketch-compressed distributed training.
//!
//! Two synchronous protocols share one worker pipeline: a local update
//! (gradient or model delta) is padded with Gaussian noise, sketched,
//! validated against the privacy target and sent; the server sums the
//! sketches, scales by the number of senders and broadcasts; receivers query
//! the first `n` coordinates back out.

mod convergence;
mod fedavg;
mod model;
mod sgd;

pub use convergence::{bound_at, convergence_check, ConvergenceHistory, ConvergenceReport};
pub use fedavg::FederatedAveraging;
pub use model::{accuracy, gradient, least_squares_optimum, loss_value, LossKind, LossSpec, Model};
pub use sgd::DistributedSgd;

use rand::Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{PrivacyRecord, RoundMetrics};
use crate::privacy::{estimate_stats, pad_with_noise, validate_and_noise, PrivacyReport};
use crate::rng::{stream, Purpose};
use crate::scalar::Scalar;
use crate::sketch::{CountSketch, DenseVector, SketchDims};
use crate::wire;

/// `c / sqrt(i)` for one-based round `i`.
pub fn step_size<T: Scalar>(i: usize, c: T) -> Result<T> {
    if i == 0 {
        return Err(Error::invalid("rounds are numbered from 1"));
    }
    if !(c > T::zero() && c.is_finite()) {
        return Err(Error::invalid(format!(
            "step constant must be positive, got {c}"
        )));
    }
    Ok(c / T::of(i as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrSchedule<T> {
    Constant(T),
    /// `c / sqrt(i)`
    InvSqrt {
        c: T,
    },
}

impl<T: Scalar> LrSchedule<T> {
    pub fn at(&self, round: usize) -> Result<T> {
        match *self {
            LrSchedule::Constant(eta) if eta > T::zero() && eta.is_finite() => Ok(eta),
            LrSchedule::Constant(eta) => Err(Error::invalid(format!(
                "learning rate must be positive, got {eta}"
            ))),
            LrSchedule::InvSqrt { c } => step_size(round, c),
        }
    }
}

/// How updates are compressed before leaving a worker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SketchSpec {
    /// Send the dense vector; no sketch and no privacy validation.
    Exact,
    /// Fixed `t x k` table.
    Table { t: usize, k: usize },
    /// `t` rows and `k = round(n_padded / (t * ratio))`, at least 1.
    Ratio { t: usize, ratio: f64 },
}

impl SketchSpec {
    pub fn resolve(&self, n_padded: usize) -> Result<Option<SketchDims>> {
        match *self {
            SketchSpec::Exact => Ok(None),
            SketchSpec::Table { t, k } => SketchDims::new(t, k, n_padded).map(Some),
            SketchSpec::Ratio { t, ratio } => {
                if !(ratio > 0.0 && ratio.is_finite()) || t == 0 {
                    return Err(Error::invalid(format!(
                        "bad compression ratio {ratio} with t={t}"
                    )));
                }
                let k = (n_padded as f64 / (t as f64 * ratio)).round().max(1.0) as usize;
                SketchDims::new(t, k, n_padded).map(Some)
            }
        }
    }
}

/// Configuration shared by both protocols. Fields that only one protocol
/// reads are noted.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig<T> {
    pub workers: usize,
    pub rounds: usize,
    pub batch_size: usize,
    pub lr: LrSchedule<T>,
    /// Federated only.
    pub devices_per_round: usize,
    /// Federated only.
    pub local_epochs: usize,
    /// Federated only; defaults to sample-count proportions.
    pub sampling_weights: Option<Vec<T>>,
    /// Per-round target; `+inf` disables validation.
    pub eps_target: T,
    pub sketch: SketchSpec,
    pub pad: usize,
    /// Distributed SGD only.
    pub errcorr_fraction: T,
    pub alpha_percentile: T,
    pub master_seed: u64,
    /// Run workers on the rayon pool.
    pub parallel: bool,
    /// Evaluate loss/accuracy every this many rounds (and on the last).
    pub eval_every: usize,
    /// Keep iterates for [`convergence_check`].
    pub record_history: bool,
}

impl<T: Scalar> Default for TrainConfig<T> {
    fn default() -> Self {
        Self {
            workers: 10,
            rounds: 100,
            batch_size: 10,
            lr: LrSchedule::Constant(T::of(0.01)),
            devices_per_round: 10,
            local_epochs: 1,
            sampling_weights: None,
            eps_target: T::infinity(),
            sketch: SketchSpec::Ratio { t: 7, ratio: 50.0 },
            pad: 0,
            errcorr_fraction: T::of(0.5),
            alpha_percentile: T::of(crate::privacy::DEFAULT_ALPHA_PERCENTILE),
            master_seed: 0,
            parallel: true,
            eval_every: 1,
            record_history: false,
        }
    }
}

impl<T: Scalar> TrainConfig<T> {
    pub(crate) fn validate(&self) -> Result<()> {
        if self.workers == 0
            || self.batch_size == 0
            || self.local_epochs == 0
            || self.eval_every == 0
        {
            return Err(Error::invalid(
                "workers, batch size, local epochs and eval interval must be positive",
            ));
        }
        if !(self.eps_target > T::zero()) {
            return Err(Error::invalid(format!(
                "eps_target must be positive, got {}",
                self.eps_target
            )));
        }
        if !(self.errcorr_fraction >= T::zero() && self.errcorr_fraction <= T::one()) {
            return Err(Error::invalid(
                "error-correction fraction must be in [0, 1]",
            ));
        }
        self.lr.at(1)?;
        Ok(())
    }
}

/// Zeroes the `floor(fraction * n)` coordinates of `queried` that are
/// farthest from `local`; ties go to the lower index.
pub fn error_correct<T: Scalar>(queried: &[T], local: &[T], fraction: T) -> Result<DenseVector<T>> {
    if queried.len() != local.len() {
        return Err(Error::DimensionMismatch {
            expected: local.len(),
            found: queried.len(),
        });
    }
    if !(fraction >= T::zero() && fraction <= T::one()) {
        return Err(Error::invalid(format!(
            "fraction must be in [0, 1], got {fraction}"
        )));
    }
    let n = queried.len();
    let drop = (fraction.as_f64() * n as f64).floor() as usize;
    let mut out = queried.to_vec();
    if drop == 0 {
        return Ok(DenseVector::from_vec(out));
    }
    let gaps: Vec<T> = queried
        .iter()
        .zip(local)
        .map(|(&q, &l)| (q - l).abs())
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        gaps[b]
            .partial_cmp(&gaps[a])
            .expect("finite gaps")
            .then(a.cmp(&b))
    });
    for &i in &order[..drop.min(n)] {
        out[i] = T::zero();
    }
    Ok(DenseVector::from_vec(out))
}

/// What one worker sends to the server.
#[derive(Debug, Clone)]
pub(crate) enum Message<T> {
    Dense(DenseVector<T>),
    Sketch(CountSketch<T>, PrivacyReport<T>),
}

/// Pads, sketches and validates one worker's update.
pub(crate) fn compress<T: Scalar>(
    update: &[T],
    config: &TrainConfig<T>,
    sketch_seed: u64,
    worker: usize,
    round: usize,
) -> Result<Message<T>> {
    let n_padded = update.len() + config.pad;
    let Some(dims) = config.sketch.resolve(n_padded)? else {
        return Ok(Message::Dense(DenseVector::from_vec(update.to_vec())));
    };
    let stats = estimate_stats(update, config.alpha_percentile)?.with_padding(config.pad);
    let padded = if config.pad > 0 {
        let mut rng = stream(
            config.master_seed,
            Purpose::Padding,
            worker as u64,
            round as u64,
        );
        pad_with_noise(update, config.pad, &stats, &mut rng)
    } else {
        DenseVector::from_vec(update.to_vec())
    };
    let mut sketch = CountSketch::new(dims, sketch_seed)?;
    sketch.encode(&padded)?;
    let mut rng = stream(
        config.master_seed,
        Purpose::Validation,
        worker as u64,
        round as u64,
    );
    let (sketch, report) = validate_and_noise(sketch, &stats, config.eps_target, &mut rng)?;
    debug_assert!(report.is_consistent());
    Ok(Message::Sketch(sketch, report))
}

/// Server-side average of the messages, queried back to `n` coordinates.
pub(crate) struct Aggregate<T> {
    pub mean: DenseVector<T>,
    pub sketch: Option<CountSketch<T>>,
    pub reports: Vec<PrivacyRecord>,
    pub dims: Option<SketchDims>,
}

pub(crate) fn aggregate<T: Scalar>(
    messages: Vec<(usize, Message<T>)>,
    n: usize,
) -> Result<Aggregate<T>> {
    let count = T::of(messages.len() as f64);
    let mut dense: Option<DenseVector<T>> = None;
    let mut merged: Option<CountSketch<T>> = None;
    let mut reports = Vec::new();
    for (worker, msg) in messages {
        match msg {
            Message::Dense(v) => match dense.as_mut() {
                Some(acc) => acc.axpy(T::one(), &v)?,
                None => dense = Some(v),
            },
            Message::Sketch(s, report) => {
                reports.push(PrivacyRecord::from_report(worker, &report));
                match merged.as_mut() {
                    Some(acc) => acc.merge_from(&s)?,
                    None => merged = Some(s),
                }
            }
        }
    }
    let inv = T::one() / count;
    if let Some(mut s) = merged {
        s.scale_by(inv)?;
        let mean = s.query_prefix(n);
        let dims = Some(s.dims());
        return Ok(Aggregate {
            mean,
            sketch: Some(s),
            reports,
            dims,
        });
    }
    let mut mean = dense.ok_or_else(|| Error::invalid("no messages to aggregate"))?;
    for v in mean.iter_mut() {
        *v *= inv;
    }
    Ok(Aggregate {
        mean,
        sketch: None,
        reports,
        dims: None,
    })
}

/// Everything observable about one round.
#[derive(Debug, Clone)]
pub struct RoundOutcome<T> {
    pub metrics: RoundMetrics,
    /// Participating workers, ascending.
    pub participants: Vec<usize>,
    /// Each participant's unsketched update (gradient or model delta).
    pub local_updates: Vec<DenseVector<T>>,
    /// Averaged server sketch, when sketching is on.
    pub aggregate: Option<CountSketch<T>>,
    pub reports: Vec<PrivacyReport<T>>,
}

pub(crate) struct Evaluator<'a, T> {
    pub loss: LossSpec<T>,
    pub train: Dataset<T>,
    pub test: Option<&'a Dataset<T>>,
}

impl<T: Scalar> Evaluator<'_, T> {
    pub fn fill(&self, metrics: &mut RoundMetrics, weights: &[T]) -> Result<()> {
        metrics.train_loss = Some(loss_value(weights, &self.loss, &self.train)?.as_f64());
        if let Some(test) = self.test.filter(|t| !t.is_empty()) {
            metrics.test_loss = Some(loss_value(weights, &self.loss, test)?.as_f64());
            metrics.test_accuracy = accuracy(weights, &self.loss, test)?.map(Scalar::as_f64);
        }
        Ok(())
    }
}

/// Bookkeeping fields of [`RoundMetrics`] that depend only on the table.
pub(crate) fn base_metrics(
    round: usize,
    n: usize,
    dims: Option<SketchDims>,
    prev_comm: f64,
) -> RoundMetrics {
    let (bytes, ratio) = match dims {
        Some(d) => (wire::encoded_len(&d) as u64, d.compression_ratio()),
        None => (8 * n as u64, 1.0),
    };
    RoundMetrics {
        round,
        train_loss: None,
        test_loss: None,
        test_accuracy: None,
        participants: 0,
        eps_mean: None,
        eps_max: None,
        noise_added: 0,
        bytes_sent_per_worker: bytes,
        compression_ratio: ratio,
        normalized_communication: prev_comm + 1.0 / ratio,
        privacy: Vec::new(),
    }
}

/// Uniform mini-batch of `size` rows without replacement (all rows, in
/// order, when `size >= len`).
pub(crate) fn sample_batch<R: Rng>(len: usize, size: usize, rng: &mut R) -> Vec<usize> {
    if size >= len {
        return (0..len).collect();
    }
    let mut rows = rand::seq::index::sample(rng, len, size).into_vec();
    rows.sort_unstable();
    rows
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_sizes() {
        assert_eq!(step_size(1, 0.3).unwrap(), 0.3);
        assert!((step_size(4, 0.2).unwrap() - 0.1f64).abs() < 1e-16);
        assert!((step_size(100, 1.0).unwrap() - 0.1f64).abs() < 1e-16);
        assert!(step_size(0, 1.0f64).is_err());
        assert!(step_size(3, 0.0f64).is_err());
    }

    #[test]
    fn error_correct_examples() {
        let q = [10.0, 20.0, 30.0, 40.0];
        let local = [7.0, 19.0, 34.0, 38.0]; // gaps 3, 1, 4, 2
        assert_eq!(&*error_correct(&q, &local, 0.0).unwrap(), &q);
        assert_eq!(&*error_correct(&q, &local, 1.0).unwrap(), &[0.0; 4]);
        assert_eq!(
            &*error_correct(&q, &local, 0.5).unwrap(),
            &[0.0, 20.0, 0.0, 40.0]
        );
        // equal gaps: lower index first
        assert_eq!(
            &*error_correct(&[1.0, 1.0, 1.0], &[0.0; 3], 0.34).unwrap(),
            &[0.0, 1.0, 1.0]
        );
        assert!(error_correct(&q, &local[..3], 0.5).is_err());
        assert!(error_correct(&q, &local, 1.5).is_err());
    }

    #[test]
    fn ratio_resolution() {
        let d = SketchSpec::Ratio { t: 7, ratio: 50.0 }
            .resolve(7850)
            .unwrap()
            .unwrap();
        assert_eq!((d.t, d.k), (7, 22));
        let d = SketchSpec::Ratio { t: 7, ratio: 75.0 }
            .resolve(7850)
            .unwrap()
            .unwrap();
        assert_eq!((d.t, d.k), (7, 15));
        assert_eq!(SketchSpec::Exact.resolve(10).unwrap(), None);
        let d = SketchSpec::Ratio { t: 3, ratio: 1e9 }
            .resolve(10)
            .unwrap()
            .unwrap();
        assert_eq!(d.k, 1);
    }
}
