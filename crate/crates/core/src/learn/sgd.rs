use rayon::prelude::*;

use super::convergence::ConvergenceHistory;
use super::{
    aggregate, base_metrics, compress, error_correct, gradient, sample_batch, Evaluator, LossSpec,
    Message, RoundOutcome, TrainConfig,
};
use crate::data::{Dataset, Partition};
use crate::error::{Error, Result};
use crate::metrics::RoundMetrics;
use crate::rng::{round_sketch_seed, stream, Purpose};
use crate::scalar::Scalar;
use crate::sketch::DenseVector;

/// Synchronous distributed SGD with sketched gradients.
///
/// Every worker keeps its own copy of the weights. Each round a worker
/// computes a mini-batch gradient, sends it compressed, and applies the
/// queried server average (after error correction against its own gradient)
/// with the round's step size. With error correction off all copies stay
/// bit-identical.
pub struct DistributedSgd<'a, T> {
    config: TrainConfig<T>,
    partition: &'a Partition<T>,
    eval: Evaluator<'a, T>,
    weights: Vec<DenseVector<T>>,
    round: usize,
    comm: f64,
    history: Option<ConvergenceHistory<T>>,
}

impl<'a, T: Scalar> DistributedSgd<'a, T> {
    pub fn new(
        config: TrainConfig<T>,
        loss: LossSpec<T>,
        partition: &'a Partition<T>,
        test: Option<&'a Dataset<T>>,
    ) -> Result<Self> {
        config.validate()?;
        if partition.workers.len() != config.workers {
            return Err(Error::invalid(format!(
                "config has {} workers but the partition has {}",
                config.workers,
                partition.workers.len()
            )));
        }
        if partition.workers.iter().any(Dataset::is_empty) {
            return Err(Error::invalid("every worker needs at least one sample"));
        }
        let n = loss.param_count(partition.dim());
        let history = config.record_history.then(ConvergenceHistory::default);
        Ok(Self {
            weights: vec![DenseVector::zeros(n); config.workers],
            config,
            partition,
            eval: Evaluator {
                loss,
                train: partition.pooled(),
                test,
            },
            round: 0,
            comm: 0.0,
            history,
        })
    }

    /// Overrides the initial weights of every worker.
    pub fn with_initial_weights(mut self, w: DenseVector<T>) -> Result<Self> {
        let n = self.weights[0].len();
        if w.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: w.len(),
            });
        }
        self.weights = vec![w; self.config.workers];
        Ok(self)
    }

    pub fn config(&self) -> &TrainConfig<T> {
        &self.config
    }

    /// Rounds completed so far.
    pub fn rounds_done(&self) -> usize {
        self.round
    }

    pub fn weights(&self, worker: usize) -> &DenseVector<T> {
        &self.weights[worker]
    }

    pub fn all_weights(&self) -> &[DenseVector<T>] {
        &self.weights
    }

    pub fn weights_synchronized(&self) -> bool {
        self.weights.windows(2).all(|w| w[0] == w[1])
    }

    pub fn history(&self) -> Option<&ConvergenceHistory<T>> {
        self.history.as_ref()
    }

    /// One synchronous round.
    pub fn sgd_round(&mut self) -> Result<RoundOutcome<T>> {
        let round = self.round + 1;
        let cfg = &self.config;
        let lr = cfg.lr.at(round)?;
        let n = self.weights[0].len();
        let sketch_seed = round_sketch_seed(cfg.master_seed, round as u64);

        let work = |w: usize| -> Result<(DenseVector<T>, Message<T>)> {
            let data = &self.partition.workers[w];
            let mut rng = stream(cfg.master_seed, Purpose::Batch, w as u64, round as u64);
            let rows = sample_batch(data.len(), cfg.batch_size, &mut rng);
            let g = gradient(&self.weights[w], &self.eval.loss, &data.subset(&rows))?;
            let msg = compress(&g, cfg, sketch_seed, w, round)?;
            Ok((g, msg))
        };
        let results: Vec<Result<(DenseVector<T>, Message<T>)>> = if cfg.parallel {
            (0..cfg.workers).into_par_iter().map(work).collect()
        } else {
            (0..cfg.workers).map(work).collect()
        };
        let mut grads = Vec::with_capacity(cfg.workers);
        let mut messages = Vec::with_capacity(cfg.workers);
        let mut reports = Vec::new();
        for (w, r) in results.into_iter().enumerate() {
            let (g, msg) = r?;
            if let Message::Sketch(_, rep) = &msg {
                reports.push(*rep);
            }
            grads.push(g);
            messages.push((w, msg));
        }

        let agg = aggregate(messages, n)?;

        if let Some(h) = self.history.as_mut() {
            let g2 = grads
                .iter()
                .map(DenseVector::norm_squared)
                .fold(T::zero(), T::max);
            h.push(self.weights[0].clone(), g2);
        }

        let frac = cfg.errcorr_fraction;
        for (w, g) in self.weights.iter_mut().zip(&grads) {
            let step = if frac > T::zero() {
                error_correct(&agg.mean, g, frac)?
            } else {
                agg.mean.clone()
            };
            w.axpy(-lr, &step)?;
        }
        if frac.is_zero() {
            debug_assert!(self.weights.windows(2).all(|p| p[0] == p[1]));
        }

        let mut metrics = base_metrics(round, n, agg.dims, self.comm);
        metrics.participants = cfg.workers;
        metrics.fill_privacy(agg.reports);
        if round.is_multiple_of(cfg.eval_every) || round == cfg.rounds {
            self.eval.fill(&mut metrics, &self.weights[0])?;
        }
        self.comm = metrics.normalized_communication;
        self.round = round;
        Ok(RoundOutcome {
            metrics,
            participants: (0..cfg.workers).collect(),
            local_updates: grads,
            aggregate: agg.sketch,
            reports,
        })
    }

    /// Runs the remaining configured rounds.
    pub fn run(&mut self) -> Result<Vec<RoundMetrics>> {
        let mut out = Vec::with_capacity(self.config.rounds.saturating_sub(self.round));
        while self.round < self.config.rounds {
            out.push(self.sgd_round()?.metrics);
        }
        Ok(out)
    }
}
