use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use super::{
    aggregate, base_metrics, compress, gradient, Evaluator, LossSpec, Message, RoundOutcome,
    TrainConfig,
};
use crate::data::{Dataset, Partition};
use crate::error::{Error, Result};
use crate::metrics::RoundMetrics;
use crate::rng::{round_sketch_seed, stream, Purpose};
use crate::scalar::Scalar;
use crate::sketch::DenseVector;

/// Federated averaging with sketched model deltas.
///
/// Each round the server draws `K` devices by weight without replacement;
/// each runs `E` epochs of mini-batch SGD from the global weights and sends
/// `w_local - w_global` compressed. The server averages over the `K`
/// participants and every device adds the queried mean to the global
/// weights. Error correction is never applied here.
pub struct FederatedAveraging<'a, T> {
    config: TrainConfig<T>,
    partition: &'a Partition<T>,
    eval: Evaluator<'a, T>,
    weights: DenseVector<T>,
    probs: Vec<f64>,
    round: usize,
    comm: f64,
}

impl<'a, T: Scalar> FederatedAveraging<'a, T> {
    pub fn new(
        config: TrainConfig<T>,
        loss: LossSpec<T>,
        partition: &'a Partition<T>,
        test: Option<&'a Dataset<T>>,
    ) -> Result<Self> {
        config.validate()?;
        let m = partition.workers.len();
        if m != config.workers {
            return Err(Error::invalid(format!(
                "config has {} workers but the partition has {m}",
                config.workers
            )));
        }
        if config.devices_per_round == 0 || config.devices_per_round > m {
            return Err(Error::invalid(format!(
                "cannot sample {} devices out of {m}",
                config.devices_per_round
            )));
        }
        if partition.workers.iter().any(Dataset::is_empty) {
            return Err(Error::invalid("every device needs at least one sample"));
        }
        let probs: Vec<f64> = match &config.sampling_weights {
            Some(p) => {
                if p.len() != m {
                    return Err(Error::DimensionMismatch {
                        expected: m,
                        found: p.len(),
                    });
                }
                let p: Vec<f64> = p.iter().map(|v| v.as_f64()).collect();
                let total: f64 = p.iter().sum();
                if p.iter().any(|v| !(*v >= 0.0)) || (total - 1.0).abs() > 1e-9 {
                    return Err(Error::invalid(
                        "sampling weights must be nonnegative and sum to 1",
                    ));
                }
                if p.iter().filter(|v| **v > 0.0).count() < config.devices_per_round {
                    return Err(Error::invalid(
                        "fewer devices with positive weight than devices per round",
                    ));
                }
                p
            }
            None => {
                let total = partition.total_samples() as f64;
                partition
                    .workers
                    .iter()
                    .map(|d| d.len() as f64 / total)
                    .collect()
            }
        };
        let n = loss.param_count(partition.dim());
        Ok(Self {
            weights: DenseVector::zeros(n),
            config,
            partition,
            eval: Evaluator {
                loss,
                train: partition.pooled(),
                test,
            },
            probs,
            round: 0,
            comm: 0.0,
        })
    }

    pub fn with_initial_weights(mut self, w: DenseVector<T>) -> Result<Self> {
        if w.len() != self.weights.len() {
            return Err(Error::DimensionMismatch {
                expected: self.weights.len(),
                found: w.len(),
            });
        }
        self.weights = w;
        Ok(self)
    }

    pub fn config(&self) -> &TrainConfig<T> {
        &self.config
    }

    pub fn rounds_done(&self) -> usize {
        self.round
    }

    pub fn weights(&self) -> &DenseVector<T> {
        &self.weights
    }

    /// Weighted sampling of `K` distinct devices, returned ascending.
    fn sample_devices(&self, round: usize) -> Vec<usize> {
        let mut rng = stream(
            self.config.master_seed,
            Purpose::DeviceSampling,
            0,
            round as u64,
        );
        let mut weights = self.probs.clone();
        let mut chosen = Vec::with_capacity(self.config.devices_per_round);
        for _ in 0..self.config.devices_per_round {
            let total: f64 = weights.iter().sum();
            let mut u = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &w) in weights.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                pick = Some(i);
                if u < w {
                    break;
                }
                u -= w;
            }
            let i = pick.expect("positive weight remains");
            chosen.push(i);
            weights[i] = 0.0;
        }
        chosen.sort_unstable();
        chosen
    }

    fn local_update(&self, device: usize, round: usize, lr: T) -> Result<DenseVector<T>> {
        let data = &self.partition.workers[device];
        let mut rng = stream(
            self.config.master_seed,
            Purpose::Batch,
            device as u64,
            round as u64,
        );
        let mut w = self.weights.clone();
        let mut order: Vec<usize> = (0..data.len()).collect();
        for _ in 0..self.config.local_epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(self.config.batch_size) {
                let mut rows = chunk.to_vec();
                rows.sort_unstable();
                let g = gradient(&w, &self.eval.loss, &data.subset(&rows))?;
                w.axpy(-lr, &g)?;
            }
        }
        w.axpy(-T::one(), &self.weights)?;
        Ok(w)
    }

    pub fn fedavg_round(&mut self) -> Result<RoundOutcome<T>> {
        let round = self.round + 1;
        let cfg = &self.config;
        let lr = cfg.lr.at(round)?;
        let n = self.weights.len();
        let sketch_seed = round_sketch_seed(cfg.master_seed, round as u64);
        let devices = self.sample_devices(round);

        let work = |&d: &usize| -> Result<(DenseVector<T>, Message<T>)> {
            let delta = self.local_update(d, round, lr)?;
            let msg = compress(&delta, cfg, sketch_seed, d, round)?;
            Ok((delta, msg))
        };
        let results: Vec<_> = if cfg.parallel {
            devices.par_iter().map(work).collect()
        } else {
            devices.iter().map(work).collect()
        };
        let mut deltas = Vec::with_capacity(devices.len());
        let mut messages = Vec::with_capacity(devices.len());
        let mut reports = Vec::new();
        for (&d, r) in devices.iter().zip(results) {
            let (delta, msg) = r?;
            if let Message::Sketch(_, rep) = &msg {
                reports.push(*rep);
            }
            deltas.push(delta);
            messages.push((d, msg));
        }

        let agg = aggregate(messages, n)?;
        self.weights.axpy(T::one(), &agg.mean)?;

        let mut metrics = base_metrics(round, n, agg.dims, self.comm);
        metrics.participants = devices.len();
        metrics.fill_privacy(agg.reports);
        if round.is_multiple_of(cfg.eval_every) || round == cfg.rounds {
            self.eval.fill(&mut metrics, &self.weights)?;
        }
        self.comm = metrics.normalized_communication;
        self.round = round;
        Ok(RoundOutcome {
            metrics,
            participants: devices,
            local_updates: deltas,
            aggregate: agg.sketch,
            reports,
        })
    }

    pub fn run(&mut self) -> Result<Vec<RoundMetrics>> {
        let mut out = Vec::with_capacity(self.config.rounds.saturating_sub(self.round));
        while self.round < self.config.rounds {
            out.push(self.fedavg_round()?.metrics);
        }
        Ok(out)
    }
}
