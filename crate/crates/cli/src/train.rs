use std::collections::BTreeSet;
use std::io::Write;

use clap::Args;
use diffsketch::data::{
    gradient_histogram, load_csv, synth_classification, synth_regression, Dataset, Histogram,
    Partition,
};
use diffsketch::learn::{
    gradient, DistributedSgd, FederatedAveraging, LossSpec, LrSchedule, RoundOutcome, SketchSpec,
    TrainConfig,
};
use diffsketch::metrics::RoundMetrics;
use diffsketch::rng::{stream, Purpose};
use diffsketch::{wire, DenseVector, Result as CoreResult};
use rand::Rng;
use serde::Serialize;

use crate::config::{DatasetSpec, LossChoice, Mode, TrainOptions, TrainSettings};
use crate::error::CliError;
use crate::output::{summary_path, write_summary_csv, RecordSink};

pub struct Prepared {
    pub partition: Partition<f64>,
    pub test: Option<Dataset<f64>>,
    pub loss: LossSpec<f64>,
}

pub fn prepare(s: &TrainSettings) -> Result<Prepared, CliError> {
    let loss = match s.loss {
        LossChoice::LeastSquares => LossSpec::least_squares(s.l2),
        LossChoice::Logistic => LossSpec::logistic(s.classes, s.l2),
    };
    let (partition, test) = match &s.dataset {
        DatasetSpec::SynthRegression {
            samples_per_worker,
            features,
            noise_sd,
        } => (
            synth_regression(s.workers, *samples_per_worker, *features, *noise_sd, s.seed)?.0,
            None,
        ),
        DatasetSpec::SynthClassification(cfg) => {
            let data = synth_classification(cfg)?;
            (data.partition, Some(data.test))
        }
        DatasetSpec::Csv { path, label } => {
            let data = load_csv(path, label)?;
            (Partition::contiguous(&data, s.workers, s.seed)?, None)
        }
    };
    Ok(Prepared {
        partition,
        test,
        loss,
    })
}

pub fn train_config(s: &TrainSettings) -> TrainConfig<f64> {
    TrainConfig {
        workers: s.workers,
        rounds: s.rounds,
        batch_size: s.batch,
        lr: s.lr,
        devices_per_round: s.devices_per_round,
        local_epochs: s.local_epochs,
        eps_target: s.eps,
        sketch: s.sketch,
        pad: s.pad,
        errcorr_fraction: s.errcorr_frac,
        master_seed: s.seed,
        parallel: s.threads != 1,
        eval_every: s.eval_every,
        ..TrainConfig::default()
    }
}

enum Trainer<'a> {
    Sgd(DistributedSgd<'a, f64>),
    Fed(FederatedAveraging<'a, f64>),
}

impl<'a> Trainer<'a> {
    fn new(s: &TrainSettings, p: &'a Prepared) -> CoreResult<Self> {
        let cfg = train_config(s);
        Ok(match s.mode {
            Mode::DistributedSgd => Trainer::Sgd(DistributedSgd::new(
                cfg,
                p.loss,
                &p.partition,
                p.test.as_ref(),
            )?),
            Mode::Fedavg => Trainer::Fed(FederatedAveraging::new(
                cfg,
                p.loss,
                &p.partition,
                p.test.as_ref(),
            )?),
        })
    }

    fn step(&mut self) -> CoreResult<RoundOutcome<f64>> {
        match self {
            Trainer::Sgd(t) => t.sgd_round(),
            Trainer::Fed(t) => t.fedavg_round(),
        }
    }

    fn weights(&self, worker: usize) -> &DenseVector<f64> {
        match self {
            Trainer::Sgd(t) => t.weights(worker),
            Trainer::Fed(t) => t.weights(),
        }
    }
}

/// Runs `f` on a pool of `threads` workers (0 = the global pool).
fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> Result<R, CliError> {
    if threads <= 1 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()?;
    Ok(pool.install(f))
}

#[derive(Debug, Serialize)]
struct RunHeader<'a> {
    command: &'a str,
    mode: Mode,
    dataset: String,
    loss: LossChoice,
    workers: usize,
    rounds: usize,
    batch: usize,
    lr: String,
    params: usize,
    padded_len: usize,
    t: Option<usize>,
    k: Option<usize>,
    compression_ratio: f64,
    eps_target: Option<f64>,
    pad: usize,
    errcorr_frac: f64,
    devices_per_round: Option<usize>,
    local_epochs: Option<usize>,
    seed: u64,
}

fn header<'a>(
    command: &'a str,
    s: &TrainSettings,
    p: &Prepared,
) -> Result<RunHeader<'a>, CliError> {
    let params = p.loss.param_count(p.partition.dim());
    let dims = s.sketch.resolve(params + s.pad)?;
    let fed = s.mode == Mode::Fedavg;
    Ok(RunHeader {
        command,
        mode: s.mode,
        dataset: match &s.dataset {
            DatasetSpec::SynthRegression { .. } => "synth-reg".into(),
            DatasetSpec::SynthClassification(_) => "synth-cls".into(),
            DatasetSpec::Csv { path, .. } => format!("csv:{}", path.display()),
        },
        loss: s.loss,
        workers: s.workers,
        rounds: s.rounds,
        batch: s.batch,
        lr: match s.lr {
            LrSchedule::Constant(eta) => format!("const:{eta}"),
            LrSchedule::InvSqrt { c } => format!("inv-sqrt:{c}"),
        },
        params,
        padded_len: params + s.pad,
        t: dims.map(|d| d.t),
        k: dims.map(|d| d.k),
        compression_ratio: dims.map_or(1.0, |d| d.compression_ratio()),
        eps_target: s.eps.is_finite().then_some(s.eps),
        pad: s.pad,
        errcorr_frac: s.errcorr_frac,
        devices_per_round: fed.then_some(s.devices_per_round),
        local_epochs: fed.then_some(s.local_epochs),
        seed: s.seed,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SummaryRow {
    pub round: usize,
    pub train_loss: Option<f64>,
    pub test_loss: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub eps_mean: Option<f64>,
    pub eps_max: Option<f64>,
    pub noise_added: usize,
    pub bytes_sent_per_worker: u64,
    pub compression_ratio: f64,
    pub normalized_communication: f64,
}

impl From<&RoundMetrics> for SummaryRow {
    fn from(m: &RoundMetrics) -> Self {
        Self {
            round: m.round,
            train_loss: m.train_loss,
            test_loss: m.test_loss,
            test_accuracy: m.test_accuracy,
            eps_mean: m.eps_mean,
            eps_max: m.eps_max,
            noise_added: m.noise_added,
            bytes_sent_per_worker: m.bytes_sent_per_worker,
            compression_ratio: m.compression_ratio,
            normalized_communication: m.normalized_communication,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub rounds: usize,
    pub final_train_loss: Option<f64>,
    pub final_test_accuracy: Option<f64>,
    /// Mean of the per-round `eps_mean`, over rounds where it is finite.
    pub eps_mean_over_rounds: Option<f64>,
    pub rounds_with_noise: usize,
    pub bytes_sent_per_worker: u64,
    pub normalized_communication: f64,
}

fn summarize(rounds: &[RoundMetrics]) -> RunSummary {
    let last = rounds.last();
    let eps: Vec<f64> = rounds.iter().filter_map(|m| m.eps_mean).collect();
    RunSummary {
        rounds: rounds.len(),
        final_train_loss: last.and_then(|m| m.train_loss),
        final_test_accuracy: last.and_then(|m| m.test_accuracy),
        eps_mean_over_rounds: (!eps.is_empty()).then(|| eps.iter().sum::<f64>() / eps.len() as f64),
        rounds_with_noise: rounds.iter().filter(|m| m.noise_added > 0).count(),
        bytes_sent_per_worker: rounds.iter().map(|m| m.bytes_sent_per_worker).sum(),
        normalized_communication: last.map_or(0.0, |m| m.normalized_communication),
    }
}

/// Runs `train`, writing a `run` record, one `round` record per round and a
/// closing `summary` record.
pub fn train<W: Write + Send>(
    s: &TrainSettings,
    sink: &mut RecordSink<W>,
) -> Result<RunSummary, CliError> {
    if s.dump_sketch.is_some() && s.sketch == SketchSpec::Exact {
        return Err(CliError::usage(
            "--dump-sketch needs a sketch; drop --no-sketch",
        ));
    }
    let prepared = prepare(s)?;
    sink.emit("run", &header("train", s, &prepared)?)?;
    let (rounds, last_sketch) = with_threads(s.threads, || -> Result<_, CliError> {
        let mut trainer = Trainer::new(s, &prepared)?;
        let mut rounds = Vec::with_capacity(s.rounds);
        let mut last_sketch = None;
        for _ in 0..s.rounds {
            let out = trainer.step()?;
            sink.emit("round", &out.metrics)?;
            rounds.push(out.metrics);
            last_sketch = out.aggregate;
        }
        Ok((rounds, last_sketch))
    })??;
    let summary = summarize(&rounds);
    sink.emit("summary", &summary)?;
    if let Some(path) = &s.out {
        let rows: Vec<SummaryRow> = rounds.iter().map(SummaryRow::from).collect();
        write_summary_csv(&summary_path(path), &rows)?;
    }
    if let (Some(path), Some(sketch)) = (&s.dump_sketch, last_sketch) {
        std::fs::write(path, wire::serialize(&sketch))
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(summary)
}

#[derive(Debug, Clone, Args)]
pub struct GradHistOptions {
    #[command(flatten)]
    pub train: TrainOptions,
    /// Comma-separated rounds; round r is the gradient after r updates.
    #[arg(long, value_delimiter = ',', required = true)]
    pub at_rounds: Vec<usize>,
    #[arg(long, default_value_t = 50)]
    pub bins: usize,
}

#[derive(Debug, Serialize)]
struct HistogramRecord<'a> {
    round: usize,
    worker: usize,
    #[serde(flatten)]
    histogram: &'a Histogram,
}

/// Emits one `gradient_histogram` record per requested round for a seeded
/// choice of worker. The gradient is taken over the worker's whole shard
/// at its current weights.
pub fn grad_hist<W: Write + Send>(
    s: &TrainSettings,
    at_rounds: &[usize],
    bins: usize,
    sink: &mut RecordSink<W>,
) -> Result<usize, CliError> {
    let wanted: BTreeSet<usize> = at_rounds.iter().copied().collect();
    let Some(&last) = wanted.iter().next_back() else {
        return Err(CliError::usage("--at-rounds is empty"));
    };
    if last > s.rounds {
        return Err(CliError::usage(format!(
            "round {last} is beyond --rounds {}",
            s.rounds
        )));
    }
    if bins == 0 {
        return Err(CliError::usage("--bins must be positive"));
    }
    let prepared = prepare(s)?;
    sink.emit("run", &header("grad-hist", s, &prepared)?)?;
    let worker = stream(s.seed, Purpose::Diagnostics, 0, 0).random_range(0..s.workers);
    with_threads(s.threads, || -> Result<usize, CliError> {
        let mut trainer = Trainer::new(s, &prepared)?;
        let shard = &prepared.partition.workers[worker];
        let mut emitted = 0;
        for round in 0..=last {
            if wanted.contains(&round) {
                let g = gradient(trainer.weights(worker), &prepared.loss, shard)?;
                let histogram = gradient_histogram(&g, bins)?;
                sink.emit(
                    "gradient_histogram",
                    &HistogramRecord {
                        round,
                        worker,
                        histogram: &histogram,
                    },
                )?;
                emitted += 1;
            }
            if round < last {
                trainer.step()?;
            }
        }
        Ok(emitted)
    })?
}
