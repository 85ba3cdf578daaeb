//! Training options and how they are resolved.
//!
//! Every option can come from a TOML file (`--config`), and the seed also
//! from `DIFFSKETCH_SEED`. Precedence is file < environment < flags.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use diffsketch::data::{ClassificationSpec, LabelColumn, Skew, DEFAULT_SEPARATION};
use diffsketch::learn::{LrSchedule, SketchSpec};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const SEED_ENV: &str = "DIFFSKETCH_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    DistributedSgd,
    Fedavg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    Const,
    InvSqrt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossChoice {
    LeastSquares,
    Logistic,
}

/// Flags shared by `train` and `grad-hist`. Also the schema of the TOML
/// config file, with the same kebab-case keys.
#[derive(Debug, Clone, Default, PartialEq, Args, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct TrainOptions {
    /// TOML file with defaults for any of these options.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// Constant learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, value_enum)]
    pub lr_schedule: Option<Schedule>,
    /// `c` in `c / sqrt(i)` for the inv-sqrt schedule.
    #[arg(long)]
    pub step_c: Option<f64>,
    /// Per-round privacy target; `inf` disables validation.
    #[arg(long)]
    pub eps: Option<f64>,
    /// Sketch rows. Defaults to 7 for distributed-sgd and 10 for fedavg.
    #[arg(long)]
    pub t: Option<usize>,
    /// Bins per row. Conflicts with --compression.
    #[arg(long)]
    pub k: Option<usize>,
    /// Target compression ratio over the padded length.
    #[arg(long)]
    pub compression: Option<f64>,
    /// Send dense updates: no sketch and no privacy validation.
    #[arg(long)]
    pub no_sketch: bool,
    /// Gaussian entries appended before sketching.
    #[arg(long)]
    pub pad: Option<usize>,
    #[arg(long)]
    pub errcorr_frac: Option<f64>,
    #[arg(long)]
    pub devices_per_round: Option<usize>,
    #[arg(long)]
    pub local_epochs: Option<usize>,
    /// synth-reg, synth-cls or csv:PATH.
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub samples_per_worker: Option<usize>,
    #[arg(long)]
    pub features: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
    /// iid, labels:C (C classes per worker) or dirichlet:A.
    #[arg(long)]
    pub skew: Option<String>,
    #[arg(long)]
    pub separation: Option<f64>,
    #[arg(long)]
    pub noise_sd: Option<f64>,
    #[arg(long)]
    pub test_samples: Option<usize>,
    /// CSV label column, by name or zero-based index.
    #[arg(long)]
    pub label_col: Option<String>,
    #[arg(long, value_enum)]
    pub loss: Option<LossChoice>,
    #[arg(long)]
    pub l2: Option<f64>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Worker threads; 1 runs workers sequentially, 0 uses every core.
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write the last round's server sketch here in the DSK1 format.
    #[arg(long)]
    pub dump_sketch: Option<PathBuf>,
    #[arg(long)]
    pub no_timestamp: bool,
}

macro_rules! prefer {
    ($hi:ident, $lo:ident; $($f:ident),*) => {
        $( if $hi.$f.is_none() { $hi.$f = $lo.$f.take(); } )*
    };
}

impl TrainOptions {
    /// Fills unset fields from `file`. The seed is left to [`resolve_seed`].
    fn fill_from(&mut self, mut file: TrainOptions) {
        prefer!(self, file; mode, workers, rounds, batch, lr, lr_schedule, step_c, eps, t, k, compression, pad,
            errcorr_frac, devices_per_round, local_epochs, dataset, samples_per_worker, features, classes, skew,
            separation, noise_sd, test_samples, label_col, loss, l2, eval_every, threads, out, dump_sketch);
        self.no_sketch |= file.no_sketch;
        self.no_timestamp |= file.no_timestamp;
    }
}

pub fn load_config_file(path: &Path) -> Result<TrainOptions, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text)
        .map_err(|e| CliError::usage(format!("bad config {}: {e}", path.display())))
}

/// Flag, then environment, then file, then 0.
pub fn resolve_seed(
    flag: Option<u64>,
    env: Option<&str>,
    file: Option<u64>,
) -> Result<u64, CliError> {
    if let Some(s) = flag {
        return Ok(s);
    }
    if let Some(raw) = env {
        return raw.trim().parse().map_err(|_| {
            CliError::usage(format!("{SEED_ENV}={raw:?} is not an unsigned integer"))
        });
    }
    Ok(file.unwrap_or(0))
}

pub fn env_seed() -> Option<String> {
    std::env::var(SEED_ENV).ok()
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSpec {
    SynthRegression {
        samples_per_worker: usize,
        features: usize,
        noise_sd: f64,
    },
    SynthClassification(ClassificationSpec),
    Csv {
        path: PathBuf,
        label: LabelColumn,
    },
}

/// Fully resolved `train` configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub mode: Mode,
    pub workers: usize,
    pub rounds: usize,
    pub batch: usize,
    pub lr: LrSchedule<f64>,
    pub eps: f64,
    pub sketch: SketchSpec,
    pub pad: usize,
    pub errcorr_frac: f64,
    pub devices_per_round: usize,
    pub local_epochs: usize,
    pub dataset: DatasetSpec,
    pub loss: LossChoice,
    pub classes: usize,
    pub l2: f64,
    pub eval_every: usize,
    pub threads: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub dump_sketch: Option<PathBuf>,
    pub timestamps: bool,
    /// Non-fatal notes about ignored options.
    pub warnings: Vec<String>,
}

fn parse_skew(raw: &str, classes: usize) -> Result<Skew, CliError> {
    let bad = || {
        CliError::usage(format!(
            "--skew expects iid, labels:C or dirichlet:A, got {raw:?}"
        ))
    };
    if raw == "iid" {
        return Ok(Skew::ClassesPerWorker(classes));
    }
    let (kind, value) = raw.split_once(':').ok_or_else(bad)?;
    match kind {
        "labels" => value.parse().map(Skew::ClassesPerWorker).map_err(|_| bad()),
        "dirichlet" => value.parse().map(Skew::Dirichlet).map_err(|_| bad()),
        _ => Err(bad()),
    }
}

fn positive(name: &str, v: usize) -> Result<usize, CliError> {
    if v == 0 {
        return Err(CliError::usage(format!("--{name} must be positive")));
    }
    Ok(v)
}

impl TrainSettings {
    /// Applies the config file (if any), the seed environment variable and
    /// the defaults.
    pub fn resolve(flags: TrainOptions, env_seed: Option<&str>) -> Result<Self, CliError> {
        let mut o = flags;
        let file_seed = match o.config.clone() {
            Some(path) => {
                let file = load_config_file(&path)?;
                let seed = file.seed;
                o.fill_from(file);
                seed
            }
            None => None,
        };
        let seed = resolve_seed(o.seed, env_seed, file_seed)?;
        let mut warnings = Vec::new();

        let mode = o.mode.unwrap_or(Mode::DistributedSgd);
        let workers = positive("workers", o.workers.unwrap_or(10))?;
        let rounds = o.rounds.unwrap_or(100);
        let batch = positive("batch", o.batch.unwrap_or(10))?;
        let lr = match o.lr_schedule.unwrap_or(Schedule::Const) {
            Schedule::Const => LrSchedule::Constant(o.lr.unwrap_or(0.01)),
            Schedule::InvSqrt => LrSchedule::InvSqrt {
                c: o.step_c.unwrap_or(0.1),
            },
        };
        lr.at(1).map_err(|e| CliError::usage(e.to_string()))?;
        let eps = o.eps.unwrap_or(f64::INFINITY);
        if !(eps > 0.0) {
            return Err(CliError::usage(format!(
                "--eps must be positive, got {eps}"
            )));
        }

        let default_t = match mode {
            Mode::DistributedSgd => 7,
            Mode::Fedavg => 10,
        };
        let sketch = if o.no_sketch {
            if o.k.is_some() || o.compression.is_some() || o.t.is_some() {
                return Err(CliError::usage(
                    "--no-sketch conflicts with --t, --k and --compression",
                ));
            }
            SketchSpec::Exact
        } else {
            let t = positive("t", o.t.unwrap_or(default_t))?;
            match (o.k, o.compression) {
                (Some(_), Some(_)) => {
                    return Err(CliError::usage(
                        "--k and --compression are mutually exclusive",
                    ))
                }
                (Some(k), None) => SketchSpec::Table {
                    t,
                    k: positive("k", k)?,
                },
                (None, ratio) => {
                    let ratio = ratio.unwrap_or(50.0);
                    if !(ratio > 0.0 && ratio.is_finite()) {
                        return Err(CliError::usage(format!(
                            "--compression must be positive, got {ratio}"
                        )));
                    }
                    SketchSpec::Ratio { t, ratio }
                }
            }
        };

        let errcorr_frac = match (mode, o.errcorr_frac) {
            (Mode::DistributedSgd, f) => f.unwrap_or(0.5),
            (Mode::Fedavg, Some(f)) if f > 0.0 => {
                warnings.push(format!(
                    "fedavg never applies error correction; ignoring --errcorr-frac {f}"
                ));
                0.0
            }
            (Mode::Fedavg, _) => 0.0,
        };
        if !(0.0..=1.0).contains(&errcorr_frac) {
            return Err(CliError::usage(format!(
                "--errcorr-frac must be in [0, 1], got {errcorr_frac}"
            )));
        }

        let classes = o.classes.unwrap_or(10);
        let dataset_raw = o.dataset.unwrap_or_else(|| "synth-cls".into());
        let (dataset, default_loss) = match dataset_raw.as_str() {
            "synth-reg" => (
                DatasetSpec::SynthRegression {
                    samples_per_worker: positive(
                        "samples-per-worker",
                        o.samples_per_worker.unwrap_or(200),
                    )?,
                    features: positive("features", o.features.unwrap_or(200))?,
                    noise_sd: o.noise_sd.unwrap_or(0.1),
                },
                LossChoice::LeastSquares,
            ),
            "synth-cls" => {
                let cfg = ClassificationSpec {
                    skew: parse_skew(o.skew.as_deref().unwrap_or("iid"), classes)?,
                    separation: o.separation.unwrap_or(DEFAULT_SEPARATION),
                    test_samples: o.test_samples.unwrap_or(1000),
                    ..ClassificationSpec::new(
                        workers,
                        positive("samples-per-worker", o.samples_per_worker.unwrap_or(200))?,
                        positive("features", o.features.unwrap_or(784))?,
                        classes,
                        seed,
                    )
                };
                (DatasetSpec::SynthClassification(cfg), LossChoice::Logistic)
            }
            other => match other.strip_prefix("csv:") {
                Some(path) if !path.is_empty() => {
                    let label = match o.label_col.as_deref() {
                        None => LabelColumn::Name("label".into()),
                        Some(s) => s
                            .parse()
                            .map(LabelColumn::Index)
                            .unwrap_or_else(|_| LabelColumn::Name(s.into())),
                    };
                    (
                        DatasetSpec::Csv {
                            path: PathBuf::from(path),
                            label,
                        },
                        LossChoice::LeastSquares,
                    )
                }
                _ => {
                    return Err(CliError::usage(format!(
                        "--dataset expects synth-reg, synth-cls or csv:PATH, got {other:?}"
                    )))
                }
            },
        };
        let loss = o.loss.unwrap_or(default_loss);
        if loss == LossChoice::Logistic && classes < 2 {
            return Err(CliError::usage("--classes must be at least 2"));
        }
        let l2 = o.l2.unwrap_or(0.0);
        if !(l2 >= 0.0) {
            return Err(CliError::usage("--l2 must be nonnegative"));
        }

        let devices_per_round = o.devices_per_round.unwrap_or(workers);
        if mode == Mode::Fedavg && (devices_per_round == 0 || devices_per_round > workers) {
            return Err(CliError::usage(format!(
                "--devices-per-round must be in 1..={workers}, got {devices_per_round}"
            )));
        }

        Ok(Self {
            mode,
            workers,
            rounds,
            batch,
            lr,
            eps,
            sketch,
            pad: o.pad.unwrap_or(0),
            errcorr_frac,
            devices_per_round,
            local_epochs: positive("local-epochs", o.local_epochs.unwrap_or(1))?,
            dataset,
            loss,
            classes,
            l2,
            eval_every: positive("eval-every", o.eval_every.unwrap_or(1))?,
            threads: o.threads.unwrap_or(0),
            seed,
            out: o.out,
            dump_sketch: o.dump_sketch,
            timestamps: !o.no_timestamp,
            warnings,
        })
    }
}
