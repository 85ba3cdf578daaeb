use std::io::Write;

use clap::{Args, ValueEnum};
use diffsketch::rng::{round_sketch_seed, stream, Purpose};
use diffsketch::sketch::{dims_for_error, sketch_of};
use diffsketch::{Scalar, SketchDims};
use rand::Rng;
use serde::Serialize;

use crate::config::{env_seed, resolve_seed};
use crate::error::CliError;
use crate::output::RecordSink;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputKind {
    /// i.i.d. N(0, 1) entries.
    Gaussian,
    /// A single N(0, 1) entry at a random coordinate.
    OneHot,
}

#[derive(Debug, Clone, Args)]
pub struct BenchOptions {
    /// Target relative error; sizes the table together with --delta.
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub t: Option<usize>,
    /// Bins per row, or `n` for one bin per coordinate.
    #[arg(long)]
    pub k: Option<String>,
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[arg(long, default_value_t = 50)]
    pub trials: usize,
    #[arg(long, value_enum, default_value_t = InputKind::Gaussian)]
    pub input: InputKind,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<std::path::PathBuf>,
    #[arg(long)]
    pub no_timestamp: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub norm: f64,
    pub max_abs_error: f64,
    /// Quantiles of `|err_i| / ||g||`.
    pub rel_error_q50: f64,
    pub rel_error_q90: f64,
    pub rel_error_q99: f64,
    /// Share of coordinates with `|err_i| <= mu ||g||`.
    pub within_mu: Option<f64>,
    /// Error at the nonzero coordinate of a one-hot input.
    pub hot_error: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchSummary {
    pub t: usize,
    pub k: usize,
    pub n: usize,
    pub trials: usize,
    pub input: InputKind,
    pub mu: Option<f64>,
    pub delta: Option<f64>,
    pub max_abs_error: f64,
    pub max_hot_error: Option<f64>,
    pub within_mu: Option<f64>,
    /// `1 - delta - 0.01`.
    pub required: Option<f64>,
    pub pass: Option<bool>,
}

struct Plan {
    t: usize,
    k: usize,
    mu: Option<f64>,
    delta: Option<f64>,
}

fn plan(o: &BenchOptions) -> Result<Plan, CliError> {
    let by_error = o.mu.is_some() || o.delta.is_some();
    let by_table = o.t.is_some() || o.k.is_some();
    match (by_error, by_table) {
        (true, true) => Err(CliError::usage(
            "give either --mu/--delta or --t/--k, not both",
        )),
        (false, false) => Err(CliError::usage(
            "sketch-bench needs --mu and --delta, or --t and --k",
        )),
        (true, false) => {
            let (Some(mu), Some(delta)) = (o.mu, o.delta) else {
                return Err(CliError::usage("--mu and --delta go together"));
            };
            let (t, k) = dims_for_error(mu, delta).map_err(|e| CliError::usage(e.to_string()))?;
            Ok(Plan {
                t,
                k,
                mu: Some(mu),
                delta: Some(delta),
            })
        }
        (false, true) => {
            let (Some(t), Some(k)) = (o.t, o.k.as_deref()) else {
                return Err(CliError::usage("--t and --k go together"));
            };
            let k = match k {
                "n" => o.n,
                s => s.parse().map_err(|_| {
                    CliError::usage(format!("--k expects a count or `n`, got {s:?}"))
                })?,
            };
            Ok(Plan {
                t,
                k,
                mu: None,
                delta: None,
            })
        }
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let idx = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1;
    sorted[idx]
}

pub fn sketch_bench<W: Write>(
    o: &BenchOptions,
    sink: &mut RecordSink<W>,
) -> Result<BenchSummary, CliError> {
    let p = plan(o)?;
    if o.trials == 0 {
        return Err(CliError::usage("--trials must be positive"));
    }
    let dims = SketchDims::new(p.t, p.k, o.n).map_err(|e| CliError::usage(e.to_string()))?;
    let seed = resolve_seed(o.seed, env_seed().as_deref(), None)?;

    let mut within_total = 0usize;
    let mut max_abs = 0.0f64;
    let mut max_hot = None;
    for trial in 0..o.trials {
        let mut rng = stream(seed, Purpose::Diagnostics, trial as u64, 0);
        let (g, hot): (Vec<f64>, Option<usize>) = match o.input {
            InputKind::Gaussian => (
                (0..o.n)
                    .map(|_| f64::sample_standard_normal(&mut rng))
                    .collect(),
                None,
            ),
            InputKind::OneHot => {
                let mut g = vec![0.0; o.n];
                let i = rng.random_range(0..o.n);
                g[i] = f64::sample_standard_normal(&mut rng);
                (g, Some(i))
            }
        };
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        let est = sketch_of(dims, round_sketch_seed(seed, trial as u64), &g)?.query_all();
        let errs: Vec<f64> = est.iter().zip(&g).map(|(e, v)| (e - v).abs()).collect();
        let trial_max = errs.iter().copied().fold(0.0, f64::max);
        max_abs = max_abs.max(trial_max);
        let hot_error = hot.map(|i| errs[i]);
        if let Some(e) = hot_error {
            max_hot = Some(max_hot.unwrap_or(0.0f64).max(e));
        }
        let within =
            p.mu.map(|mu| errs.iter().filter(|&&e| e <= mu * norm).count());
        within_total += within.unwrap_or(0);
        let mut rel: Vec<f64> = errs
            .iter()
            .map(|e| if norm > 0.0 { e / norm } else { 0.0 })
            .collect();
        rel.sort_by(f64::total_cmp);
        sink.emit(
            "sketch_trial",
            &TrialRecord {
                trial,
                norm,
                max_abs_error: trial_max,
                rel_error_q50: quantile(&rel, 0.5),
                rel_error_q90: quantile(&rel, 0.9),
                rel_error_q99: quantile(&rel, 0.99),
                within_mu: within.map(|w| w as f64 / o.n as f64),
                hot_error,
            },
        )?;
    }
    let within_mu = p.mu.map(|_| within_total as f64 / (o.trials * o.n) as f64);
    let required = p.delta.map(|d| 1.0 - d - 0.01);
    let summary = BenchSummary {
        t: p.t,
        k: p.k,
        n: o.n,
        trials: o.trials,
        input: o.input,
        mu: p.mu,
        delta: p.delta,
        max_abs_error: max_abs,
        max_hot_error: max_hot,
        within_mu,
        required,
        pass: within_mu.zip(required).map(|(w, r)| w >= r),
    };
    sink.emit("sketch_bench_summary", &summary)?;
    Ok(summary)
}
