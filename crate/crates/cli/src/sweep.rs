use std::io::Write;

use clap::Args;
use diffsketch::privacy::{collision_term, sketch_epsilon, GradientStats};
use diffsketch::SketchDims;
use serde::Serialize;

use crate::error::CliError;
use crate::output::RecordSink;

/// Bins per row swept by default: each step roughly doubles or halves the
/// compression, and the upper end leaves the region where `eps` exists.
pub const DEFAULT_K_GRID: [usize; 9] = [16, 22, 32, 44, 64, 88, 128, 176, 256];

#[derive(Debug, Clone, Args)]
pub struct SweepOptions {
    #[arg(long, default_value_t = 1_000_000)]
    pub n: usize,
    #[arg(long, default_value_t = 7)]
    pub t: usize,
    /// Bound on the entries, in the same units as sigma.
    #[arg(long, default_value_t = 1.645)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    pub sigma2: f64,
    /// Comma-separated bins per row.
    #[arg(long, value_delimiter = ',', conflicts_with = "compression")]
    pub k: Vec<usize>,
    /// Comma-separated compression ratios; k = round(n / (t * ratio)).
    #[arg(long, value_delimiter = ',')]
    pub compression: Vec<f64>,
    #[arg(long)]
    pub out: Option<std::path::PathBuf>,
    #[arg(long)]
    pub no_timestamp: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            n: 1_000_000,
            t: 7,
            alpha: 1.645,
            sigma2: 1.0,
            k: Vec::new(),
            compression: Vec::new(),
            out: None,
            no_timestamp: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub k: usize,
    pub compression_ratio: f64,
    pub x: Option<f64>,
    /// `None` when undefined or invalid; see `status`.
    pub eps: Option<f64>,
    /// `defined`, `undefined` or `invalid`.
    pub status: &'static str,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSummary {
    pub points: usize,
    pub defined: usize,
    pub undefined: usize,
    pub invalid: usize,
    /// Adjacent pairs, in increasing compression, where `eps` went up.
    pub violations: usize,
    pub monotone: bool,
}

fn grid(o: &SweepOptions) -> Result<Vec<usize>, CliError> {
    if o.t == 0 {
        return Err(CliError::usage("--t must be positive"));
    }
    let ks: Vec<usize> = if !o.compression.is_empty() {
        o.compression
            .iter()
            .map(|&r| {
                if r > 0.0 && r.is_finite() {
                    Ok((o.n as f64 / (o.t as f64 * r)).round().max(1.0) as usize)
                } else {
                    Err(CliError::usage(format!(
                        "compression ratio must be positive, got {r}"
                    )))
                }
            })
            .collect::<Result<_, _>>()?
    } else if !o.k.is_empty() {
        o.k.clone()
    } else {
        DEFAULT_K_GRID.to_vec()
    };
    if ks.contains(&0) {
        return Err(CliError::usage("k must be positive"));
    }
    Ok(ks)
}

fn point(o: &SweepOptions, k: usize) -> SweepPoint {
    let ratio = o.n as f64 / (o.t * k) as f64;
    let eval = || -> diffsketch::Result<(f64, Option<f64>)> {
        let stats = GradientStats::new(o.alpha, o.sigma2, o.n)?;
        let dims = SketchDims::new(o.t, k, o.n)?;
        Ok((
            collision_term(&stats, &dims)?,
            sketch_epsilon(&stats, &dims)?,
        ))
    };
    match eval() {
        Ok((x, eps)) => SweepPoint {
            k,
            compression_ratio: ratio,
            x: Some(x),
            eps,
            status: if eps.is_some() {
                "defined"
            } else {
                "undefined"
            },
            error: None,
        },
        Err(e) => SweepPoint {
            k,
            compression_ratio: ratio,
            x: None,
            eps: None,
            status: "invalid",
            error: Some(e.to_string()),
        },
    }
}

/// Counts adjacent pairs, ordered by increasing compression, where `eps`
/// increases. Undefined counts as `+inf`; invalid points are skipped.
pub fn monotonicity_violations(points: &[SweepPoint]) -> usize {
    let mut valid: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.status != "invalid")
        .map(|p| (p.compression_ratio, p.eps.unwrap_or(f64::INFINITY)))
        .collect();
    valid.sort_by(|a, b| a.0.total_cmp(&b.0));
    valid.windows(2).filter(|w| w[1].1 > w[0].1).count()
}

pub fn privacy_sweep<W: Write>(
    o: &SweepOptions,
    sink: &mut RecordSink<W>,
) -> Result<(Vec<SweepPoint>, SweepSummary), CliError> {
    let points: Vec<SweepPoint> = grid(o)?.into_iter().map(|k| point(o, k)).collect();
    for p in &points {
        sink.emit("privacy_point", p)?;
    }
    let count = |s: &str| points.iter().filter(|p| p.status == s).count();
    let violations = monotonicity_violations(&points);
    let summary = SweepSummary {
        points: points.len(),
        defined: count("defined"),
        undefined: count("undefined"),
        invalid: count("invalid"),
        violations,
        monotone: violations == 0,
    };
    sink.emit("privacy_sweep_summary", &summary)?;
    Ok((points, summary))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(o: &SweepOptions) -> (Vec<SweepPoint>, SweepSummary) {
        privacy_sweep(o, &mut RecordSink::new(Vec::new(), false)).unwrap()
    }

    #[test]
    fn default_grid_mixes_defined_and_undefined() {
        let (points, s) = run(&SweepOptions::default());
        assert_eq!(points.len(), DEFAULT_K_GRID.len());
        assert!(s.defined > 0 && s.undefined > 0 && s.invalid == 0);
        assert!(s.monotone);
    }

    #[test]
    fn halving_k_lowers_eps() {
        let (points, _) = run(&SweepOptions {
            k: vec![64, 32, 16],
            ..Default::default()
        });
        let eps: Vec<f64> = points.iter().map(|p| p.eps.unwrap()).collect();
        assert!(eps[1] < eps[0] && eps[2] < eps[1]);
    }

    #[test]
    fn invalid_point_does_not_stop_sweep() {
        let (points, s) = run(&SweepOptions {
            n: 20,
            t: 1,
            k: vec![2, 25, 3],
            ..Default::default()
        });
        assert_eq!(points[1].status, "invalid");
        assert!(points[1].error.as_deref().unwrap().contains("n > k"));
        assert_eq!((s.points, s.invalid), (3, 1));
    }

    #[test]
    fn compression_grid_resolves_k() {
        let (points, _) = run(&SweepOptions {
            n: 7850,
            compression: vec![50.0, 75.0],
            ..Default::default()
        });
        assert_eq!((points[0].k, points[1].k), (22, 15));
    }

    #[test]
    fn violations_are_counted() {
        let mk = |r: f64, eps: Option<f64>| SweepPoint {
            k: 1,
            compression_ratio: r,
            x: None,
            eps,
            status: if eps.is_some() {
                "defined"
            } else {
                "undefined"
            },
            error: None,
        };
        assert_eq!(
            monotonicity_violations(&[mk(1.0, None), mk(2.0, Some(1.0)), mk(3.0, Some(0.5))]),
            0
        );
        assert_eq!(
            monotonicity_violations(&[mk(1.0, Some(1.0)), mk(2.0, None)]),
            1
        );
    }
}
