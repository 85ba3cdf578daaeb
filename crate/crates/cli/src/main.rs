use std::process::ExitCode;

use clap::{Parser, Subcommand};
use diffsketch_cli::bench::{sketch_bench, BenchOptions};
use diffsketch_cli::config::{env_seed, TrainOptions, TrainSettings};
use diffsketch_cli::output::{open_output, RecordSink};
use diffsketch_cli::sweep::{privacy_sweep, SweepOptions};
use diffsketch_cli::train::{grad_hist, train, GradHistOptions};
use diffsketch_cli::CliError;

#[derive(Parser)]
#[command(
    name = "diffsketch",
    version,
    about = "Count Sketch privacy and compression experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Empirical error of a sketch against its sizing.
    SketchBench(BenchOptions),
    /// Analytic eps over a grid of table widths.
    PrivacySweep(SweepOptions),
    /// Sketch-compressed distributed SGD or federated averaging.
    Train(TrainOptions),
    /// Gradient histograms of one seeded worker at chosen rounds.
    GradHist(GradHistOptions),
}

fn settings(opts: TrainOptions) -> Result<TrainSettings, CliError> {
    let s = TrainSettings::resolve(opts, env_seed().as_deref())?;
    for w in &s.warnings {
        eprintln!("warning: {w}");
    }
    Ok(s)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::SketchBench(o) => {
            let mut sink = RecordSink::new(open_output(o.out.as_deref())?, !o.no_timestamp);
            let summary = sketch_bench(&o, &mut sink)?;
            sink.into_inner()?;
            if summary.pass == Some(false) {
                eprintln!(
                    "error-quantile check failed: {:.4} < {:.4}",
                    summary.within_mu.unwrap_or(0.0),
                    summary.required.unwrap_or(1.0)
                );
            }
        }
        Command::PrivacySweep(o) => {
            let mut sink = RecordSink::new(open_output(o.out.as_deref())?, !o.no_timestamp);
            let (_, summary) = privacy_sweep(&o, &mut sink)?;
            sink.into_inner()?;
            if !summary.monotone {
                eprintln!(
                    "eps is not monotone in compression: {} violations",
                    summary.violations
                );
            }
        }
        Command::Train(o) => {
            let s = settings(o)?;
            let mut sink = RecordSink::new(open_output(s.out.as_deref())?, s.timestamps);
            train(&s, &mut sink)?;
            sink.into_inner()?;
        }
        Command::GradHist(o) => {
            let s = settings(o.train)?;
            let mut sink = RecordSink::new(open_output(s.out.as_deref())?, s.timestamps);
            grad_hist(&s, &o.at_rounds, o.bins, &mut sink)?;
            sink.into_inner()?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    // clap exits with 2 on usage errors and 0 on --help.
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("diffsketch: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
