//! Command-line front end for the adaptive sampling simulator.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use infosample::sim::derive_trial_seed;
use infosample::{FieldParams, GridSpec, Point};
use infosample_cli::runner::{
    load_logs, render_summary_tables, run_experiment, summarize_logs, write_summaries,
    RunOptions,
};
use infosample_cli::{parse_manifest, plot};

#[derive(Parser)]
#[command(
    name = "infosample",
    about = "Deterministic adaptive-sampling experiments over a simulated signal field",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run every trial in a manifest and write logs, summaries, and plots.
    Run(RunArgs),
    /// Render SVG charts from a directory of per-run JSON logs.
    Plot {
        /// Directory containing <run>.json files from a previous `run`.
        logdir: PathBuf,
        /// Where to write the SVGs (defaults to the log directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute and print the summary tables from per-run JSON logs.
    Summarize {
        /// Directory containing <run>.json files from a previous `run`.
        logdir: PathBuf,
    },
    /// Inspect the simulated ground-truth field.
    Field(FieldArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment manifest.
    manifest: PathBuf,
    /// Output directory (overrides the manifest).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (overrides the manifest; 0 = one per core).
    #[arg(long)]
    jobs: Option<usize>,
    /// Base seed for trial derivation (overrides the manifest).
    #[arg(long)]
    seed: Option<u64>,
    /// Skip SVG chart emission.
    #[arg(long)]
    no_plots: bool,
}

#[derive(Args)]
struct FieldArgs {
    /// Print the ground-truth field as CSV (x_m,y_m,rss_dbm).
    #[arg(long)]
    preview: bool,
    /// Source position as "x,y" in meters.
    #[arg(long, value_parser = parse_point, default_value = "4,7")]
    source: Point,
    /// Base seed; the preview uses the first trial's derived seed.
    #[arg(long, default_value_t = infosample::sim::DEFAULT_BASE_SEED)]
    seed: u64,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_point(s: &str) -> Result<Point, String> {
    let (x, y) = s
        .split_once(',')
        .ok_or_else(|| format!("expected \"x,y\", got {s:?}"))?;
    let x: f64 = x.trim().parse().map_err(|e| format!("bad x: {e}"))?;
    let y: f64 = y.trim().parse().map_err(|e| format!("bad y: {e}"))?;
    Ok(Point::new(x, y))
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.cmd {
        Cmd::Run(args) => {
            let mut manifest = parse_manifest(&args.manifest)
                .with_context(|| format!("loading {}", args.manifest.display()))?;
            if let Some(seed) = args.seed {
                manifest.base_seed = seed;
            }
            let mut opts = RunOptions::from_manifest(&manifest);
            if let Some(out) = args.out {
                opts.out_dir = out;
            }
            if let Some(jobs) = args.jobs {
                opts.jobs = jobs;
            }
            if args.no_plots {
                opts.plots = false;
            }

            let n = manifest.run_count();
            println!(
                "running {n} trials ({} scenarios x {} variants x {} sources x {} trials) -> {}",
                manifest.scenarios.len(),
                manifest.variants.len(),
                manifest.sources.len(),
                manifest.trials,
                opts.out_dir.display(),
            );
            let outcome = run_experiment(&manifest, &opts)?;
            print!("{}", render_summary_tables(&outcome.summaries));
            println!(
                "\nwrote {} runs, {} and {}",
                outcome.logs.len(),
                outcome.summary_metrics_path.display(),
                outcome.summary_localization_path.display(),
            );
            if !outcome.plot_paths.is_empty() {
                println!("wrote {} plot files", outcome.plot_paths.len());
            }
            if !outcome.failures.is_empty() {
                for f in &outcome.failures {
                    eprintln!("FAILED {}: {}", f.stem, f.message);
                }
                eprintln!("{} of {n} runs failed", outcome.failures.len());
                return Ok(ExitCode::FAILURE);
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Plot { logdir, out } => {
            let logs = load_logs(&logdir)?;
            let dir = out.unwrap_or_else(|| logdir.clone());
            let written = plot::emit_plots(&logs, &dir)?;
            println!("wrote {} plot files to {}", written.len(), dir.display());
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Summarize { logdir } => {
            let logs = load_logs(&logdir)?;
            let summaries = summarize_logs(&logs)?;
            let (m, l) = write_summaries(&summaries, &logdir)?;
            print!("{}", render_summary_tables(&summaries));
            println!("\nrewrote {} and {}", m.display(), l.display());
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Field(args) => {
            if !args.preview {
                anyhow::bail!("nothing to do; pass --preview to emit the ground-truth CSV");
            }
            let grid = GridSpec::default();
            let params = FieldParams {
                source: args.source,
                ..FieldParams::default()
            };
            let seed = derive_trial_seed(args.seed, 0, 0);
            let field = infosample::field::generate(&grid, &params, seed)?;
            let mut csv = String::from("x_m,y_m,rss_dbm\n");
            for (cell, value) in grid.cell_centers().iter().zip(field.values().iter()) {
                csv.push_str(&format!("{},{},{}\n", cell.x, cell.y, value));
            }
            match args.out {
                Some(path) => {
                    std::fs::write(&path, csv)
                        .with_context(|| format!("writing {}", path.display()))?;
                    println!("wrote {}", path.display());
                }
                None => print!("{csv}"),
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
