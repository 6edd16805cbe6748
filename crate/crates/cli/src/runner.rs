//! Batch execution of an experiment manifest.
//!
//! Runs the expanded trial matrix on a bounded worker pool, writes one CSV
//! and one JSON log per run, then aggregates everything into two summary
//! tables: end-of-run metrics (mean ± std) and localization accuracy at
//! fixed sample-count checkpoints.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use rayon::prelude::*;

use infosample::metrics::{aggregate, default_checkpoints, Checkpoint, ExperimentSummary};
use infosample::sim::{run_trial, TrialConfig, TrialLog};

use crate::manifest::ExperimentManifest;
use crate::plot;

/// Execution knobs resolved from the manifest plus command-line overrides.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Worker threads; 0 uses one per core.
    pub jobs: usize,
    pub plots: bool,
}

impl RunOptions {
    pub fn from_manifest(m: &ExperimentManifest) -> RunOptions {
        RunOptions {
            out_dir: m.output_dir.clone(),
            jobs: m.jobs,
            plots: m.plots,
        }
    }
}

/// One run that failed, identified by its output file stem.
#[derive(Debug, Clone)]
pub struct RunFailure {
    pub stem: String,
    pub message: String,
}

/// Everything a finished batch produced.
#[derive(Debug)]
pub struct RunOutcome {
    /// Successful runs, in manifest expansion order.
    pub logs: Vec<TrialLog>,
    pub failures: Vec<RunFailure>,
    pub summaries: Vec<ExperimentSummary>,
    pub summary_metrics_path: PathBuf,
    pub summary_localization_path: PathBuf,
    pub plot_paths: Vec<PathBuf>,
}

impl RunOutcome {
    pub fn all_succeeded(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Runs every trial in the manifest and writes per-run logs, summaries, and
/// (optionally) plots under `opts.out_dir`. Successful runs are flushed to
/// disk even when other runs fail; failures are reported in the outcome
/// rather than aborting the batch.
pub fn run_experiment(
    manifest: &ExperimentManifest,
    opts: &RunOptions,
) -> anyhow::Result<RunOutcome> {
    let configs = manifest.trial_configs()?;
    fs::create_dir_all(&opts.out_dir)
        .with_context(|| format!("creating output directory {}", opts.out_dir.display()))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs)
        .build()
        .context("building worker pool")?;
    let results: Vec<Result<TrialLog, RunFailure>> = pool.install(|| {
        configs
            .par_iter()
            .map(|cfg| execute_one(cfg, &opts.out_dir))
            .collect()
    });

    let mut logs = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(log) => logs.push(log),
            Err(f) => failures.push(f),
        }
    }

    let summaries = summarize_logs(&logs)?;
    let (summary_metrics_path, summary_localization_path) =
        write_summaries(&summaries, &opts.out_dir)?;

    let plot_paths = if opts.plots && !logs.is_empty() {
        plot::emit_plots(&logs, &opts.out_dir)?
    } else {
        Vec::new()
    };

    Ok(RunOutcome {
        logs,
        failures,
        summaries,
        summary_metrics_path,
        summary_localization_path,
        plot_paths,
    })
}

fn execute_one(cfg: &TrialConfig, out_dir: &Path) -> Result<TrialLog, RunFailure> {
    let stem = cfg.file_stem();
    let fail = |message: String| RunFailure {
        stem: stem.clone(),
        message,
    };
    let log = run_trial(cfg).map_err(|e| fail(e.to_string()))?;
    write_log_files(&log, out_dir).map_err(|e| fail(e.to_string()))?;
    Ok(log)
}

/// Writes `<stem>.csv` and `<stem>.json` for one run.
pub fn write_log_files(log: &TrialLog, out_dir: &Path) -> std::io::Result<(PathBuf, PathBuf)> {
    let stem = log.config.file_stem();
    let csv_path = out_dir.join(format!("{stem}.csv"));
    let json_path = out_dir.join(format!("{stem}.json"));
    fs::write(&csv_path, log.to_csv_string())?;
    let mut json = serde_json::to_string_pretty(log).expect("logs always serialize");
    json.push('\n');
    fs::write(&json_path, json)?;
    Ok((csv_path, json_path))
}

/// Loads every `*.json` trial log under `dir`, sorted by file name so the
/// result is independent of directory iteration order.
pub fn load_logs(dir: &Path) -> anyhow::Result<Vec<TrialLog>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|x| x == "json")
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| !n.starts_with("summary"))
        })
        .collect();
    paths.sort();
    let mut logs = Vec::with_capacity(paths.len());
    for p in &paths {
        let text =
            fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let log: TrialLog = serde_json::from_str(&text)
            .with_context(|| format!("parsing {}", p.display()))?;
        logs.push(log);
    }
    if logs.is_empty() {
        anyhow::bail!("no trial logs (*.json) found in {}", dir.display());
    }
    Ok(logs)
}

/// Groups logs by scenario/variant (first-appearance order) and aggregates
/// each group at the default checkpoints.
pub fn summarize_logs(logs: &[TrialLog]) -> anyhow::Result<Vec<ExperimentSummary>> {
    let mut order: Vec<(String, String)> = Vec::new();
    let mut groups: Vec<Vec<&TrialLog>> = Vec::new();
    for log in logs {
        let key = (
            log.config.scenario.label().to_string(),
            log.config.strategy.label(),
        );
        match order.iter().position(|k| *k == key) {
            Some(i) => groups[i].push(log),
            None => {
                order.push(key);
                groups.push(vec![log]);
            }
        }
    }
    let mut out = Vec::with_capacity(groups.len());
    for ((scenario, strategy), group) in order.into_iter().zip(groups) {
        let runs: Vec<&[infosample::StepRecord]> =
            group.iter().map(|l| l.records.as_slice()).collect();
        let summary = aggregate(&scenario, &strategy, &runs, &default_checkpoints())?;
        out.push(summary);
    }
    Ok(out)
}

/// Writes `summary_metrics.csv` (end-of-run mean ± std per scenario/variant)
/// and `summary_localization.csv` (accuracy per checkpoint row).
pub fn write_summaries(
    summaries: &[ExperimentSummary],
    out_dir: &Path,
) -> anyhow::Result<(PathBuf, PathBuf)> {
    let metrics_path = out_dir.join("summary_metrics.csv");
    let loc_path = out_dir.join("summary_localization.csv");

    let mut m = String::from(
        "scenario,variant,runs,samples_mean,samples_std,rmse_mean,rmse_std,\
         variance_mean,variance_std,distance_m_mean,distance_m_std\n",
    );
    for s in summaries {
        let last = s
            .checkpoints
            .iter()
            .find(|c| c.checkpoint == Checkpoint::Last)
            .expect("default checkpoints include the final sample");
        m.push_str(&format!(
            "{},{},{},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4}\n",
            s.scenario,
            s.strategy,
            last.runs,
            last.samples.mean,
            last.samples.std_dev,
            last.rmse.mean,
            last.rmse.std_dev,
            last.mean_variance.mean,
            last.mean_variance.std_dev,
            last.distance_m.mean,
            last.distance_m.std_dev,
        ));
    }
    fs::write(&metrics_path, m).context("writing summary_metrics.csv")?;

    let mut l = String::from("scenario,variant,checkpoint,accuracy_pct,runs\n");
    for s in summaries {
        for c in &s.checkpoints {
            let pct = if c.runs == 0 {
                String::from("")
            } else {
                format!("{:.1}", 100.0 * c.localization_accuracy)
            };
            l.push_str(&format!(
                "{},{},{},{},{}\n",
                s.scenario,
                s.strategy,
                c.checkpoint.label(),
                pct,
                c.runs,
            ));
        }
    }
    fs::write(&loc_path, l).context("writing summary_localization.csv")?;

    Ok((metrics_path, loc_path))
}

/// Renders both summary tables as aligned text for the terminal.
pub fn render_summary_tables(summaries: &[ExperimentSummary]) -> String {
    let mut out = String::new();
    let scenarios: Vec<&str> = {
        let mut seen = Vec::new();
        for s in summaries {
            if !seen.contains(&s.scenario.as_str()) {
                seen.push(s.scenario.as_str());
            }
        }
        seen
    };

    for scenario in &scenarios {
        out.push_str(&format!(
            "\n== {scenario}: end of run (mean ± std) ==\n{:<16}{:>7}  {:>17}  {:>15}  {:>17}  {:>19}\n",
            "variant", "runs", "samples", "rmse_db", "variance_db2", "distance_m"
        ));
        for s in summaries.iter().filter(|s| s.scenario == *scenario) {
            let last = s
                .checkpoints
                .iter()
                .find(|c| c.checkpoint == Checkpoint::Last)
                .expect("default checkpoints include the final sample");
            out.push_str(&format!(
                "{:<16}{:>7}  {:>9.1} ± {:>5.1}  {:>7.2} ± {:>4.2}  {:>9.2} ± {:>5.2}  {:>10.1} ± {:>6.1}\n",
                s.strategy,
                last.runs,
                last.samples.mean,
                last.samples.std_dev,
                last.rmse.mean,
                last.rmse.std_dev,
                last.mean_variance.mean,
                last.mean_variance.std_dev,
                last.distance_m.mean,
                last.distance_m.std_dev,
            ));
        }

        out.push_str(&format!(
            "\n== {scenario}: localization accuracy % by sample count ==\n{:<16}",
            "variant"
        ));
        for cp in default_checkpoints() {
            out.push_str(&format!("{:>7}", cp.label()));
        }
        out.push('\n');
        for s in summaries.iter().filter(|s| s.scenario == *scenario) {
            out.push_str(&format!("{:<16}", s.strategy));
            for c in &s.checkpoints {
                if c.runs == 0 {
                    out.push_str(&format!("{:>7}", "-"));
                } else {
                    out.push_str(&format!("{:>7.0}", 100.0 * c.localization_accuracy));
                }
            }
            out.push('\n');
        }
    }
    out
}
