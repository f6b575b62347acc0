//! `run` and `sweep`: execute configurations and write their artifacts.

use std::path::{Path, PathBuf};

use anyhow::Context;
use byzasync::scheduler::delay_stats;
use byzasync::sim::{self, format_trace_csv, mean_stderr, robustness_coefficient, AssertLevel, RunOutput, SweepAxis};
use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::{self, LoadedConfig};
use crate::{float17, CliError, CliResult};

pub const TRACE_FILE: &str = "trace.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Provenance record written next to every trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    /// Hash without seed, trial count and assertion level; equal values
    /// mean the traces may be pooled.
    pub setting_hash: String,
    pub seed: u64,
    pub trials: usize,
    pub started_at: String,
    pub finished_at: String,
    pub versions: Versions,
    pub outputs: Outputs,
    pub config: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub byzasync: String,
    pub byzasync_cli: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outputs {
    pub trace: PathBuf,
    pub summary: PathBuf,
    pub manifest: PathBuf,
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub trials: Option<usize>,
    pub seed: Option<u64>,
    pub assert_level: Option<AssertLevel>,
}

impl Overrides {
    pub fn apply(&self, loaded: &mut LoadedConfig) {
        if let Some(t) = self.trials {
            loaded.config.trials = t;
        }
        if let Some(s) = self.seed {
            loaded.config.seed = s;
        }
        if let Some(a) = self.assert_level {
            loaded.config.assert_level = a;
        }
    }
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

fn faults_error(output: &RunOutput) -> Option<anyhow::Error> {
    let faults: Vec<String> = output.faults().map(|(trial, msg)| format!("trial {trial}: {msg}")).collect();
    (!faults.is_empty()).then(|| anyhow::anyhow!("simulation faulted: {}", faults.join("; ")))
}

/// Per-trial summary rows.
fn write_summary(path: &Path, output: &RunOutput, workers: usize) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "trial",
        "final_t",
        "final_excess_loss",
        "byzantine_arrivals",
        "tau_max",
        "k_estimate",
        "drift_checks",
        "drift_violations",
        "fault",
    ])?;
    for trial in &output.trials {
        let delays = delay_stats(&trial.arrivals, workers);
        w.write_record([
            trial.trial.to_string(),
            trial.arrivals.last().map_or(0, |e| e.t).to_string(),
            float17(trial.final_excess_loss),
            trial.byzantine_arrivals.to_string(),
            delays.tau_max.iter().max().copied().unwrap_or(0).to_string(),
            float17(delays.k_estimate),
            trial.drift_checks.to_string(),
            trial.drift_violations.to_string(),
            trial.fault.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `trace.csv`, `summary.csv` and `manifest.json` for one run.
pub fn write_run(out: &Path, loaded: &LoadedConfig, output: &RunOutput, started_at: String) -> anyhow::Result<RunManifest> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let outputs = Outputs {
        trace: out.join(TRACE_FILE),
        summary: out.join(SUMMARY_FILE),
        manifest: out.join(MANIFEST_FILE),
    };
    std::fs::write(&outputs.trace, format_trace_csv(output.rows()))
        .with_context(|| format!("writing {}", outputs.trace.display()))?;
    write_summary(&outputs.summary, output, loaded.config.schedule.workers())
        .with_context(|| format!("writing {}", outputs.summary.display()))?;
    let cfg = &loaded.config;
    let manifest = RunManifest {
        config_hash: config::config_hash(cfg),
        setting_hash: config::setting_hash(cfg),
        seed: cfg.seed,
        trials: cfg.trials,
        started_at,
        finished_at: now(),
        versions: Versions {
            byzasync: byzasync::VERSION.to_string(),
            byzasync_cli: env!("CARGO_PKG_VERSION").to_string(),
        },
        outputs: outputs.clone(),
        config: serde_json::to_value(cfg)?,
    };
    std::fs::write(&outputs.manifest, serde_json::to_string_pretty(&manifest)? + "\n")
        .with_context(|| format!("writing {}", outputs.manifest.display()))?;
    Ok(manifest)
}

/// Runs a configuration file; returns a one-line summary for stdout.
pub fn cmd_run(config_path: &Path, out: &Path, overrides: Overrides) -> CliResult<String> {
    let mut loaded = config::load(config_path)?;
    overrides.apply(&mut loaded);
    loaded.finish()?;
    let started_at = now();
    let output = sim::run(&loaded.config).map_err(|e| CliError::Runtime(e.into()))?;
    let manifest = write_run(out, &loaded, &output, started_at)?;
    if let Some(err) = faults_error(&output) {
        return Err(CliError::Runtime(err));
    }
    let (mean, stderr) = mean_stderr(&output.final_excess_losses());
    Ok(format!(
        "{} trial(s), final excess loss {mean:.6e} ± {stderr:.2e}, config {}",
        manifest.trials,
        &manifest.config_hash[..12]
    ))
}

/// Directory name for one sweep value.
fn point_dir(axis: SweepAxis, value: &str) -> String {
    let name = serde_json::to_value(axis).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
    let clean: String = value
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '+' | '_') { c } else { '_' })
        .collect();
    format!("{name}={clean}")
}

/// Runs one configuration per value of `axis`; each gets its own
/// subdirectory of `out`, and `out/summary.csv` has one row per value.
pub fn cmd_sweep(config_path: &Path, axis: &str, values: &[String], out: &Path, overrides: Overrides) -> CliResult<String> {
    let mut loaded = config::load(config_path)?;
    overrides.apply(&mut loaded);
    loaded.finish()?;
    let axis: SweepAxis = axis.parse().map_err(|e: byzasync::Error| CliError::input(e.to_string()))?;
    if values.is_empty() {
        return Err(CliError::input("sweep needs at least one value"));
    }
    let configs = values
        .iter()
        .map(|v| axis.apply(&loaded.config, v).map_err(|e| CliError::input(format!("value '{v}': {e}"))))
        .collect::<CliResult<Vec<_>>>()?;

    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let summary_path = out.join(SUMMARY_FILE);
    let mut summary = csv::Writer::from_path(&summary_path).with_context(|| format!("writing {}", summary_path.display()))?;
    summary
        .write_record(["value", "trials", "mean_final_excess_loss", "stderr_final_excess_loss", "c_lambda", "config_hash", "trace"])
        .map_err(anyhow::Error::from)?;
    let mut faults = Vec::new();
    for (value, cfg) in values.iter().zip(configs) {
        let started_at = now();
        let output = sim::run(&cfg).map_err(|e| CliError::Runtime(e.into()))?;
        let point = LoadedConfig {
            config: cfg,
            ..loaded.clone()
        };
        let manifest = write_run(&out.join(point_dir(axis, value)), &point, &output, started_at)?;
        let (mean, stderr) = mean_stderr(&output.final_excess_losses());
        summary
            .write_record([
                value.clone(),
                manifest.trials.to_string(),
                float17(mean),
                float17(stderr),
                float17(robustness_coefficient(&point.config)),
                manifest.config_hash.clone(),
                manifest.outputs.trace.display().to_string(),
            ])
            .map_err(anyhow::Error::from)?;
        if let Some(err) = faults_error(&output) {
            faults.push(format!("{value}: {err}"));
        }
    }
    summary.flush().map_err(anyhow::Error::from)?;
    if !faults.is_empty() {
        return Err(CliError::Runtime(anyhow::anyhow!(faults.join("\n"))));
    }
    Ok(format!("{} sweep point(s) written to {}", values.len(), out.display()))
}
