//! `report`: pool traces into mean ± standard-error curves.
//!
//! Traces whose sibling `manifest.json` records the same setting hash are
//! pooled into one group; a trace without a manifest forms its own group.
//! Within a group each `(file, trial)` pair is one sample path.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use byzasync::sim::{mean_stderr, TRACE_HEADER};

use crate::run::{RunManifest, MANIFEST_FILE};
use crate::{float17, svg, CliError, CliResult};

/// One parsed `trace.csv` row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub trial: usize,
    pub t: u64,
    pub excess_loss: f64,
    pub grad_error_sq: f64,
    pub tau_max: u64,
    pub honest_frac: f64,
}

pub fn parse_trace_csv(text: &str, origin: &str) -> CliResult<Vec<TracePoint>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| CliError::input(format!("{origin}: {e}")))?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if header != TRACE_HEADER {
        return Err(CliError::input(format!(
            "{origin}: schema mismatch: header '{header}', expected '{TRACE_HEADER}'"
        )));
    }
    let mut rows = Vec::new();
    for (n, record) in reader.records().enumerate() {
        // Line 1 is the header.
        let line = n + 2;
        let record = record.map_err(|e| CliError::input(format!("{origin}:{line}: {e}")))?;
        let field = |k: usize| record.get(k).unwrap_or("");
        let bad = |k: usize| CliError::input(format!("{origin}:{line}: schema mismatch in column {}", k + 1));
        let int = |k: usize| field(k).parse::<u64>().map_err(|_| bad(k));
        let float = |k: usize| field(k).parse::<f64>().map_err(|_| bad(k));
        rows.push(TracePoint {
            trial: int(0)? as usize,
            t: int(1)?,
            excess_loss: float(2)?,
            grad_error_sq: float(3)?,
            tau_max: int(4)?,
            honest_frac: float(5)?,
        });
    }
    Ok(rows)
}

/// Mean and standard error of excess loss at one `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub t: u64,
    pub n: usize,
    pub mean: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub label: String,
    pub files: Vec<PathBuf>,
    pub curve: Vec<CurvePoint>,
}

impl Group {
    /// The curve point at the largest `t`.
    pub fn last(&self) -> Option<&CurvePoint> {
        self.curve.last()
    }
}

/// Files of one group and their excess losses keyed by `t`.
type Pool = (Vec<PathBuf>, BTreeMap<u64, Vec<f64>>);

/// Builds curves from already-parsed traces. Paths sharing a `key` are
/// pooled; groups keep the order of their first appearance.
pub fn summarize(traces: &[(String, PathBuf, Vec<TracePoint>)]) -> Vec<Group> {
    let mut order: Vec<&str> = Vec::new();
    let mut by_key: BTreeMap<&str, Pool> = BTreeMap::new();
    for (key, path, rows) in traces {
        let entry = by_key.entry(key.as_str()).or_insert_with(|| {
            order.push(key.as_str());
            (Vec::new(), BTreeMap::new())
        });
        entry.0.push(path.clone());
        for r in rows {
            entry.1.entry(r.t).or_default().push(r.excess_loss);
        }
    }
    order
        .into_iter()
        .map(|key| {
            let (files, by_t) = &by_key[key];
            let curve = by_t
                .iter()
                .map(|(&t, values)| {
                    let (mean, stderr) = mean_stderr(values);
                    CurvePoint { t, n: values.len(), mean, stderr }
                })
                .collect();
            Group {
                label: group_label(files),
                files: files.clone(),
                curve,
            }
        })
        .collect()
}

fn group_label(files: &[PathBuf]) -> String {
    let name = |p: &PathBuf| {
        p.parent()
            .and_then(Path::file_name)
            .map(|n| n.to_string_lossy().into_owned())
            .filter(|n| !n.is_empty())
            .unwrap_or_else(|| p.display().to_string())
    };
    match files {
        [one] => name(one),
        [first, rest @ ..] => format!("{} (+{} pooled)", name(first), rest.len()),
        [] => String::new(),
    }
}

/// Setting hash from the manifest beside `trace`, if there is one.
fn pooling_key(trace: &Path) -> Option<String> {
    let manifest = trace.parent()?.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(manifest).ok()?;
    let m: RunManifest = serde_json::from_str(&text).ok()?;
    Some(m.setting_hash)
}

pub fn load_traces(paths: &[PathBuf]) -> CliResult<Vec<(String, PathBuf, Vec<TracePoint>)>> {
    if paths.is_empty() {
        return Err(CliError::input("report needs at least one trace file"));
    }
    paths
        .iter()
        .map(|p| {
            let origin = p.display().to_string();
            let text = std::fs::read_to_string(p).map_err(|e| CliError::input(format!("{origin}: {e}")))?;
            let rows = parse_trace_csv(&text, &origin)?;
            let key = pooling_key(p).unwrap_or_else(|| format!("file:{origin}"));
            Ok((key, p.clone(), rows))
        })
        .collect()
}

pub fn format_table(groups: &[Group]) -> String {
    let mut out = String::from("group\tfiles\tsamples\tt\tmean_excess_loss\tstderr_excess_loss\n");
    for g in groups {
        if let Some(p) = g.last() {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                g.label,
                g.files.len(),
                p.n,
                p.t,
                float17(p.mean),
                float17(p.stderr)
            ));
        }
    }
    out
}

pub fn cmd_report(paths: &[PathBuf], plot: Option<&Path>) -> CliResult<String> {
    let groups = summarize(&load_traces(paths)?);
    if let Some(path) = plot {
        let series: Vec<svg::Series> = groups
            .iter()
            .map(|g| svg::Series {
                label: g.label.clone(),
                points: g.curve.iter().map(|p| (p.t as f64, p.mean, p.stderr)).collect(),
            })
            .collect();
        std::fs::write(path, svg::line_chart(&series, "t", "excess loss"))
            .map_err(|e| CliError::Runtime(anyhow::anyhow!("writing {}: {e}", path.display())))?;
    }
    Ok(format_table(&groups))
}
