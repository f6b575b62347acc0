//! Arrival schedules.
//!
//! A schedule decides which worker reaches the server at each iteration.
//! Delays are never sampled directly; they are read off the arrival
//! sequence as the number of iterations since the worker's previous arrival.
//!
//! Workers are numbered `0..honest` for honest workers followed by
//! `honest..honest + byzantine` for Byzantine ones. Within each group the
//! `k`-th worker (1-based id `k`) arrives with probability proportional to
//! `k` (or `k²` for [`ScheduleKind::SquaredId`]).
//!
//! Every generated schedule keeps the Byzantine share of arrivals within
//! budget: after `t` iterations at most `λ·t` arrivals are Byzantine. A
//! Byzantine draw that would break this is replaced by an honest draw.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::StreamRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    /// Independent categorical draws; honest rates default to `∝ id`.
    IidCategorical,
    /// Independent categorical draws with rates `∝ id²`.
    SquaredId,
    /// `0, 1, …, m−1, 0, 1, …` with Byzantine workers last in the cycle.
    RoundRobin,
    /// Replays a recorded arrival sequence.
    TraceFile,
    /// Honest-only until `byzantine_start`, then Byzantine whenever the
    /// budget allows, so Byzantine arrivals come in a concentrated burst.
    BurstThenLambda,
}

/// One replayable arrival, as stored in a trace file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordedArrival {
    pub t: u64,
    pub worker: usize,
    pub is_byzantine: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
    pub honest: usize,
    #[serde(default)]
    pub byzantine: usize,
    /// Target Byzantine share of arrivals.
    #[serde(default)]
    pub lambda: f64,
    /// Explicit honest arrival rates for `iid-categorical` (normalised).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rates: Option<Vec<f64>>,
    /// First iteration at which `burst-then-lambda` admits Byzantine arrivals.
    #[serde(default)]
    pub byzantine_start: u64,
    /// Path of the trace to replay for `trace-file`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_file: Option<String>,
    /// Loaded events for `trace-file`; filled in by the caller.
    #[serde(skip)]
    pub replay: Option<Arc<Vec<RecordedArrival>>>,
}

impl ScheduleSpec {
    pub fn new(kind: ScheduleKind, honest: usize, byzantine: usize, lambda: f64) -> Self {
        Self {
            kind,
            honest,
            byzantine,
            lambda,
            rates: None,
            byzantine_start: 0,
            trace_file: None,
            replay: None,
        }
    }

    pub fn workers(&self) -> usize {
        self.honest + self.byzantine
    }

    pub fn is_byzantine(&self, worker: usize) -> bool {
        worker >= self.honest
    }

    pub fn validate(&self) -> Result<()> {
        if self.honest == 0 {
            return Err(Error::config("schedule.honest", "must be >= 1"));
        }
        if !(0.0..0.5).contains(&self.lambda) {
            return Err(Error::config("schedule.lambda", format!("{} must be >= 0 and < 0.5", self.lambda)));
        }
        if let Some(rates) = &self.rates {
            if self.kind != ScheduleKind::IidCategorical {
                return Err(Error::config("schedule.rates", "only used by iid-categorical"));
            }
            if rates.len() != self.honest {
                return Err(Error::config(
                    "schedule.rates",
                    format!("expected {} rates, got {}", self.honest, rates.len()),
                ));
            }
            if rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) || !(rates.iter().sum::<f64>() > 0.0) {
                return Err(Error::config("schedule.rates", "rates must be nonnegative with a positive sum"));
            }
        }
        if self.kind == ScheduleKind::RoundRobin && self.byzantine > 0 {
            let share = self.byzantine as f64 / self.workers() as f64;
            if self.lambda < share {
                return Err(Error::config(
                    "schedule.lambda",
                    format!("round-robin with {} Byzantine of {} workers needs lambda >= {share}", self.byzantine, self.workers()),
                ));
            }
        }
        if self.kind == ScheduleKind::TraceFile && self.trace_file.is_none() && self.replay.is_none() {
            return Err(Error::config("schedule.trace_file", "required for kind = \"trace-file\""));
        }
        Ok(())
    }

    fn honest_probabilities(&self) -> Vec<f64> {
        let raw: Vec<f64> = match (&self.rates, self.kind) {
            (Some(r), _) => r.clone(),
            (None, ScheduleKind::SquaredId) => (1..=self.honest).map(|k| (k * k) as f64).collect(),
            _ => (1..=self.honest).map(|k| k as f64).collect(),
        };
        normalise(raw)
    }

    fn byzantine_probabilities(&self) -> Vec<f64> {
        let raw: Vec<f64> = match self.kind {
            ScheduleKind::SquaredId => (1..=self.byzantine).map(|k| (k * k) as f64).collect(),
            _ => (1..=self.byzantine).map(|k| k as f64).collect(),
        };
        normalise(raw)
    }

    /// Arrival probabilities of the honest group, in worker order.
    pub fn honest_arrival_probabilities(&self) -> Vec<f64> {
        self.honest_probabilities()
    }
}

fn normalise(raw: Vec<f64>) -> Vec<f64> {
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|r| r / total).collect()
}

fn cumulative(p: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut c: Vec<f64> = p
        .iter()
        .map(|v| {
            acc += v;
            acc
        })
        .collect();
    if let Some(last) = c.last_mut() {
        *last = 1.0;
    }
    c
}

fn draw(cdf: &[f64], rng: &mut StreamRng) -> usize {
    let u: f64 = rng.random();
    cdf.iter().position(|&c| u < c).unwrap_or(cdf.len() - 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArrivalEvent {
    pub t: u64,
    pub worker: usize,
    pub is_byzantine: bool,
    /// Iterations since this worker's previous arrival (`t` on a first
    /// arrival; the cycle length for round-robin).
    pub tau: u64,
}

impl From<ArrivalEvent> for RecordedArrival {
    fn from(e: ArrivalEvent) -> Self {
        RecordedArrival {
            t: e.t,
            worker: e.worker,
            is_byzantine: e.is_byzantine,
        }
    }
}

/// Stateful arrival generator for one trial.
#[derive(Debug, Clone)]
pub struct Scheduler {
    spec: ScheduleSpec,
    rng: StreamRng,
    honest_cdf: Vec<f64>,
    byzantine_cdf: Vec<f64>,
    t: u64,
    byzantine_so_far: u64,
    last_arrival: Vec<u64>,
}

impl Scheduler {
    pub fn new(spec: &ScheduleSpec, rng: StreamRng) -> Result<Self> {
        spec.validate()?;
        if spec.kind == ScheduleKind::TraceFile && spec.replay.is_none() {
            return Err(Error::InvalidState("trace-file schedule has no loaded events".into()));
        }
        Ok(Self {
            honest_cdf: cumulative(&spec.honest_probabilities()),
            byzantine_cdf: cumulative(&spec.byzantine_probabilities()),
            spec: spec.clone(),
            rng,
            t: 0,
            byzantine_so_far: 0,
            last_arrival: vec![0; spec.workers()],
        })
    }

    pub fn spec(&self) -> &ScheduleSpec {
        &self.spec
    }

    /// Byzantine arrivals emitted so far.
    pub fn byzantine_so_far(&self) -> u64 {
        self.byzantine_so_far
    }

    fn budget_allows_byzantine(&self, t: u64) -> bool {
        self.spec.byzantine > 0 && (self.byzantine_so_far + 1) as f64 <= self.spec.lambda * t as f64
    }

    fn honest_draw(&mut self) -> usize {
        draw(&self.honest_cdf, &mut self.rng)
    }

    fn byzantine_draw(&mut self) -> usize {
        self.spec.honest + draw(&self.byzantine_cdf, &mut self.rng)
    }

    pub fn next_arrival(&mut self) -> Result<ArrivalEvent> {
        let t = self.t + 1;
        let m = self.spec.workers();
        let worker = match self.spec.kind {
            ScheduleKind::IidCategorical | ScheduleKind::SquaredId => {
                let wants_byzantine = self.spec.byzantine > 0 && self.rng.random::<f64>() < self.spec.lambda;
                if wants_byzantine && self.budget_allows_byzantine(t) {
                    self.byzantine_draw()
                } else {
                    self.honest_draw()
                }
            }
            ScheduleKind::BurstThenLambda => {
                if t >= self.spec.byzantine_start && self.budget_allows_byzantine(t) {
                    self.byzantine_draw()
                } else {
                    self.honest_draw()
                }
            }
            ScheduleKind::RoundRobin => {
                let w = ((t - 1) % m as u64) as usize;
                if self.spec.is_byzantine(w) && !self.budget_allows_byzantine(t) {
                    return Err(Error::InvalidState(format!("round-robin Byzantine slot at t={t} exceeds the budget")));
                }
                w
            }
            ScheduleKind::TraceFile => {
                let events = self.spec.replay.as_ref().expect("checked in new");
                let ev = events
                    .get((t - 1) as usize)
                    .ok_or(Error::TraceExhausted(t - 1))?;
                if ev.t != t || ev.worker >= m || ev.is_byzantine != self.spec.is_byzantine(ev.worker) {
                    return Err(Error::invalid(format!("trace event {t} is inconsistent: {ev:?}")));
                }
                if ev.is_byzantine && (self.byzantine_so_far + 1) as f64 > self.spec.lambda * t as f64 + 1.0 {
                    return Err(Error::invalid(format!("trace exceeds the Byzantine budget at t={t}")));
                }
                ev.worker
            }
        };
        let is_byzantine = self.spec.is_byzantine(worker);
        if is_byzantine {
            self.byzantine_so_far += 1;
        }
        let tau = if self.spec.kind == ScheduleKind::RoundRobin {
            m as u64
        } else {
            t - self.last_arrival[worker]
        };
        self.last_arrival[worker] = t;
        self.t = t;
        Ok(ArrivalEvent {
            t,
            worker,
            is_byzantine,
            tau,
        })
    }
}

/// Delay diagnostics of a complete arrival sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayStats {
    /// `τ_t^max`: largest latest delay over workers that have arrived by `t`.
    pub tau_max: Vec<u64>,
    /// Time average of `tau_max`.
    pub mu_max: f64,
    /// Per-worker `max τ / min τ` over repeat arrivals (`None` with fewer
    /// than two arrivals).
    pub k_per_worker: Vec<Option<f64>>,
    /// Largest per-worker ratio; the empirical bounded-delay constant.
    pub k_estimate: f64,
}

pub fn delay_stats(events: &[ArrivalEvent], workers: usize) -> DelayStats {
    let mut latest: Vec<Option<u64>> = vec![None; workers];
    let mut bounds: Vec<Option<(u64, u64)>> = vec![None; workers];
    let mut seen = vec![0u64; workers];
    let mut tau_max = Vec::with_capacity(events.len());
    let mut running_max = 0u64;
    for e in events {
        if seen[e.worker] > 0 {
            let b = bounds[e.worker].get_or_insert((e.tau, e.tau));
            b.0 = b.0.min(e.tau);
            b.1 = b.1.max(e.tau);
        }
        seen[e.worker] += 1;
        let previous = latest[e.worker].replace(e.tau);
        // Only a decrease of the current maximum forces a rescan.
        if previous == Some(running_max) && e.tau < running_max {
            running_max = latest.iter().flatten().copied().max().unwrap_or(0);
        } else {
            running_max = running_max.max(e.tau);
        }
        tau_max.push(running_max);
    }
    let mu_max = if tau_max.is_empty() {
        0.0
    } else {
        tau_max.iter().sum::<u64>() as f64 / tau_max.len() as f64
    };
    let k_per_worker: Vec<Option<f64>> = bounds
        .iter()
        .map(|b| b.map(|(lo, hi)| hi as f64 / lo as f64))
        .collect();
    let k_estimate = k_per_worker.iter().flatten().copied().fold(1.0, f64::max);
    DelayStats {
        tau_max,
        mu_max,
        k_per_worker,
        k_estimate,
    }
}

/// Serialises arrivals as `t,worker,is_byz` lines under a header.
pub fn format_trace(events: &[RecordedArrival]) -> String {
    let mut out = String::from("t,worker,is_byz\n");
    for e in events {
        out.push_str(&format!("{},{},{}\n", e.t, e.worker, u8::from(e.is_byzantine)));
    }
    out
}

/// Parses the format written by [`format_trace`]. The header line is
/// optional; `is_byz` accepts `0/1` or `false/true`.
pub fn parse_trace(text: &str) -> Result<Vec<RecordedArrival>> {
    let mut events = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (n == 0 && line.starts_with('t')) {
            continue;
        }
        let bad = |what: &str| Error::invalid(format!("trace line {}: {what}: '{line}'", n + 1));
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(bad("expected 3 comma-separated fields"));
        }
        let t = fields[0].parse().map_err(|_| bad("bad t"))?;
        let worker = fields[1].parse().map_err(|_| bad("bad worker"))?;
        let is_byzantine = match fields[2] {
            "1" | "true" => true,
            "0" | "false" => false,
            _ => return Err(bad("bad is_byz")),
        };
        events.push(RecordedArrival { t, worker, is_byzantine });
    }
    Ok(events)
}
