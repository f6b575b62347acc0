//! End-to-end simulation of asynchronous robust training.
//!
//! Each trial runs the full loop: the scheduler picks an arriving worker,
//! the worker hands over its momentum (honest or adversarial), the server
//! aggregates every worker's latest momentum, steps, and returns the query
//! point from which the worker prepares its next momentum.
//!
//! Trials are independent and seeded from `(seed, trial)`, so running them
//! in parallel or one after another gives identical results.

use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregation::{certificate, AggregatorSpec, BaseRule, WeightedVectorSet};
use crate::attacks::{byzantine_update, AttackKind, AttackSpec, UpdateCounts};
use crate::error::{Error, Result};
use crate::optimizer::{beta_for, query_drift_bound, AlphaKind, HonestWorkerState, OptimizerConfig, ServerState};
use crate::problems::{Labels, Problem, ProblemSpec};
use crate::rng::{stream, Role, StreamRng};
use crate::scheduler::{ArrivalEvent, ScheduleSpec, Scheduler};
use crate::vector;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AssertLevel {
    #[default]
    Off,
    /// Check the query-drift bound on every honest update (linear weights).
    Debug,
}

impl std::str::FromStr for AssertLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" => Ok(AssertLevel::Off),
            "debug" => Ok(AssertLevel::Debug),
            other => Err(Error::invalid(format!("unknown assert level '{other}' (expected off or debug)"))),
        }
    }
}

fn default_trials() -> usize {
    1
}
fn default_stride() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    #[serde(default)]
    pub seed: u64,
    pub problem: ProblemSpec,
    pub schedule: ScheduleSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attack: Option<AttackSpec>,
    pub aggregator: AggregatorSpec,
    pub optimizer: OptimizerConfig,
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// A row is recorded whenever `t` is a multiple of the stride.
    #[serde(default = "default_stride")]
    pub metric_stride: u64,
    #[serde(default)]
    pub assert_level: AssertLevel,
}

impl SimulationConfig {
    /// Byzantine-free single-trial configuration with the weighted mean.
    pub fn new(problem: ProblemSpec, schedule: ScheduleSpec, optimizer: OptimizerConfig) -> Self {
        let lambda = schedule.lambda;
        Self {
            seed: 0,
            problem,
            schedule,
            attack: None,
            aggregator: AggregatorSpec::new(BaseRule::WeightedMean, false, lambda),
            optimizer,
            trials: 1,
            metric_stride: 1,
            assert_level: AssertLevel::Off,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.problem.validate()?;
        self.schedule.validate()?;
        self.aggregator.validate()?;
        self.optimizer.validate()?;
        if let Some(a) = &self.attack {
            a.validate()?;
        }
        if self.trials == 0 {
            return Err(Error::config("trials", "must be >= 1"));
        }
        if self.metric_stride == 0 {
            return Err(Error::config("metric_stride", "must be >= 1"));
        }
        if self.schedule.byzantine > 0 && self.schedule.lambda > 0.0 && self.attack.is_none() {
            return Err(Error::config("attack", "required when Byzantine workers can arrive"));
        }
        Ok(())
    }
}

/// One recorded iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub trial: usize,
    pub t: u64,
    /// `f(x_{t+1}) − f(x*)` for the average after this step.
    pub excess_loss: f64,
    /// `‖d̂_t − ∇f(x_t)‖²` with `x_t` the query point of this step.
    pub grad_error_sq: f64,
    /// Mean over honest workers of `‖d⁽ⁱ⁾ − ∇f(x⁽ⁱ⁾)‖²`, the error of each
    /// worker's momentum at the point it was last queried.
    pub worker_error_sq: f64,
    pub tau_max: u64,
    /// `t_G / t`.
    pub honest_frac: f64,
    /// Time since the trial started; excluded from determinism guarantees.
    pub wallclock_ns: u64,
}

/// Everything one trial produced.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    pub trial: usize,
    pub rows: Vec<TraceRow>,
    pub arrivals: Vec<ArrivalEvent>,
    /// Final `f(x_{T+1}) − f(x*)`, or NaN when the trial faulted.
    pub final_excess_loss: f64,
    pub byzantine_arrivals: u64,
    /// Updates received per worker.
    pub counts: Vec<u64>,
    pub drift_checks: u64,
    pub drift_violations: u64,
    /// Diagnostic for a trial aborted by a fault.
    pub fault: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub trials: Vec<TrialOutcome>,
}

impl RunOutput {
    /// All rows in trial order.
    pub fn rows(&self) -> impl Iterator<Item = &TraceRow> {
        self.trials.iter().flat_map(|t| t.rows.iter())
    }

    pub fn final_excess_losses(&self) -> Vec<f64> {
        self.trials.iter().map(|t| t.final_excess_loss).collect()
    }

    pub fn drift_violations(&self) -> u64 {
        self.trials.iter().map(|t| t.drift_violations).sum()
    }

    pub fn drift_checks(&self) -> u64 {
        self.trials.iter().map(|t| t.drift_checks).sum()
    }

    pub fn faults(&self) -> impl Iterator<Item = (usize, &str)> {
        self.trials.iter().filter_map(|t| t.fault.as_deref().map(|f| (t.trial, f)))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Execution {
    #[default]
    Parallel,
    Serial,
}

/// Runs every trial of `config`, in parallel.
pub fn run(config: &SimulationConfig) -> Result<RunOutput> {
    run_with(config, Execution::Parallel)
}

pub fn run_with(config: &SimulationConfig, execution: Execution) -> Result<RunOutput> {
    config.validate()?;
    let mut problem_rng = stream(config.seed, 0, Role::Problem, 0);
    let problem = Problem::generate(&config.problem, &mut problem_rng)?;
    // Probe the schedule once so configuration errors surface before any trial.
    Scheduler::new(&config.schedule, stream(config.seed, 0, Role::Schedule, 0))?;
    let trials = match execution {
        Execution::Parallel => (0..config.trials)
            .into_par_iter()
            .map(|trial| run_trial(config, &problem, trial))
            .collect(),
        Execution::Serial => (0..config.trials).map(|trial| run_trial(config, &problem, trial)).collect(),
    };
    Ok(RunOutput { trials })
}

/// Per-worker simulation state. Sign- and label-flip attackers run the
/// honest protocol on the side and corrupt what they send.
struct WorkerSlot {
    state: Option<HonestWorkerState>,
    labels: Labels,
    data: StreamRng,
}

struct Trial<'a> {
    config: &'a SimulationConfig,
    problem: &'a Problem,
    trial: usize,
    server: ServerState,
    scheduler: Scheduler,
    workers: Vec<WorkerSlot>,
    arrivals: Vec<ArrivalEvent>,
    latest_tau: Vec<Option<u64>>,
    tau_max: u64,
    byzantine: u64,
    drift_checks: u64,
    drift_violations: u64,
    rows: Vec<TraceRow>,
    started: Instant,
}

fn run_trial(config: &SimulationConfig, problem: &Problem, trial: usize) -> TrialOutcome {
    let started = Instant::now();
    let mut partial = None;
    let fault = match Trial::new(config, problem, trial, started) {
        Ok(mut sim) => {
            let result = sim.run();
            let fault = result.err().map(|e| e.to_string());
            partial = Some(sim);
            fault
        }
        Err(e) => Some(e.to_string()),
    };
    match partial {
        Some(sim) => {
            let final_excess_loss = if fault.is_some() {
                f64::NAN
            } else {
                problem.excess_loss(sim.server.average())
            };
            TrialOutcome {
                trial,
                final_excess_loss,
                byzantine_arrivals: sim.byzantine,
                counts: sim.server.counts().to_vec(),
                drift_checks: sim.drift_checks,
                drift_violations: sim.drift_violations,
                rows: sim.rows,
                arrivals: sim.arrivals,
                fault,
            }
        }
        None => TrialOutcome {
            trial,
            rows: Vec::new(),
            arrivals: Vec::new(),
            final_excess_loss: f64::NAN,
            byzantine_arrivals: 0,
            counts: Vec::new(),
            drift_checks: 0,
            drift_violations: 0,
            fault,
        },
    }
}

impl<'a> Trial<'a> {
    fn new(config: &'a SimulationConfig, problem: &'a Problem, trial: usize, started: Instant) -> Result<Self> {
        let seed = config.seed;
        let t = trial as u64;
        let m = config.schedule.workers();
        let x1 = vec![0.0; problem.dim()];
        let eta = config.optimizer.resolved_eta(problem.smoothness());
        let server = ServerState::new(&x1, m, problem.radius(), eta, &config.optimizer)?;
        let scheduler = Scheduler::new(&config.schedule, stream(seed, t, Role::Schedule, 0))?;
        let attack = config.attack.map(|a| a.kind);
        let mut workers = Vec::with_capacity(m);
        for i in 0..m {
            let mut data = stream(seed, t, Role::Data, i as u64);
            let byzantine = config.schedule.is_byzantine(i);
            let labels = match (byzantine, attack) {
                (true, Some(AttackKind::LabelFlip)) => Labels::Flipped,
                _ => Labels::Clean,
            };
            let runs_protocol = !byzantine || matches!(attack, Some(AttackKind::SignFlip | AttackKind::LabelFlip));
            let state = if runs_protocol {
                let z = problem.draw_sample(&mut data);
                let g = problem.stochastic_gradient_with(server.average(), z, labels)?;
                Some(HonestWorkerState::init(g, server.average())?)
            } else {
                None
            };
            workers.push(WorkerSlot { state, labels, data });
        }
        Ok(Self {
            config,
            problem,
            trial,
            server,
            scheduler,
            workers,
            arrivals: Vec::with_capacity(config.optimizer.horizon as usize),
            latest_tau: vec![None; m],
            tau_max: 0,
            byzantine: 0,
            drift_checks: 0,
            drift_violations: 0,
            rows: Vec::new(),
            started,
        })
    }

    fn run(&mut self) -> Result<()> {
        for _ in 0..self.config.optimizer.horizon {
            self.iterate()?;
        }
        Ok(())
    }

    fn honest_view(&self) -> Option<WeightedVectorSet> {
        let spec = &self.config.schedule;
        self.server.reported_set(|i| !spec.is_byzantine(i)).or_else(|| {
            let momenta: Vec<Vec<f64>> = self.workers[..spec.honest]
                .iter()
                .filter_map(|w| w.state.as_ref().map(|s| s.d.clone()))
                .collect();
            WeightedVectorSet::unweighted(momenta).ok()
        })
    }

    fn outgoing(&self, ev: &ArrivalEvent) -> Result<Vec<f64>> {
        let own = self.workers[ev.worker].state.as_ref().map(|s| s.d.as_slice());
        if !ev.is_byzantine {
            return own
                .map(<[f64]>::to_vec)
                .ok_or_else(|| Error::InvalidState(format!("honest worker {} has no state", ev.worker)));
        }
        let attack = self
            .config
            .attack
            .as_ref()
            .ok_or_else(|| Error::InvalidState("Byzantine arrival without an attack".into()))?;
        let view = if attack.kind.colludes() { self.honest_view() } else { None };
        let counts = UpdateCounts {
            total: ev.t,
            byzantine: self.byzantine,
        };
        byzantine_update(attack, view.as_ref(), own, counts)
    }

    fn iterate(&mut self) -> Result<()> {
        let ev = self.scheduler.next_arrival()?;
        self.arrivals.push(ev);
        if ev.is_byzantine {
            self.byzantine += 1;
        }
        self.record_tau(&ev);

        let sent = self.outgoing(&ev)?;
        let outcome = self.server.step(ev.worker, &sent, &self.config.aggregator)?;
        let x_t = outcome.query;

        let config = self.config;
        let problem = self.problem;
        let check_drift = config.assert_level == AssertLevel::Debug
            && config.optimizer.alpha == AlphaKind::Linear
            && !ev.is_byzantine;
        let slot = &mut self.workers[ev.worker];
        if let Some(state) = slot.state.as_mut() {
            if check_drift {
                let tau = ev.t - state.last_query_t;
                let drift = vector::dist(&x_t, &state.x_last);
                self.drift_checks += 1;
                if drift > query_drift_bound(problem.diameter(), tau, ev.t) * (1.0 + 1e-12) {
                    self.drift_violations += 1;
                }
            }
            let z = problem.draw_sample(&mut slot.data);
            let g_new = problem.stochastic_gradient_with(&x_t, z, slot.labels)?;
            let g_stale = problem.stochastic_gradient_with(&state.x_last, z, slot.labels)?;
            let beta = beta_for(state.s + 1, &config.optimizer)?;
            state.update(&g_new, &g_stale, beta, &x_t, ev.t)?;
        }

        if ev.t % config.metric_stride == 0 {
            let grad = problem.gradient(&x_t);
            let grad_error_sq = vector::dist_sq(&outcome.aggregate, &grad);
            self.rows.push(TraceRow {
                trial: self.trial,
                t: ev.t,
                excess_loss: problem.excess_loss(self.server.average()),
                grad_error_sq,
                worker_error_sq: self.worker_error_sq(),
                tau_max: self.tau_max,
                honest_frac: (ev.t - self.byzantine) as f64 / ev.t as f64,
                wallclock_ns: self.started.elapsed().as_nanos() as u64,
            });
        }
        Ok(())
    }

    fn record_tau(&mut self, ev: &ArrivalEvent) {
        let previous = self.latest_tau[ev.worker].replace(ev.tau);
        if previous == Some(self.tau_max) && ev.tau < self.tau_max {
            self.tau_max = self.latest_tau.iter().flatten().copied().max().unwrap_or(0);
        } else {
            self.tau_max = self.tau_max.max(ev.tau);
        }
    }

    fn worker_error_sq(&self) -> f64 {
        let honest = &self.workers[..self.config.schedule.honest];
        let errors: Vec<f64> = honest
            .iter()
            .filter_map(|w| w.state.as_ref())
            .map(|s| vector::dist_sq(&s.d, &self.problem.gradient(&s.x_last)))
            .collect();
        errors.iter().sum::<f64>() / errors.len() as f64
    }
}

/// Column names of the trace CSV, in order.
pub const TRACE_HEADER: &str = "trial,t,excess_loss,grad_error_sq,tau_max,honest_frac";

/// Renders rows as CSV under [`TRACE_HEADER`]. Floats carry 17 significant
/// digits so they parse back to the same bits.
pub fn format_trace_csv<'r>(rows: impl IntoIterator<Item = &'r TraceRow>) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.16e},{:.16e},{},{:.16e}\n",
            r.trial, r.t, r.excess_loss, r.grad_error_sq, r.tau_max, r.honest_frac
        ));
    }
    out
}

/// Fields a sweep can vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    /// `optimizer.horizon`.
    Horizon,
    /// `schedule.lambda`, mirrored into `aggregator.lambda`.
    Lambda,
    /// Aggregator label such as `weighted-gm+ctma`.
    Aggregator,
    /// Attack name, or `none`.
    Attack,
    /// `optimizer.eta`.
    Eta,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "T" | "horizon" => Ok(SweepAxis::Horizon),
            "lambda" => Ok(SweepAxis::Lambda),
            "aggregator" => Ok(SweepAxis::Aggregator),
            "attack" => Ok(SweepAxis::Attack),
            "eta" => Ok(SweepAxis::Eta),
            other => Err(Error::config(
                "axis",
                format!("'{other}' is not sweepable (expected T, lambda, aggregator, attack or eta)"),
            )),
        }
    }
}

impl SweepAxis {
    /// `base` with the axis set to `value`.
    pub fn apply(self, base: &SimulationConfig, value: &str) -> Result<SimulationConfig> {
        let mut cfg = base.clone();
        let number = |field: &str| -> Result<f64> {
            value
                .parse::<f64>()
                .map_err(|_| Error::config(field, format!("'{value}' is not a number")))
        };
        match self {
            SweepAxis::Horizon => {
                cfg.optimizer.horizon = value
                    .parse()
                    .map_err(|_| Error::config("optimizer.horizon", format!("'{value}' is not a positive integer")))?;
            }
            SweepAxis::Lambda => {
                let lambda = number("schedule.lambda")?;
                cfg.schedule.lambda = lambda;
                cfg.aggregator.lambda = lambda;
            }
            SweepAxis::Aggregator => {
                let parsed: AggregatorSpec = value.parse()?;
                cfg.aggregator.base = parsed.base;
                cfg.aggregator.ctma = parsed.ctma;
            }
            SweepAxis::Attack => {
                cfg.attack = match value {
                    "none" => None,
                    name => {
                        let kind: AttackKind = name.parse()?;
                        let epsilon = base.attack.map(|a| a.epsilon).unwrap_or(AttackSpec::new(kind).epsilon);
                        Some(AttackSpec { kind, epsilon })
                    }
                };
            }
            SweepAxis::Eta => cfg.optimizer.eta = Some(number("optimizer.eta")?),
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Summary of one sweep value.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub value: String,
    pub config: SimulationConfig,
    pub output: RunOutput,
    pub mean_final_excess_loss: f64,
    pub stderr_final_excess_loss: f64,
}

/// Mean and standard error (`sd/√n`, sample sd) of `values`.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn sweep(base: &SimulationConfig, axis: SweepAxis, values: &[String]) -> Result<Vec<SweepPoint>> {
    if values.is_empty() {
        return Err(Error::config("values", "at least one value is required"));
    }
    let configs = values
        .iter()
        .map(|v| axis.apply(base, v))
        .collect::<Result<Vec<_>>>()?;
    values
        .iter()
        .zip(configs)
        .map(|(value, config)| {
            let output = run(&config)?;
            let (mean, stderr) = mean_stderr(&output.final_excess_losses());
            Ok(SweepPoint {
                value: value.clone(),
                config,
                output,
                mean_final_excess_loss: mean,
                stderr_final_excess_loss: stderr,
            })
        })
        .collect()
}

/// `c_λ` of the configured aggregator, for reporting.
pub fn robustness_coefficient(config: &SimulationConfig) -> f64 {
    certificate(&config.aggregator).c_lambda
}

/// Loads a recorded arrival sequence into a `trace-file` schedule.
pub fn attach_trace(schedule: &mut ScheduleSpec, events: Vec<crate::scheduler::RecordedArrival>) {
    schedule.replay = Some(Arc::new(events));
}
