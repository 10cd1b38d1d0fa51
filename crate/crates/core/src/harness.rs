//! Experiment execution: drives an optimizer over an objective, records a
//! trace, and derives regret and comparison tables from traces.

use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Batch, BatchSampler, DataError, SamplingStrategy};
use crate::numerics::{l2_norm, ParamVector};
use crate::objectives::{Objective, ObjectiveError};
use crate::optimizers::{OptimizerError, OptimizerSpec, Schedule};

/// Losses above this magnitude abort a run as diverged.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),
    #[error("run {label:?} diverged at step {step}: loss {loss}")]
    Diverged { label: String, step: u64, loss: f64 },
    #[error("optimizer failed at step {step}: {source}")]
    Optimizer {
        step: u64,
        #[source]
        source: OptimizerError,
    },
    #[error("objective evaluation failed at step {step}: {source}")]
    Objective {
        step: u64,
        #[source]
        source: ObjectiveError,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("trace record for step {0} has no parameter snapshot")]
    MissingSnapshot(u64),
    #[error("trace is not contiguous: expected step {expected}, found {found}")]
    NonContiguousTrace { expected: u64, found: u64 },
    #[error("objective {0} has no known optimum")]
    NoKnownOptimum(String),
    #[error("experiments cannot be compared: {0}")]
    Mismatched(String),
}

impl HarnessError {
    pub fn is_divergence(&self) -> bool {
        matches!(self, HarnessError::Diverged { .. })
    }
}

/// Everything about a run except the objective and starting point.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub label: String,
    pub optimizer: OptimizerSpec,
    pub eta: f64,
    pub schedule: Schedule,
    /// `None` evaluates the full batch every step.
    pub batch_size: Option<usize>,
    pub sampling: SamplingStrategy,
    pub max_steps: u64,
    pub eval_every: u64,
    pub seed: u64,
    pub snapshot: bool,
}

impl ExperimentConfig {
    pub fn new(
        label: impl Into<String>,
        optimizer: OptimizerSpec,
        eta: f64,
        max_steps: u64,
    ) -> Self {
        Self {
            label: label.into(),
            optimizer,
            eta,
            schedule: Schedule::Constant,
            batch_size: None,
            sampling: SamplingStrategy::ShuffleEachEpoch,
            max_steps,
            eval_every: 1,
            seed: 0,
            snapshot: false,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(HarnessError::InvalidConfig(format!(
                "eta must be positive, got {}",
                self.eta
            )));
        }
        if self.max_steps == 0 {
            return Err(HarnessError::InvalidConfig(
                "max_steps must be at least 1".into(),
            ));
        }
        if self.eval_every == 0 {
            return Err(HarnessError::InvalidConfig(
                "eval_every must be at least 1".into(),
            ));
        }
        if self.batch_size == Some(0) {
            return Err(HarnessError::InvalidConfig(
                "batch_size must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// An objective, a starting point, and a run configuration.
#[derive(Clone)]
pub struct Experiment {
    pub objective: Arc<dyn Objective>,
    pub initial: ParamVector,
    pub config: ExperimentConfig,
}

impl fmt::Debug for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Experiment")
            .field("objective", &self.objective.name())
            .field("initial", &self.initial)
            .field("config", &self.config)
            .finish()
    }
}

impl Experiment {
    pub fn new(
        objective: Arc<dyn Objective>,
        initial: ParamVector,
        config: ExperimentConfig,
    ) -> Self {
        Self {
            objective,
            initial,
            config,
        }
    }
}

/// Quantities recorded for one step, evaluated before the update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: u64,
    pub train_loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta1_t: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_t: Option<f64>,
    pub grad_norm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w: Option<ParamVector>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    fn of(values: impl Iterator<Item = f64>) -> Option<Self> {
        values.fold(None, |acc, v| match acc {
            None => Some(Range { min: v, max: v }),
            Some(r) => Some(Range {
                min: r.min.min(v),
                max: r.max.max(v),
            }),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub label: String,
    pub optimizer: String,
    pub objective: String,
    pub records: Vec<StepRecord>,
    pub steps: u64,
    pub final_w: ParamVector,
    /// Full-batch loss at `final_w`.
    pub final_loss: f64,
}

/// Per-run summary written next to each trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub label: String,
    pub optimizer: String,
    pub objective: String,
    pub steps: u64,
    pub records: usize,
    pub final_loss: f64,
    pub final_w: ParamVector,
    pub min_recorded_loss: Option<f64>,
    pub theta: Option<Range>,
    pub beta1_t: Option<Range>,
    pub d_t: Option<Range>,
}

impl Trace {
    /// First recorded step whose `train_loss` is below `threshold`.
    pub fn first_hit(&self, threshold: f64) -> Option<u64> {
        self.records
            .iter()
            .find(|r| r.train_loss < threshold)
            .map(|r| r.t)
    }

    pub fn theta_range(&self) -> Option<Range> {
        Range::of(self.records.iter().filter_map(|r| r.theta))
    }

    pub fn beta1_range(&self) -> Option<Range> {
        Range::of(self.records.iter().filter_map(|r| r.beta1_t))
    }

    pub fn d_range(&self) -> Option<Range> {
        Range::of(self.records.iter().filter_map(|r| r.d_t))
    }

    pub fn summary(&self) -> TraceSummary {
        TraceSummary {
            label: self.label.clone(),
            optimizer: self.optimizer.clone(),
            objective: self.objective.clone(),
            steps: self.steps,
            records: self.records.len(),
            final_loss: self.final_loss,
            final_w: self.final_w.clone(),
            min_recorded_loss: Range::of(self.records.iter().map(|r| r.train_loss)).map(|r| r.min),
            theta: self.theta_range(),
            beta1_t: self.beta1_range(),
            d_t: self.d_range(),
        }
    }

    /// One JSON object per record, newline-terminated.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn records_from_jsonl(text: &str) -> Result<Vec<StepRecord>, serde_json::Error> {
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect()
    }
}

/// Executes `max_steps` optimizer steps.
///
/// Each step evaluates the batch loss and gradient at the current parameters,
/// then updates them. Steps `t` with `(t - 1) % eval_every == 0` are recorded.
pub fn run(experiment: &Experiment) -> Result<Trace, HarnessError> {
    let cfg = &experiment.config;
    cfg.validate()?;
    let obj = experiment.objective.as_ref();
    if experiment.initial.len() != obj.dim() {
        return Err(HarnessError::InvalidConfig(format!(
            "initial point has {} entries, objective {} expects {}",
            experiment.initial.len(),
            obj.name(),
            obj.dim()
        )));
    }
    let mut optimizer = cfg
        .optimizer
        .build(obj.dim())
        .map_err(|e| HarnessError::InvalidConfig(e.to_string()))?;
    let mut sampler = match cfg.batch_size {
        Some(b) => Some(BatchSampler::new(
            obj.num_samples(),
            b,
            cfg.sampling,
            cfg.seed,
        )?),
        None => None,
    };

    let diverged = |step, loss| HarnessError::Diverged {
        label: cfg.label.clone(),
        step,
        loss,
    };
    let mut w = experiment.initial.clone();
    let mut records = Vec::with_capacity((cfg.max_steps / cfg.eval_every + 1) as usize);
    for t in 1..=cfg.max_steps {
        let batch = sampler
            .as_mut()
            .map_or(Batch::Full, BatchSampler::next_batch);
        let (loss, grad) = obj
            .eval(&w, &batch)
            .map_err(|source| HarnessError::Objective { step: t, source })?;
        if !loss.is_finite() || loss > DIVERGENCE_LIMIT {
            return Err(diverged(t, loss));
        }
        let snapshot = cfg.snapshot.then(|| w.clone());
        let eta_t = cfg.schedule.rate(cfg.eta, t);
        let diag = match optimizer.step(&mut w, &grad, eta_t) {
            Ok(diag) => diag,
            Err(OptimizerError::NonFinite { .. }) => return Err(diverged(t, loss)),
            Err(source) => return Err(HarnessError::Optimizer { step: t, source }),
        };
        if (t - 1) % cfg.eval_every == 0 {
            records.push(StepRecord {
                t,
                train_loss: loss,
                theta: diag.map(|d| d.theta),
                beta1_t: diag.map(|d| d.beta1_t),
                d_t: diag.map(|d| d.d_t),
                grad_norm: l2_norm(&grad),
                w: snapshot,
            });
        }
    }
    let final_loss = obj
        .loss(&w, &Batch::Full)
        .map_err(|source| HarnessError::Objective {
            step: cfg.max_steps + 1,
            source,
        })?;
    if !final_loss.is_finite() || final_loss > DIVERGENCE_LIMIT {
        return Err(diverged(cfg.max_steps + 1, final_loss));
    }
    Ok(Trace {
        label: cfg.label.clone(),
        optimizer: cfg.optimizer.name(),
        objective: obj.name(),
        records,
        steps: cfg.max_steps,
        final_w: w,
        final_loss,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegretReport {
    pub horizon: u64,
    pub regret_total: f64,
    /// `R(t)` for `t = 1..=horizon`.
    pub partial_sums: Vec<f64>,
    /// `(t, R(t) / t)` at the requested checkpoints that fall within the horizon.
    pub regret_over_t: Vec<(u64, f64)>,
}

impl RegretReport {
    pub fn average_at(&self, t: u64) -> Option<f64> {
        (t >= 1 && t <= self.horizon).then(|| self.partial_sums[(t - 1) as usize] / t as f64)
    }
}

/// Cumulative excess loss `R(T) = sum_t f(w_t) - f(w*)` from a trace that
/// recorded a parameter snapshot at every step.
pub fn compute_regret(
    trace: &Trace,
    objective: &dyn Objective,
    checkpoints: &[u64],
) -> Result<RegretReport, HarnessError> {
    let optimum = objective
        .known_optimum()
        .ok_or_else(|| HarnessError::NoKnownOptimum(objective.name()))?;
    let f_star = objective
        .loss(&optimum.w, &Batch::Full)
        .map_err(|source| HarnessError::Objective { step: 0, source })?;
    let mut partial_sums = Vec::with_capacity(trace.records.len());
    let mut total = 0.0;
    for (i, record) in trace.records.iter().enumerate() {
        let expected = i as u64 + 1;
        if record.t != expected {
            return Err(HarnessError::NonContiguousTrace {
                expected,
                found: record.t,
            });
        }
        let w = record
            .w
            .as_ref()
            .ok_or(HarnessError::MissingSnapshot(record.t))?;
        let f = objective
            .loss(w, &Batch::Full)
            .map_err(|source| HarnessError::Objective {
                step: record.t,
                source,
            })?;
        total += f - f_star;
        partial_sums.push(total);
    }
    let horizon = partial_sums.len() as u64;
    let regret_over_t = checkpoints
        .iter()
        .filter(|&&t| t >= 1 && t <= horizon)
        .map(|&t| (t, partial_sums[(t - 1) as usize] / t as f64))
        .collect();
    Ok(RegretReport {
        horizon,
        regret_total: total,
        partial_sums,
        regret_over_t,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Metric {
    FinalLoss,
    /// First recorded step with training loss below the threshold.
    StepsToThreshold(f64),
}

impl Metric {
    fn name(&self) -> &'static str {
        match self {
            Metric::FinalLoss => "final_loss",
            Metric::StepsToThreshold(_) => "steps_to_threshold",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Completed,
    Diverged { step: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub label: String,
    pub optimizer: String,
    pub status: RunStatus,
    pub final_loss: Option<f64>,
    pub steps_to_threshold: Option<u64>,
    pub min_recorded_loss: Option<f64>,
    pub theta: Option<Range>,
    pub beta1_t: Option<Range>,
    pub d_t: Option<Range>,
    pub trace_file: String,
}

impl ComparisonRow {
    pub fn metric_value(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::FinalLoss => self.final_loss,
            Metric::StepsToThreshold(_) => self.steps_to_threshold.map(|s| s as f64),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub objective: String,
    pub metric: Metric,
    pub rows: Vec<ComparisonRow>,
    /// Traces in row order; `None` for diverged runs.
    pub traces: Vec<Option<Trace>>,
}

/// Column order of [`ComparisonTable::to_csv`].
pub const COMPARISON_COLUMNS: [&str; 17] = [
    "label",
    "optimizer",
    "status",
    "diverged_at",
    "metric",
    "metric_value",
    "final_loss",
    "steps_to_threshold",
    "min_recorded_loss",
    "theta_min",
    "theta_max",
    "beta1_min",
    "beta1_max",
    "d_min",
    "d_max",
    "objective",
    "trace_file",
];

fn opt<T: fmt::Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl ComparisonTable {
    pub fn row(&self, label: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn to_csv(&self) -> String {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        wtr.write_record(COMPARISON_COLUMNS)
            .expect("in-memory write");
        for r in &self.rows {
            let (status, diverged_at) = match r.status {
                RunStatus::Completed => ("completed", None),
                RunStatus::Diverged { step } => ("diverged", Some(step)),
            };
            let record = [
                r.label.clone(),
                r.optimizer.clone(),
                status.to_string(),
                opt(diverged_at),
                self.metric.name().to_string(),
                opt(r.metric_value(self.metric)),
                opt(r.final_loss),
                opt(r.steps_to_threshold),
                opt(r.min_recorded_loss),
                opt(r.theta.map(|x| x.min)),
                opt(r.theta.map(|x| x.max)),
                opt(r.beta1_t.map(|x| x.min)),
                opt(r.beta1_t.map(|x| x.max)),
                opt(r.d_t.map(|x| x.min)),
                opt(r.d_t.map(|x| x.max)),
                self.objective.clone(),
                r.trace_file.clone(),
            ];
            wtr.write_record(&record).expect("in-memory write");
        }
        String::from_utf8(wtr.into_inner().expect("flush")).expect("utf-8")
    }

    /// Human-readable rendering for terminals.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<24} {:<20} {:>10} {:>14} {:>10}",
            "label", "optimizer", "status", "final_loss", "hit_step"
        );
        for r in &self.rows {
            let status = match r.status {
                RunStatus::Completed => "ok".to_string(),
                RunStatus::Diverged { step } => format!("div@{step}"),
            };
            let _ = writeln!(
                out,
                "{:<24} {:<20} {:>10} {:>14} {:>10}",
                r.label,
                r.optimizer,
                status,
                r.final_loss.map_or("-".into(), |l| format!("{l:.6e}")),
                r.steps_to_threshold.map_or("-".into(), |s| s.to_string()),
            );
        }
        out
    }
}

/// File-name safe version of a run label.
pub fn slug(label: &str) -> String {
    label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

pub fn trace_file_name(label: &str) -> String {
    format!("traces/{}.jsonl", slug(label))
}

fn check_comparable(experiments: &[Experiment]) -> Result<(), HarnessError> {
    let first = experiments
        .first()
        .ok_or_else(|| HarnessError::Mismatched("no experiments given".into()))?;
    let name = first.objective.name();
    for e in &experiments[1..] {
        if e.objective.name() != name || e.objective.dim() != first.objective.dim() {
            return Err(HarnessError::Mismatched(format!(
                "objective {} differs from {}",
                e.objective.name(),
                name
            )));
        }
        if e.config.seed != first.config.seed {
            return Err(HarnessError::Mismatched(format!(
                "seed {} of {:?} differs from {}",
                e.config.seed, e.config.label, first.config.seed
            )));
        }
        if e.config.max_steps != first.config.max_steps {
            return Err(HarnessError::Mismatched(format!(
                "budget {} of {:?} differs from {}",
                e.config.max_steps, e.config.label, first.config.max_steps
            )));
        }
    }
    let mut seen: HashMap<&str, &Experiment> = HashMap::new();
    for e in experiments {
        if let Some(prev) = seen.insert(&e.config.label, e) {
            if prev.config != e.config || prev.initial != e.initial {
                return Err(HarnessError::Mismatched(format!(
                    "label {:?} is used by two different configs",
                    e.config.label
                )));
            }
        }
    }
    Ok(())
}

/// Runs every experiment and tabulates them in input order.
///
/// All experiments must share the objective, seed, and step budget. With
/// `parallel` the runs execute on the rayon pool; results are identical.
pub fn compare(
    experiments: &[Experiment],
    metric: Metric,
    parallel: bool,
) -> Result<ComparisonTable, HarnessError> {
    check_comparable(experiments)?;
    let results: Vec<Result<Trace, HarnessError>> = if parallel {
        experiments.par_iter().map(run).collect()
    } else {
        experiments.iter().map(run).collect()
    };
    let mut rows = Vec::with_capacity(results.len());
    let mut traces = Vec::with_capacity(results.len());
    for (e, result) in experiments.iter().zip(results) {
        let trace_file = trace_file_name(&e.config.label);
        match result {
            Ok(trace) => {
                let summary = trace.summary();
                rows.push(ComparisonRow {
                    label: e.config.label.clone(),
                    optimizer: trace.optimizer.clone(),
                    status: RunStatus::Completed,
                    final_loss: Some(trace.final_loss),
                    steps_to_threshold: match metric {
                        Metric::StepsToThreshold(th) => trace.first_hit(th),
                        Metric::FinalLoss => None,
                    },
                    min_recorded_loss: summary.min_recorded_loss,
                    theta: summary.theta,
                    beta1_t: summary.beta1_t,
                    d_t: summary.d_t,
                    trace_file,
                });
                traces.push(Some(trace));
            }
            Err(HarnessError::Diverged { step, .. }) => {
                rows.push(ComparisonRow {
                    label: e.config.label.clone(),
                    optimizer: e.config.optimizer.name(),
                    status: RunStatus::Diverged { step },
                    final_loss: None,
                    steps_to_threshold: None,
                    min_recorded_loss: None,
                    theta: None,
                    beta1_t: None,
                    d_t: None,
                    trace_file: String::new(),
                });
                traces.push(None);
            }
            Err(other) => return Err(other),
        }
    }
    Ok(ComparisonTable {
        objective: experiments[0].objective.name(),
        metric,
        rows,
        traces,
    })
}
