//! Command-line front end: TOML experiment files, the subcommands, and the
//! mapping from failures to exit codes.
//!
//! Exit codes: 0 success, 2 usage, 3 config, 4 I/O, 5 divergence, 6 assertion.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{self, Batch, DataError, Dataset, SamplingStrategy};
use crate::harness::{
    self, ComparisonTable, Experiment, ExperimentConfig, HarnessError, Metric, RunStatus, Trace,
};
use crate::numerics::{ParamVector, Rng};
use crate::objectives::{
    gradcheck, LogisticRegressionObjective, MlpObjective, Objective, ObjectiveError,
    QuadraticObjective, Rosenbrock,
};
use crate::optimizers::{
    BacktrackVariant, BaselineConfig, DeamHyperparams, OptimizerSpec, Schedule,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("divergence: {0}")]
    Divergence(String),
    #[error("assertion failed: {0}")]
    Assertion(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 3,
            CliError::Io(_) => 4,
            CliError::Divergence(_) => 5,
            CliError::Assertion(_) => 6,
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Diverged { .. } => CliError::Divergence(e.to_string()),
            HarnessError::Data(d) => d.into(),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Invalid(_) => CliError::Config(e.to_string()),
            other => CliError::Io(other.to_string()),
        }
    }
}

impl From<ObjectiveError> for CliError {
    fn from(e: ObjectiveError) -> Self {
        CliError::Config(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "deam",
    version,
    about = "Run and compare DEAM and baseline optimizers"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the single optimizer declared in a config.
    Run(CommonArgs),
    /// Run every declared optimizer and tabulate them.
    Compare(CommonArgs),
    /// Adam(0.9), Adam(0.0) and DEAM on x^2 + 4y^2 from (-4, -1) at eta = 1.
    ReproCounterexample(CommonArgs),
    /// DEAM under each backtrack variant on the config's objective.
    AblateDt(CommonArgs),
    /// Compare analytic gradients with central differences at 20 points.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Experiment file (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Overrides `run.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `run.max_steps`.
    #[arg(long)]
    pub steps: Option<u64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Built-in objective to check instead of a config's.
    #[arg(long, value_enum)]
    pub objective: Option<ObjectiveKind>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    Quadratic,
    Rosenbrock,
    LogisticRegression,
    Mlp,
}

impl ObjectiveKind {
    /// Largest relative error `gradcheck` accepts for this objective.
    pub fn gradcheck_threshold(self) -> f64 {
        match self {
            ObjectiveKind::Quadratic => 1e-8,
            ObjectiveKind::Rosenbrock => 1e-6,
            ObjectiveKind::LogisticRegression => 1e-5,
            ObjectiveKind::Mlp => 1e-4,
        }
    }
}

// ---------------------------------------------------------------------------
// Config file schema

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub objective: ObjectiveConfig,
    pub dataset: Option<DatasetConfig>,
    #[serde(rename = "optimizer", default)]
    pub optimizers: Vec<OptimizerConfig>,
    pub run: RunConfig,
    pub compare: Option<CompareConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObjectiveConfig {
    Quadratic {
        coefficients: Vec<f64>,
        initial: Vec<f64>,
    },
    Rosenbrock {
        initial: Option<Vec<f64>>,
    },
    /// Starts from zero weights unless `initial` is given.
    LogisticRegression {
        initial: Option<Vec<f64>>,
    },
    /// Glorot-initialised from `init_seed`, defaulting to `run.seed`.
    Mlp {
        hidden: usize,
        init_seed: Option<u64>,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Blobs {
        n: usize,
        dim: usize,
        classes: usize,
        separation: f64,
        seed: u64,
    },
    /// Paths are relative to the config file.
    Idx {
        images: PathBuf,
        labels: PathBuf,
        limit: Option<usize>,
    },
    Csv {
        path: PathBuf,
        label_column: String,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerConfig {
    Deam {
        label: Option<String>,
        beta2: Option<f64>,
        epsilon: Option<f64>,
        div_guard: Option<f64>,
        backtrack: Option<BacktrackVariant>,
    },
    Sgd {
        label: Option<String>,
    },
    SgdMomentum {
        label: Option<String>,
        momentum: Option<f64>,
    },
    Adagrad {
        label: Option<String>,
        div_guard: Option<f64>,
    },
    Rmsprop {
        label: Option<String>,
        rho: Option<f64>,
        div_guard: Option<f64>,
    },
    Adam {
        label: Option<String>,
        beta1: Option<f64>,
        beta2: Option<f64>,
        div_guard: Option<f64>,
    },
    Amsgrad {
        label: Option<String>,
        beta1: Option<f64>,
        beta2: Option<f64>,
        div_guard: Option<f64>,
    },
}

impl OptimizerConfig {
    /// The run label (defaulting to the optimizer name) and the optimizer it describes.
    pub fn to_spec(&self) -> (String, OptimizerSpec) {
        let (label, spec) = match self {
            OptimizerConfig::Deam {
                label,
                beta2,
                epsilon,
                div_guard,
                backtrack,
            } => {
                let d = DeamHyperparams::default();
                let hp = DeamHyperparams {
                    beta2: beta2.unwrap_or(d.beta2),
                    epsilon: epsilon.unwrap_or(d.epsilon),
                    div_guard: div_guard.unwrap_or(d.div_guard),
                    backtrack: backtrack.unwrap_or(d.backtrack),
                    momentum_weight: d.momentum_weight,
                };
                (label, OptimizerSpec::Deam(hp))
            }
            OptimizerConfig::Sgd { label } => (label, OptimizerSpec::Baseline(BaselineConfig::Sgd)),
            OptimizerConfig::SgdMomentum { label, momentum } => (
                label,
                OptimizerSpec::Baseline(BaselineConfig::SgdMomentum {
                    momentum: momentum.unwrap_or(0.9),
                }),
            ),
            OptimizerConfig::Adagrad { label, div_guard } => (
                label,
                OptimizerSpec::Baseline(BaselineConfig::AdaGrad {
                    div_guard: div_guard.unwrap_or(1e-8),
                }),
            ),
            OptimizerConfig::Rmsprop {
                label,
                rho,
                div_guard,
            } => (
                label,
                OptimizerSpec::Baseline(BaselineConfig::RmsProp {
                    rho: rho.unwrap_or(0.9),
                    div_guard: div_guard.unwrap_or(1e-8),
                }),
            ),
            OptimizerConfig::Adam {
                label,
                beta1,
                beta2,
                div_guard,
            } => (
                label,
                OptimizerSpec::Baseline(BaselineConfig::Adam {
                    beta1: beta1.unwrap_or(0.9),
                    beta2: beta2.unwrap_or(0.999),
                    div_guard: div_guard.unwrap_or(1e-8),
                }),
            ),
            OptimizerConfig::Amsgrad {
                label,
                beta1,
                beta2,
                div_guard,
            } => (
                label,
                OptimizerSpec::Baseline(BaselineConfig::AmsGrad {
                    beta1: beta1.unwrap_or(0.9),
                    beta2: beta2.unwrap_or(0.999),
                    div_guard: div_guard.unwrap_or(1e-8),
                }),
            ),
        };
        (label.clone().unwrap_or_else(|| spec.name()), spec)
    }
}

fn default_eval_every() -> u64 {
    1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub eta: f64,
    #[serde(default)]
    pub schedule: Schedule,
    /// Omitted means full batch.
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub sampling: SamplingStrategy,
    pub max_steps: u64,
    #[serde(default = "default_eval_every")]
    pub eval_every: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub snapshot: bool,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    FinalLoss,
    StepsToThreshold,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    pub metric: MetricName,
    pub threshold: Option<f64>,
}

impl CompareConfig {
    fn metric(&self) -> Result<Metric, CliError> {
        match (self.metric, self.threshold) {
            (MetricName::FinalLoss, _) => Ok(Metric::FinalLoss),
            (MetricName::StepsToThreshold, Some(th)) => Ok(Metric::StepsToThreshold(th)),
            (MetricName::StepsToThreshold, None) => Err(CliError::Config(
                "compare.metric = \"steps_to_threshold\" needs compare.threshold".into(),
            )),
        }
    }
}

// ---------------------------------------------------------------------------
// Building experiments

/// A concrete objective, kept typed where the caller needs more than the trait.
#[derive(Clone)]
pub enum BuiltObjective {
    Quadratic(Arc<QuadraticObjective>),
    Rosenbrock(Arc<Rosenbrock>),
    LogisticRegression(Arc<LogisticRegressionObjective>),
    Mlp(Arc<MlpObjective>),
}

impl BuiltObjective {
    pub fn kind(&self) -> ObjectiveKind {
        match self {
            BuiltObjective::Quadratic(_) => ObjectiveKind::Quadratic,
            BuiltObjective::Rosenbrock(_) => ObjectiveKind::Rosenbrock,
            BuiltObjective::LogisticRegression(_) => ObjectiveKind::LogisticRegression,
            BuiltObjective::Mlp(_) => ObjectiveKind::Mlp,
        }
    }

    pub fn as_dyn(&self) -> Arc<dyn Objective> {
        match self {
            BuiltObjective::Quadratic(o) => o.clone(),
            BuiltObjective::Rosenbrock(o) => o.clone(),
            BuiltObjective::LogisticRegression(o) => o.clone(),
            BuiltObjective::Mlp(o) => o.clone(),
        }
    }
}

/// A parsed config with the command-line overrides applied.
#[derive(Clone)]
pub struct Setup {
    pub objective: BuiltObjective,
    pub initial: ParamVector,
    pub run: RunConfig,
    pub optimizers: Vec<(String, OptimizerSpec)>,
    pub metric: Metric,
}

impl Setup {
    pub fn experiment(&self, label: &str, spec: OptimizerSpec) -> Experiment {
        let r = &self.run;
        let config = ExperimentConfig {
            label: label.to_string(),
            optimizer: spec,
            eta: r.eta,
            schedule: r.schedule,
            batch_size: r.batch_size,
            sampling: r.sampling,
            max_steps: r.max_steps,
            eval_every: r.eval_every,
            seed: r.seed,
            snapshot: r.snapshot,
        };
        Experiment::new(self.objective.as_dyn(), self.initial.clone(), config)
    }

    pub fn experiments(&self) -> Vec<Experiment> {
        self.optimizers
            .iter()
            .map(|(label, spec)| self.experiment(label, *spec))
            .collect()
    }
}

fn point(values: &[f64], what: &str) -> Result<ParamVector, CliError> {
    ParamVector::new(values.to_vec()).map_err(|e| CliError::Config(format!("{what}: {e}")))
}

fn load_dataset(cfg: &DatasetConfig, base: &Path) -> Result<Dataset, CliError> {
    Ok(match cfg {
        DatasetConfig::Blobs {
            n,
            dim,
            classes,
            separation,
            seed,
        } => data::gen_blobs(*n, *dim, *classes, *separation, *seed)?,
        DatasetConfig::Idx {
            images,
            labels,
            limit,
        } => data::load_idx(&base.join(images), &base.join(labels), *limit)?,
        DatasetConfig::Csv { path, label_column } => {
            data::load_csv(&base.join(path), label_column)?
        }
    })
}

/// Parses a config document. Relative dataset paths resolve against `base`.
pub fn parse_config(text: &str, base: &Path, overrides: &CommonArgs) -> Result<Setup, CliError> {
    let file: ConfigFile =
        toml::from_str(text).map_err(|e| CliError::Config(e.message().to_string()))?;
    let mut run = file.run;
    if let Some(seed) = overrides.seed {
        run.seed = seed;
    }
    if let Some(steps) = overrides.steps {
        run.max_steps = steps;
    }
    let data = match (&file.objective, &file.dataset) {
        (ObjectiveConfig::LogisticRegression { .. } | ObjectiveConfig::Mlp { .. }, None) => {
            return Err(CliError::Config(
                "this objective needs a [dataset] table".into(),
            ))
        }
        (ObjectiveConfig::Quadratic { .. } | ObjectiveConfig::Rosenbrock { .. }, Some(_)) => {
            return Err(CliError::Config(
                "this objective takes no [dataset] table".into(),
            ))
        }
        (_, Some(d)) => Some(Arc::new(load_dataset(d, base)?)),
        (_, None) => None,
    };
    let (objective, initial) = match (&file.objective, data) {
        (
            ObjectiveConfig::Quadratic {
                coefficients,
                initial,
            },
            _,
        ) => {
            let q = QuadraticObjective::new(point(coefficients, "objective.coefficients")?)?;
            (
                BuiltObjective::Quadratic(Arc::new(q)),
                point(initial, "objective.initial")?,
            )
        }
        (ObjectiveConfig::Rosenbrock { initial }, _) => (
            BuiltObjective::Rosenbrock(Arc::new(Rosenbrock)),
            point(
                initial.as_deref().unwrap_or(&[-1.2, 1.0]),
                "objective.initial",
            )?,
        ),
        (ObjectiveConfig::LogisticRegression { initial }, Some(ds)) => {
            let lr = LogisticRegressionObjective::new(ds);
            let w = match initial {
                Some(v) => point(v, "objective.initial")?,
                None => ParamVector::zeros(lr.dim()),
            };
            (BuiltObjective::LogisticRegression(Arc::new(lr)), w)
        }
        (ObjectiveConfig::Mlp { hidden, init_seed }, Some(ds)) => {
            let mlp = MlpObjective::new(ds, *hidden)?;
            let w = mlp.init_params(init_seed.unwrap_or(run.seed));
            (BuiltObjective::Mlp(Arc::new(mlp)), w)
        }
        _ => unreachable!("dataset presence checked above"),
    };
    let metric = match &file.compare {
        Some(c) => c.metric()?,
        None => Metric::FinalLoss,
    };
    let optimizers = file
        .optimizers
        .iter()
        .map(OptimizerConfig::to_spec)
        .collect();
    let setup = Setup {
        objective,
        initial,
        run,
        optimizers,
        metric,
    };
    // Surface bad run settings as config errors before any work starts.
    setup
        .experiment("config", OptimizerSpec::Baseline(BaselineConfig::Sgd))
        .config
        .validate()?;
    Ok(setup)
}

pub fn load_config(path: &Path, overrides: &CommonArgs) -> Result<Setup, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_config(&text, base, overrides)
}

fn require_config(args: &CommonArgs) -> Result<&Path, CliError> {
    args.config
        .as_deref()
        .ok_or_else(|| CliError::Config("--config is required for this subcommand".into()))
}

// ---------------------------------------------------------------------------
// Output

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
    }
    fs::write(path, contents)
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("summary serializes");
    s.push('\n');
    s
}

/// Writes `table_name` plus one trace file per completed row.
fn write_table(out: &Path, table_name: &str, table: &ComparisonTable) -> Result<(), CliError> {
    write_file(&out.join(table_name), &table.to_csv())?;
    for (row, trace) in table.rows.iter().zip(&table.traces) {
        if let Some(trace) = trace {
            write_file(&out.join(&row.trace_file), &trace.to_jsonl())?;
        }
    }
    Ok(())
}

fn diverged_rows(table: &ComparisonTable) -> Result<(), CliError> {
    let diverged: Vec<String> = table
        .rows
        .iter()
        .filter_map(|r| match r.status {
            RunStatus::Diverged { step } => Some(format!("{} at step {step}", r.label)),
            RunStatus::Completed => None,
        })
        .collect();
    if diverged.is_empty() {
        Ok(())
    } else {
        Err(CliError::Divergence(diverged.join(", ")))
    }
}

// ---------------------------------------------------------------------------
// Subcommands

/// Writes `trace.jsonl` and `summary.json`, plus `regret.csv` when the run
/// kept per-step snapshots of an objective with a known optimum.
pub fn cmd_run(args: &CommonArgs) -> Result<Trace, CliError> {
    let setup = load_config(require_config(args)?, args)?;
    let [(label, spec)] = setup.optimizers.as_slice() else {
        return Err(CliError::Config(format!(
            "run expects exactly one [[optimizer]] entry, found {}",
            setup.optimizers.len()
        )));
    };
    let trace = harness::run(&setup.experiment(label, *spec))?;
    write_file(&args.out.join("trace.jsonl"), &trace.to_jsonl())?;
    write_file(&args.out.join("summary.json"), &to_json(&trace.summary()))?;
    let objective = setup.objective.as_dyn();
    if setup.run.snapshot && setup.run.eval_every == 1 && objective.known_optimum().is_some() {
        let report = harness::compute_regret(&trace, objective.as_ref(), &[])?;
        let mut wtr = csv::Writer::from_writer(Vec::new());
        wtr.write_record(["t", "regret", "regret_over_t"])
            .expect("in-memory write");
        for (i, r) in report.partial_sums.iter().enumerate() {
            let t = i as u64 + 1;
            wtr.write_record([t.to_string(), r.to_string(), (r / t as f64).to_string()])
                .expect("in-memory write");
        }
        let bytes = wtr.into_inner().expect("in-memory flush");
        write_file(
            &args.out.join("regret.csv"),
            &String::from_utf8(bytes).expect("utf-8"),
        )?;
    }
    Ok(trace)
}

/// Writes `comparison.csv` and `traces/*.jsonl`. Diverged rows are kept in the
/// table and reported as a divergence once everything is written.
pub fn cmd_compare(args: &CommonArgs) -> Result<ComparisonTable, CliError> {
    let setup = load_config(require_config(args)?, args)?;
    if setup.optimizers.is_empty() {
        return Err(CliError::Config(
            "compare needs at least one [[optimizer]] entry".into(),
        ));
    }
    let table = harness::compare(&setup.experiments(), setup.metric, true)?;
    write_table(&args.out, "comparison.csv", &table)?;
    diverged_rows(&table)?;
    Ok(table)
}

/// Runs DEAM once per backtrack variant. Hyperparameters come from the first
/// `deam` optimizer entry, or the defaults when there is none.
pub fn cmd_ablate_dt(args: &CommonArgs) -> Result<ComparisonTable, CliError> {
    let setup = load_config(require_config(args)?, args)?;
    let hp = setup
        .optimizers
        .iter()
        .find_map(|(_, spec)| match spec {
            OptimizerSpec::Deam(hp) => Some(*hp),
            OptimizerSpec::Baseline(_) => None,
        })
        .unwrap_or_default();
    let experiments: Vec<Experiment> = BacktrackVariant::ALL
        .iter()
        .map(|&v| {
            setup.experiment(
                &format!("deam-{v}"),
                OptimizerSpec::Deam(hp.with_backtrack(v)),
            )
        })
        .collect();
    let table = harness::compare(&experiments, setup.metric, true)?;
    write_table(&args.out, "ablation.csv", &table)?;
    diverged_rows(&table)?;
    Ok(table)
}

pub const COUNTEREXAMPLE_TARGET: [f64; 2] = [-3.0, 0.0];
pub const COUNTEREXAMPLE_TOLERANCE: f64 = 1e-9;
pub const COUNTEREXAMPLE_THRESHOLD: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RouteSummary {
    pub label: String,
    pub first_step: ParamVector,
    pub first_hit: Option<u64>,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CounterexampleSummary {
    pub eta: f64,
    pub steps: u64,
    pub threshold: f64,
    pub target: [f64; 2],
    pub tolerance: f64,
    pub routes: Vec<RouteSummary>,
}

/// The three counterexample runs, unguarded Adam so the first step is exact.
pub fn counterexample_experiments(steps: u64) -> Vec<Experiment> {
    let objective: Arc<dyn Objective> = Arc::new(QuadraticObjective::counterexample());
    let adam = |beta1| {
        OptimizerSpec::Baseline(BaselineConfig::Adam {
            beta1,
            beta2: 0.999,
            div_guard: 0.0,
        })
    };
    [
        ("adam_beta1_0.9", adam(0.9)),
        ("adam_beta1_0.0", adam(0.0)),
        ("deam", OptimizerSpec::Deam(DeamHyperparams::default())),
    ]
    .into_iter()
    .map(|(label, spec)| {
        let mut cfg = ExperimentConfig::new(label, spec, 1.0, steps);
        cfg.snapshot = true;
        Experiment::new(objective.clone(), [-4.0, -1.0].into(), cfg)
    })
    .collect()
}

/// Writes `comparison.csv`, `traces/*.jsonl` with per-step snapshots, and
/// `summary.json`, then checks both Adam runs land on (-3, 0) after one step
/// and that Adam(0.0) crosses the threshold first.
pub fn cmd_repro_counterexample(args: &CommonArgs) -> Result<CounterexampleSummary, CliError> {
    if args.config.is_some() {
        return Err(CliError::Config(
            "repro-counterexample takes no --config".into(),
        ));
    }
    let steps = args.steps.unwrap_or(200);
    let experiments = counterexample_experiments(steps);
    let table = harness::compare(
        &experiments,
        Metric::StepsToThreshold(COUNTEREXAMPLE_THRESHOLD),
        false,
    )?;
    write_table(&args.out, "comparison.csv", &table)?;
    diverged_rows(&table)?;
    let routes: Vec<RouteSummary> = table
        .traces
        .iter()
        .flatten()
        .map(|trace| RouteSummary {
            label: trace.label.clone(),
            first_step: match trace.records.get(1) {
                Some(r) => r.w.clone().expect("snapshots enabled"),
                None => trace.final_w.clone(),
            },
            first_hit: trace.first_hit(COUNTEREXAMPLE_THRESHOLD),
            final_loss: trace.final_loss,
        })
        .collect();
    let summary = CounterexampleSummary {
        eta: 1.0,
        steps,
        threshold: COUNTEREXAMPLE_THRESHOLD,
        target: COUNTEREXAMPLE_TARGET,
        tolerance: COUNTEREXAMPLE_TOLERANCE,
        routes,
    };
    write_file(&args.out.join("summary.json"), &to_json(&summary))?;

    for route in summary
        .routes
        .iter()
        .filter(|r| r.label.starts_with("adam"))
    {
        let off = route
            .first_step
            .iter()
            .zip(COUNTEREXAMPLE_TARGET)
            .any(|(w, t)| (w - t).abs() > COUNTEREXAMPLE_TOLERANCE);
        if off {
            return Err(CliError::Assertion(format!(
                "{} landed at ({}, {}) after one step, expected (-3, 0)",
                route.label, route.first_step[0], route.first_step[1]
            )));
        }
    }
    let hit = |label: &str| {
        summary
            .routes
            .iter()
            .find(|r| r.label == label)
            .and_then(|r| r.first_hit)
    };
    match (hit("adam_beta1_0.0"), hit("adam_beta1_0.9")) {
        (Some(fast), Some(slow)) if fast < slow => Ok(summary),
        (fast, slow) => Err(CliError::Assertion(format!(
            "expected adam_beta1_0.0 to reach f < {COUNTEREXAMPLE_THRESHOLD} before adam_beta1_0.9, \
             first hits were {fast:?} and {slow:?}"
        ))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub objective: ObjectiveKind,
    pub seed: u64,
    pub threshold: f64,
    pub errors: Vec<f64>,
}

impl GradcheckReport {
    pub fn max_error(&self) -> f64 {
        self.errors.iter().copied().fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_error() < self.threshold
    }
}

pub const GRADCHECK_POINTS: usize = 20;
const GRADCHECK_STEP: f64 = 1e-5;
const GRADCHECK_BATCH: usize = 32;
/// MLP points whose pre-activations come this close to zero are redrawn.
const KINK_MARGIN: f64 = 1e-3;

/// The built-in objective behind `gradcheck --objective`.
pub fn builtin_objective(kind: ObjectiveKind, seed: u64) -> Result<BuiltObjective, CliError> {
    let blobs = || data::gen_blobs(200, 5, 3, 4.0, seed).map(Arc::new);
    Ok(match kind {
        ObjectiveKind::Quadratic => BuiltObjective::Quadratic(Arc::new(QuadraticObjective::new(
            [1.0, 4.0, 0.5, 2.0].into(),
        )?)),
        ObjectiveKind::Rosenbrock => BuiltObjective::Rosenbrock(Arc::new(Rosenbrock)),
        ObjectiveKind::LogisticRegression => {
            BuiltObjective::LogisticRegression(Arc::new(LogisticRegressionObjective::new(blobs()?)))
        }
        ObjectiveKind::Mlp => BuiltObjective::Mlp(Arc::new(MlpObjective::new(blobs()?, 8)?)),
    })
}

fn sample_batch(n: usize, rng: &mut Rng) -> Batch {
    let mut idx: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut idx);
    idx.truncate(GRADCHECK_BATCH.min(n));
    idx.sort_unstable();
    Batch::Indices(idx)
}

/// Relative gradient error at [`GRADCHECK_POINTS`] points drawn from `seed`.
pub fn gradcheck_objective(
    objective: &BuiltObjective,
    seed: u64,
) -> Result<GradcheckReport, CliError> {
    let obj = objective.as_dyn();
    let mut errors = Vec::with_capacity(GRADCHECK_POINTS);
    for k in 0..GRADCHECK_POINTS as u64 {
        let mut rng = Rng::derive(seed, k);
        let (w, batch) = match objective {
            BuiltObjective::Quadratic(_) => (rng.uniform_vector(obj.dim(), -5.0, 5.0), Batch::Full),
            BuiltObjective::Rosenbrock(_) => {
                (rng.uniform_vector(obj.dim(), -2.0, 2.0), Batch::Full)
            }
            BuiltObjective::LogisticRegression(_) => {
                let batch = sample_batch(obj.num_samples(), &mut rng);
                (rng.normal_vector(obj.dim(), 1.0), batch)
            }
            BuiltObjective::Mlp(mlp) => {
                let batch = sample_batch(obj.num_samples(), &mut rng);
                let mut tries = 0;
                loop {
                    let w = mlp.init_params(rng.next_u64());
                    if mlp.min_abs_preactivation(&w, &batch)? > KINK_MARGIN {
                        break (w, batch);
                    }
                    tries += 1;
                    if tries == 1000 {
                        return Err(CliError::Assertion(format!(
                            "no kink-free MLP point found for point {k}"
                        )));
                    }
                }
            }
        };
        errors.push(gradcheck(obj.as_ref(), &w, &batch, GRADCHECK_STEP)?);
    }
    Ok(GradcheckReport {
        objective: objective.kind(),
        seed,
        threshold: objective.kind().gradcheck_threshold(),
        errors,
    })
}

pub fn cmd_gradcheck(args: &GradcheckArgs) -> Result<GradcheckReport, CliError> {
    let common = &args.common;
    let (objective, seed) = match (&common.config, args.objective) {
        (Some(_), Some(_)) => {
            return Err(CliError::Config(
                "pass either --config or --objective, not both".into(),
            ))
        }
        (None, None) => return Err(CliError::Config("pass --config or --objective".into())),
        (Some(path), None) => {
            let setup = load_config(path, common)?;
            (setup.objective, setup.run.seed)
        }
        (None, Some(kind)) => {
            let seed = common.seed.unwrap_or(0);
            (builtin_objective(kind, seed)?, seed)
        }
    };
    let report = gradcheck_objective(&objective, seed)?;
    if report.passed() {
        Ok(report)
    } else {
        Err(CliError::Assertion(format!(
            "max relative gradient error {:e} is not below {:e}",
            report.max_error(),
            report.threshold
        )))
    }
}

/// Runs one parsed command, printing a short report to stdout.
pub fn execute(command: &Command) -> Result<(), CliError> {
    match command {
        Command::Run(args) => {
            let trace = cmd_run(args)?;
            println!(
                "{}: {} steps, final loss {:e}; wrote {}",
                trace.label,
                trace.steps,
                trace.final_loss,
                args.out.join("trace.jsonl").display()
            );
        }
        Command::Compare(args) => {
            let table = cmd_compare(args)?;
            print!("{}", table.to_text());
        }
        Command::AblateDt(args) => {
            let table = cmd_ablate_dt(args)?;
            print!("{}", table.to_text());
        }
        Command::ReproCounterexample(args) => {
            let summary = cmd_repro_counterexample(args)?;
            for r in &summary.routes {
                println!(
                    "{}: w1 = ({}, {}), first f < {} at step {}",
                    r.label,
                    r.first_step[0],
                    r.first_step[1],
                    summary.threshold,
                    r.first_hit.map_or("-".to_string(), |s| s.to_string())
                );
            }
        }
        Command::Gradcheck(args) => {
            let report = cmd_gradcheck(args)?;
            println!(
                "{:?}: max relative error {:e} over {} points (threshold {:e})",
                report.objective,
                report.max_error(),
                report.errors.len(),
                report.threshold
            );
        }
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
