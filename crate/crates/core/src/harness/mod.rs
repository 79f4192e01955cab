//! Configuration-driven experiment runner.
//!
//! A run writes four artifacts to its output directory: `report.json`,
//! `trace.csv`, `timing.csv` and `checkpoint.bin`. Only `timing.csv` holds
//! wall-clock measurements; the other three are reproducible from config and
//! seed.

mod artifacts;
mod checkpoint;
mod config;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::search::{
    random_search, retrain_final, Algorithm, PhaseTimes, RetrainMetrics, SearchResult, SearchState, Searcher,
};
use crate::searchspace::{ArchMatrix, SearchSpace};
use crate::tasks::TaskData;

pub use artifacts::{
    export_trajectory, read_trace_csv, switches_path, trajectory_rows, write_timing_csv, write_trace_csv,
    TrajectoryExport, TrajectoryRow,
};
pub use checkpoint::{Checkpoint, MAGIC, VERSION};
pub use config::{
    AlgorithmConfig, ExperimentConfig, OptimizerConfig, OutputConfig, RetrainSection, RunConfig, SpaceConfig,
    TaskConfig, TaskKind, TopologyKind,
};

pub const REPORT_FILE: &str = "report.json";
pub const TRACE_FILE: &str = "trace.csv";
pub const TIMING_FILE: &str = "timing.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";

/// File name of the periodic checkpoint written after `epoch`.
pub fn epoch_checkpoint_file(epoch: usize) -> String {
    format!("checkpoint-{epoch:06}.bin")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Completed,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeChoice {
    pub edge: usize,
    pub from: usize,
    pub to: usize,
    pub operation: String,
    pub op_index: usize,
    pub coefficient: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSummary {
    pub epochs: usize,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub selected_param_count: usize,
    pub switch_counts: Vec<usize>,
    pub total_switches: usize,
    pub degenerate_rows: usize,
    pub first_box_violation: Option<usize>,
    /// Last recorded discretization gap (relaxed searches).
    pub discretization_gap: Option<f64>,
    /// Final continuous architecture parameters, one row per edge.
    pub arch: Vec<Vec<f64>>,
}

/// Artifact file names, relative to the output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifacts {
    pub report: String,
    pub trace: String,
    pub timing: String,
    pub checkpoint: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub status: RunStatus,
    pub error: Option<String>,
    pub config: RunConfig,
    pub algorithm: Algorithm,
    pub epochs_completed: usize,
    /// Empty when the run aborted.
    pub architecture: Vec<EdgeChoice>,
    pub search: Option<SearchSummary>,
    pub retrain: Option<RetrainMetrics>,
    pub artifacts: Artifacts,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }

    fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(REPORT_FILE);
        std::fs::write(&path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Per-edge operation name and coefficient of a discrete architecture.
pub fn describe_architecture(space: &SearchSpace, architecture: &ArchMatrix) -> Vec<EdgeChoice> {
    let ops = architecture.argmax_ops();
    space
        .topology
        .edges()
        .iter()
        .enumerate()
        .map(|(e, &(from, to))| EdgeChoice {
            edge: e,
            from,
            to,
            operation: space.operations.get(ops[e]).name.clone(),
            op_index: ops[e],
            coefficient: architecture.matrix()[[e, ops[e]]],
        })
        .collect()
}

/// Parameters inside the cell, counting only edges with a nonzero coefficient.
pub fn active_param_count(space: &SearchSpace, architecture: &ArchMatrix) -> usize {
    describe_architecture(space, architecture)
        .iter()
        .filter(|c| c.coefficient != 0.0)
        .map(|c| space.operations.get(c.op_index).param_count)
        .sum()
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn summarize(space: &SearchSpace, result: &SearchResult) -> SearchSummary {
    let trace = &result.trace;
    SearchSummary {
        epochs: trace.records.len(),
        val_loss: result.val_loss,
        val_accuracy: result.val_accuracy,
        selected_param_count: active_param_count(space, &result.architecture),
        switch_counts: trace.switch_counts(),
        total_switches: trace.total_switches(),
        degenerate_rows: trace.total_degenerate_rows(),
        first_box_violation: trace.first_box_violation,
        discretization_gap: trace.last().and_then(|r| r.discretization_gap),
        arch: result.arch.matrix().outer_iter().map(|r| r.to_vec()).collect(),
    }
}

struct Prepared {
    task: TaskData,
    space: SearchSpace,
}

fn prepare(config: &RunConfig) -> Result<Prepared> {
    config.validate()?;
    Ok(Prepared {
        task: config.task.build()?,
        space: config.space.build()?,
    })
}

/// Runs the configured search, retrains its result and writes all artifacts
/// to `config.output.dir`. A numerical abort still writes the partial trace,
/// a checkpoint of the last completed epoch and an `aborted` report before
/// returning the error.
pub fn run(config: &RunConfig) -> Result<RunReport> {
    execute(config, None)
}

/// Continues the search saved in `checkpoint` and writes the same artifacts
/// an uninterrupted run would. `out_dir` overrides the embedded output
/// directory.
pub fn resume(checkpoint: impl AsRef<Path>, out_dir: Option<PathBuf>) -> Result<RunReport> {
    let Checkpoint { mut config, state } = Checkpoint::load(checkpoint)?;
    if let Some(dir) = out_dir {
        config.output.dir = dir;
    }
    execute(&config, Some(state))
}

fn execute(config: &RunConfig, initial: Option<SearchState>) -> Result<RunReport> {
    let Prepared { task, space } = prepare(config)?;
    let dir = config.output.dir.clone();
    ensure_dir(&dir)?;
    let search_config = config.search_config();
    let mut artifacts = Artifacts {
        report: REPORT_FILE.into(),
        trace: TRACE_FILE.into(),
        timing: TIMING_FILE.into(),
        checkpoint: None,
    };

    let result = if search_config.algorithm == Algorithm::Random {
        if initial.is_some() {
            return Err(Error::Config("algorithm: random search cannot be resumed".into()));
        }
        random_search(&search_config, &space, &task, search_config.random_budget)?
    } else {
        let mut searcher = match initial {
            Some(state) => Searcher::from_state(search_config, &space, &task, state)?,
            None => Searcher::new(search_config, &space, &task)?,
        };
        artifacts.checkpoint = Some(CHECKPOINT_FILE.into());
        let save = |state: &SearchState, name: &str| {
            Checkpoint {
                config: config.clone(),
                state: state.clone(),
            }
            .save(dir.join(name))
        };
        while !searcher.is_done() {
            if let Err(err) = searcher.step() {
                let state = searcher.state();
                write_trace_csv(&state.trace, dir.join(TRACE_FILE))?;
                write_timing_csv(&state.trace, dir.join(TIMING_FILE))?;
                save(state, CHECKPOINT_FILE)?;
                RunReport {
                    status: RunStatus::Aborted,
                    error: Some(err.to_string()),
                    config: config.clone(),
                    algorithm: config.algorithm.name,
                    epochs_completed: state.epoch,
                    architecture: Vec::new(),
                    search: None,
                    retrain: None,
                    artifacts,
                }
                .write(&dir)?;
                return Err(err);
            }
            let every = config.output.checkpoint_every;
            let epoch = searcher.state().epoch;
            if every > 0 && epoch % every == 0 {
                save(searcher.state(), &epoch_checkpoint_file(epoch))?;
            }
        }
        save(searcher.state(), CHECKPOINT_FILE)?;
        searcher.finish()?
    };

    write_trace_csv(&result.trace, dir.join(TRACE_FILE))?;
    write_timing_csv(&result.trace, dir.join(TIMING_FILE))?;
    let retrain = if config.retrain.enabled {
        Some(retrain_final(&space, &result.architecture, &task, &config.retrain_config())?)
    } else {
        None
    };
    let report = RunReport {
        status: RunStatus::Completed,
        error: None,
        config: config.clone(),
        algorithm: result.algorithm,
        epochs_completed: result.trace.records.len(),
        architecture: describe_architecture(&space, &result.architecture),
        search: Some(summarize(&space, &result)),
        retrain,
        artifacts,
    };
    report.write(&dir)?;
    log::info!(
        "{} finished: val accuracy {:.4}, architecture {:?}",
        result.algorithm,
        result.val_accuracy,
        report.architecture.iter().map(|c| c.operation.as_str()).collect::<Vec<_>>()
    );
    Ok(report)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Median with the two middle values averaged for even lengths.
pub fn median(xs: &[f64]) -> f64 {
    assert!(!xs.is_empty(), "median of an empty sample");
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub eta: f64,
    pub runs: usize,
    pub mean_param_count: f64,
    pub median_param_count: f64,
    pub mean_test_accuracy: f64,
    pub median_test_accuracy: f64,
    /// Per-seed selected parameter counts, in seed order.
    pub param_counts: Vec<usize>,
    pub test_accuracies: Vec<f64>,
}

/// Runs NASP once per `(η, seed)` with seeds `algorithm.seed + i`,
/// `i < experiment.seeds`, retrains each result and aggregates per `η`.
pub fn sweep_eta(config: &RunConfig, etas: &[f64]) -> Result<Vec<SweepRow>> {
    let Prepared { task, space } = prepare(config)?;
    if etas.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
        return Err(Error::Config("etas: values must be nonnegative and finite".into()));
    }
    if etas.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Config("etas: values must be ascending".into()));
    }
    let base = config.search_config();
    let mut rows = Vec::with_capacity(etas.len());
    for &eta in etas {
        let mut param_counts = Vec::new();
        let mut test_accuracies = Vec::new();
        for i in 0..config.experiment.seeds {
            let seed = base.seed + i as u64;
            let cfg = crate::search::SearchConfig {
                algorithm: Algorithm::Nasp,
                eta,
                seed,
                ..base.clone()
            };
            let result = Searcher::new(cfg, &space, &task)?.run()?;
            param_counts.push(active_param_count(&space, &result.architecture));
            let retrain = crate::search::RetrainConfig {
                seed,
                ..config.retrain_config()
            };
            test_accuracies.push(retrain_final(&space, &result.architecture, &task, &retrain)?.test_accuracy);
        }
        let counts: Vec<f64> = param_counts.iter().map(|&c| c as f64).collect();
        log::info!("eta {eta}: parameter counts {param_counts:?}");
        rows.push(SweepRow {
            eta,
            runs: param_counts.len(),
            mean_param_count: mean(&counts),
            median_param_count: median(&counts),
            mean_test_accuracy: mean(&test_accuracies),
            median_test_accuracy: median(&test_accuracies),
            param_counts,
            test_accuracies,
        });
    }
    Ok(rows)
}

pub fn write_sweep_csv(rows: &[SweepRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "eta",
        "runs",
        "mean_param_count",
        "median_param_count",
        "mean_test_accuracy",
        "median_test_accuracy",
    ])?;
    for r in rows {
        w.write_record([
            artifacts::fmt_f64(r.eta),
            r.runs.to_string(),
            artifacts::fmt_f64(r.mean_param_count),
            artifacts::fmt_f64(r.median_param_count),
            artifacts::fmt_f64(r.mean_test_accuracy),
            artifacts::fmt_f64(r.median_test_accuracy),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Median per-epoch phase times of one algorithm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub algorithm: Algorithm,
    pub epochs_measured: usize,
    pub arch_forward: f64,
    pub arch_backward: f64,
    pub arch_update: f64,
    pub weight_forward: f64,
    pub weight_backward: f64,
    pub weight_update: f64,
    pub total: f64,
    pub arch_op_calls: usize,
    pub weight_op_calls: usize,
}

/// Runs every algorithm in `experiment.algorithms` on the same supernet,
/// task and seed, and reports median phase times over the epochs after the
/// first `experiment.warmup`.
pub fn benchmark_timing(config: &RunConfig) -> Result<Vec<TimingRow>> {
    let Prepared { task, space } = prepare(config)?;
    let warmup = config.experiment.warmup;
    if warmup < 1 {
        return Err(Error::Config("experiment.warmup: must be at least 1".into()));
    }
    if config.algorithm.epochs <= warmup {
        return Err(Error::Config(format!(
            "algorithm.epochs: must exceed experiment.warmup ({warmup}) for timing"
        )));
    }
    let mut rows = Vec::new();
    for &algorithm in &config.experiment.algorithms {
        if algorithm == Algorithm::Random {
            return Err(Error::Config("experiment.algorithms: random search has no epoch phases".into()));
        }
        let cfg = crate::search::SearchConfig {
            algorithm,
            ..config.search_config()
        };
        let result = Searcher::new(cfg, &space, &task)?.run()?;
        let measured = &result.trace.records[warmup..];
        let stat = |f: fn(&PhaseTimes) -> f64| median(&measured.iter().map(|r| f(&r.times)).collect::<Vec<_>>());
        let last = result.trace.last().expect("epochs > warmup");
        rows.push(TimingRow {
            algorithm,
            epochs_measured: measured.len(),
            arch_forward: stat(|t| t.arch_forward),
            arch_backward: stat(|t| t.arch_backward),
            arch_update: stat(PhaseTimes::arch),
            weight_forward: stat(|t| t.weight_forward),
            weight_backward: stat(|t| t.weight_backward),
            weight_update: stat(PhaseTimes::weight),
            total: stat(|t| t.total),
            arch_op_calls: last.arch_op_calls,
            weight_op_calls: last.weight_op_calls,
        });
    }
    Ok(rows)
}

pub fn write_timing_table(rows: &[TimingRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "algorithm",
        "epochs_measured",
        "arch_forward",
        "arch_backward",
        "arch_update",
        "weight_forward",
        "weight_backward",
        "weight_update",
        "total",
        "arch_op_calls",
        "weight_op_calls",
    ])?;
    for r in rows {
        w.write_record([
            r.algorithm.name().to_string(),
            r.epochs_measured.to_string(),
            artifacts::fmt_f64(r.arch_forward),
            artifacts::fmt_f64(r.arch_backward),
            artifacts::fmt_f64(r.arch_update),
            artifacts::fmt_f64(r.weight_forward),
            artifacts::fmt_f64(r.weight_backward),
            artifacts::fmt_f64(r.weight_update),
            artifacts::fmt_f64(r.total),
            r.arch_op_calls.to_string(),
            r.weight_op_calls.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
