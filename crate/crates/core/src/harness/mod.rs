//! Closed-loop benchmark runner: sweeps, grid searches and result files.

mod config;
mod summary;

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{ExperimentConfig, GuidanceParams, SuiteConfig};
pub use summary::{emit_summary, MethodSummary, MetricMeans, RelativeDelta, Summary, WorstCase};

use crate::chunking::{splitmix64, ChunkExecutor, ScheduleConfig};
use crate::env::{OraclePolicy, OraclePolicyParams, PointMassEnv};
use crate::error::Error;
use crate::guidance::{GuidanceConfig, Method};
use crate::metrics::EpisodeMetrics;

pub const ROWS_FILE: &str = "rows.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const GRID_SIGMA_FILE: &str = "grid_sigma.csv";
pub const GRID_RHO_FILE: &str = "grid_rho.csv";

/// Delay used by the hyperparameter grid searches.
pub const GRID_DELAY: usize = 3;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Sampling(#[from] Error),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One episode's line in the results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: Method,
    pub delay: usize,
    pub suite: String,
    pub seed: u64,
    pub success: bool,
    pub env_steps: usize,
    pub l2_mean: f64,
    pub l2_max: f64,
    pub max_acc: f64,
    pub max_jerk: f64,
}

impl ResultRow {
    /// Zero-delay rows are reported but kept out of aggregates.
    pub fn excluded_from_aggregate(&self) -> bool {
        self.delay == 0
    }

    fn sort_key(&self) -> (usize, usize, &str, u64) {
        let m = Method::ALL.iter().position(|x| *x == self.method).unwrap_or(usize::MAX);
        (m, self.delay, &self.suite, self.seed)
    }
}

pub fn write_rows<W: io::Write>(out: W, rows: &[ResultRow]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| HarnessError::Csv(e.into()))?;
    Ok(())
}

pub fn read_rows<R: io::Read>(input: R) -> Result<Vec<ResultRow>, HarnessError> {
    let mut r = csv::Reader::from_reader(input);
    let rows = r.deserialize().collect::<Result<Vec<ResultRow>, _>>()?;
    Ok(rows)
}

pub fn read_rows_file(path: &Path) -> Result<Vec<ResultRow>, HarnessError> {
    read_rows(fs::File::open(path).map_err(io_err(path))?)
}

/// An episode that was aborted rather than completed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RuntimeFailure {
    pub method: Method,
    pub delay: usize,
    pub suite: String,
    pub seed: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct ResultSet {
    pub rows: Vec<ResultRow>,
    pub failures: Vec<RuntimeFailure>,
}

impl ResultSet {
    pub fn failure_fraction(&self) -> f64 {
        if self.rows.is_empty() {
            0.0
        } else {
            self.failures.len() as f64 / self.rows.len() as f64
        }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(*b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Episode seed for a (delay, suite, episode) cell. The method is not an
/// input, so every method sees the same environment noise and sampling noise.
pub fn episode_seed(seed_base: u64, delay: usize, suite: &str, episode: usize) -> u64 {
    let h = splitmix64(splitmix64(delay as u64) ^ fnv1a(suite.as_bytes()));
    seed_base.wrapping_add(splitmix64(h ^ episode as u64))
}

pub struct EpisodeOutcome {
    pub metrics: EpisodeMetrics,
    pub actions: Vec<Vec<f64>>,
    pub failure: Option<Error>,
}

/// Run one closed-loop episode under the standard protocol `s = max(d, 1)`.
/// Aborted episodes count as unsuccessful and carry the error that stopped
/// them.
pub fn run_episode(
    config: &ExperimentConfig,
    suite: &SuiteConfig,
    method: Method,
    delay: usize,
    seed: u64,
) -> Result<EpisodeOutcome, HarnessError> {
    let params = config.policy_for(suite);
    let schedule = ScheduleConfig::protocol(params.horizon, suite.env.dim(), delay, config.mask_decay);
    run_trace(suite, &params, schedule, config.guidance.for_method(method), seed)
}

/// Run one episode with an explicit schedule and guidance setting.
pub fn run_trace(
    suite: &SuiteConfig,
    params: &OraclePolicyParams,
    schedule: ScheduleConfig,
    guidance: GuidanceConfig,
    seed: u64,
) -> Result<EpisodeOutcome, HarnessError> {
    let policy = OraclePolicy::new(params.clone())?;
    let mut env = PointMassEnv::reset(suite.env.clone(), splitmix64(seed ^ 0xE))?;

    let mut actions = Vec::new();
    let mut events = Vec::new();
    let mut failure = None;
    if !env.is_done() {
        match ChunkExecutor::start(&env.observe(), &policy, schedule, guidance, splitmix64(seed ^ 0xA)) {
            Err(e) => failure = Some(e),
            Ok(mut exec) => {
                while !env.is_done() {
                    match exec.step(&mut env, &policy) {
                        Ok(step) => {
                            actions.push(step.action);
                            events.extend(step.event);
                        }
                        Err(e) => {
                            failure = Some(e);
                            break;
                        }
                    }
                }
            }
        }
    }
    let success = failure.is_none() && env.succeeded();
    Ok(EpisodeOutcome {
        metrics: EpisodeMetrics::from_trace(success, env.step_count(), &actions, &events),
        actions,
        failure,
    })
}

/// Run every (method, delay, suite, episode) cell in parallel. Rows come back
/// sorted by method, delay, suite and seed.
pub fn run_cells(
    config: &ExperimentConfig,
    methods: &[Method],
    delays: &[usize],
) -> Result<ResultSet, HarnessError> {
    let mut cells = Vec::new();
    for &method in methods {
        for &delay in delays {
            for suite in &config.suites {
                for ep in 0..config.episodes_per_cell {
                    cells.push((method, delay, suite, episode_seed(config.seed_base, delay, &suite.id, ep)));
                }
            }
        }
    }
    let outcomes: Vec<(ResultRow, Option<RuntimeFailure>)> = cells
        .par_iter()
        .map(|&(method, delay, suite, seed)| {
            let out = run_episode(config, suite, method, delay, seed)?;
            let m = out.metrics;
            let row = ResultRow {
                method,
                delay,
                suite: suite.id.clone(),
                seed,
                success: m.success,
                env_steps: m.env_steps,
                l2_mean: m.l2_mean,
                l2_max: m.l2_max,
                max_acc: m.max_acc,
                max_jerk: m.max_jerk,
            };
            let fail = out.failure.map(|e| RuntimeFailure {
                method,
                delay,
                suite: suite.id.clone(),
                seed,
                reason: e.to_string(),
            });
            Ok((row, fail))
        })
        .collect::<Result<_, HarnessError>>()?;

    let mut set = ResultSet::default();
    for (row, fail) in outcomes {
        if let Some(f) = fail {
            log::warn!("{} d={} {} seed {}: {}", f.method, f.delay, f.suite, f.seed, f.reason);
            set.failures.push(f);
        }
        set.rows.push(row);
    }
    set.rows.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    Ok(set)
}

/// Create the output directory and make sure it accepts files, before any
/// episode is run.
pub fn prepare_output_dir(dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let probe = dir.join(".write-probe");
    fs::write(&probe, b"").map_err(io_err(&probe))?;
    fs::remove_file(&probe).map_err(io_err(&probe))?;
    Ok(())
}

pub struct SweepOutput {
    pub results: ResultSet,
    pub summary: Summary,
    pub rows_path: PathBuf,
    pub summary_path: PathBuf,
}

/// Full sweep: run all cells, write the rows file and the summary.
pub fn run_sweep(config: &ExperimentConfig) -> Result<SweepOutput, HarnessError> {
    config.validate()?;
    prepare_output_dir(&config.output_dir)?;
    let results = run_cells(config, &config.methods, &config.delays)?;

    let rows_path = config.output_dir.join(ROWS_FILE);
    write_rows(fs::File::create(&rows_path).map_err(io_err(&rows_path))?, &results.rows)?;

    let summary = emit_summary(&results.rows, &config.suite_weights())?;
    let summary_path = config.output_dir.join(SUMMARY_FILE);
    fs::write(&summary_path, serde_json::to_string_pretty(&summary)?).map_err(io_err(&summary_path))?;
    Ok(SweepOutput {
        results,
        summary,
        rows_path,
        summary_path,
    })
}

/// One line of a hyperparameter grid table, aggregated across suites.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridRow {
    pub value: f64,
    pub success: f64,
    /// Mean steps over successful episodes; `None` if none succeeded.
    pub steps: Option<f64>,
    pub l2_mean: f64,
    pub l2_max: f64,
    pub max_acc: f64,
    pub max_jerk: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridTable {
    /// `sigma_d` or `rho`.
    pub parameter: &'static str,
    pub rows: Vec<GridRow>,
    pub failures: usize,
}

impl GridTable {
    pub fn to_csv(&self) -> Result<String, HarnessError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([self.parameter, "success", "steps", "l2_m", "l2_M", "acc", "jerk"])?;
        for r in &self.rows {
            w.write_record([
                fmt_value(r.value),
                r.success.to_string(),
                r.steps.map_or_else(|| "nan".to_string(), |s| s.to_string()),
                r.l2_mean.to_string(),
                r.l2_max.to_string(),
                r.max_acc.to_string(),
                r.max_jerk.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| HarnessError::Csv(e.into_error().into()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

fn fmt_value(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        v.to_string()
    }
}

fn grid_row(value: f64, rows: &[ResultRow], weights: &[(String, u64)]) -> Result<GridRow, HarnessError> {
    let m = summary::cell_means(rows, weights)?;
    Ok(GridRow {
        value,
        success: m.success,
        steps: m.env_steps,
        l2_mean: m.l2_mean,
        l2_max: m.l2_max,
        max_acc: m.max_acc,
        max_jerk: m.max_jerk,
    })
}

fn run_grid(
    config: &ExperimentConfig,
    parameter: &'static str,
    method: Method,
    values: &[f64],
    set: impl Fn(&mut ExperimentConfig, f64),
) -> Result<GridTable, HarnessError> {
    let mut rows = Vec::with_capacity(values.len());
    let mut failures = 0;
    for &v in values {
        let mut cfg = config.clone();
        set(&mut cfg, v);
        cfg.validate()?;
        let res = run_cells(&cfg, &[method], &[GRID_DELAY])?;
        failures += res.failures.len();
        rows.push(grid_row(v, &res.rows, &cfg.suite_weights())?);
    }
    Ok(GridTable {
        parameter,
        rows,
        failures,
    })
}

pub const SIGMA_GRID: [f64; 6] = [0.1, 0.2, 0.4, 0.6, 0.8, 1.0];
pub const RHO_GRID: [f64; 6] = [0.10, 0.25, 0.50, 0.75, 1.00, f64::INFINITY];

/// PC success and smoothness as a function of the prior scale, at delay 3.
pub fn grid_search_sigma(config: &ExperimentConfig, values: &[f64]) -> Result<GridTable, HarnessError> {
    run_grid(config, "sigma_d", Method::Pc, values, |c, v| c.guidance.sigma_d = v)
}

/// Trust-region radius sweep for the projected method at delay 3.
pub fn grid_search_rho(config: &ExperimentConfig, values: &[f64]) -> Result<GridTable, HarnessError> {
    run_grid(config, "rho", Method::Potr, values, |c, v| c.guidance.rho = v)
}
