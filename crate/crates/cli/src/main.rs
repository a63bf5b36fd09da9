use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use potr_core::harness::{
    self, prepare_output_dir, read_rows_file, ExperimentConfig, GridTable, HarnessError, GRID_RHO_FILE,
    GRID_SIGMA_FILE, RHO_GRID, SIGMA_GRID,
};
use potr_core::verify::{self, Level};

/// Delayed action-chunking benchmark for guided flow-matching samplers.
#[derive(Debug, Parser)]
#[command(name = "potr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every method, delay, suite and episode; write rows and a summary.
    Sweep(RunArgs),
    /// Prior-scale grid for the prior-corrected method at delay 3.
    GridSigma {
        #[command(flatten)]
        run: RunArgs,
        /// Grid values (default 0.1,0.2,0.4,0.6,0.8,1.0).
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
    },
    /// Trust-region radius grid for the projected method at delay 3.
    GridRho {
        #[command(flatten)]
        run: RunArgs,
        /// Grid values; `inf` disables the trust region.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
    },
    /// Summarize an existing rows file.
    Summarize {
        rows: PathBuf,
        /// Config providing the suite weights.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Run the oracle and property checks.
    Verify {
        #[command(flatten)]
        run: RunArgs,
        /// Also run the closed-loop benchmark checks.
        #[arg(long)]
        full: bool,
    },
    /// Print the effective configuration as TOML.
    ShowConfig(RunArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// TOML config file; every field is optional.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed_base: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated subset of naive,rtc,pc,potr.
    #[arg(long, value_delimiter = ',')]
    methods: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    delays: Vec<usize>,
    /// Episodes per (method, delay, suite) cell.
    #[arg(long)]
    episodes: Option<usize>,
    /// Override any config key, e.g. `guidance.rho=0.75`. Named flags win
    /// over `--set`, which wins over the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

enum Failure {
    Config(String),
    Runtime(String),
    Verify,
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        Failure::Config(e.to_string())
    }
}

fn load(path: Option<&Path>, overrides: &[String]) -> Result<ExperimentConfig, Failure> {
    let text = match path {
        Some(p) => fs::read_to_string(p).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?,
        None => String::new(),
    };
    Ok(ExperimentConfig::from_toml_str(&text, overrides)?)
}

impl RunArgs {
    fn config(&self) -> Result<ExperimentConfig, Failure> {
        let mut overrides = self.set.clone();
        if let Some(s) = self.seed_base {
            overrides.push(format!("seed_base={s}"));
        }
        if let Some(out) = &self.out {
            overrides.push(format!("output_dir={:?}", out.display().to_string()));
        }
        if !self.methods.is_empty() {
            let quoted: Vec<String> = self.methods.iter().map(|m| format!("{:?}", m.trim())).collect();
            overrides.push(format!("methods=[{}]", quoted.join(",")));
        }
        if !self.delays.is_empty() {
            let list: Vec<String> = self.delays.iter().map(usize::to_string).collect();
            overrides.push(format!("delays=[{}]", list.join(",")));
        }
        if let Some(n) = self.episodes {
            overrides.push(format!("episodes_per_cell={n}"));
        }
        load(self.config.as_deref(), &overrides)
    }
}

fn check_failures(failed: usize, total: usize, allowed: f64) -> Result<(), Failure> {
    let fraction = if total == 0 { 0.0 } else { failed as f64 / total as f64 };
    if fraction > allowed {
        return Err(Failure::Runtime(format!(
            "{failed} of {total} episodes aborted ({:.1}%), above the allowed {:.1}%",
            100.0 * fraction,
            100.0 * allowed
        )));
    }
    Ok(())
}

fn write_grid(cfg: &ExperimentConfig, table: &GridTable, file: &str, values: usize) -> Result<(), Failure> {
    let csv = table.to_csv()?;
    let path = cfg.output_dir.join(file);
    fs::write(&path, &csv).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    print!("{csv}");
    eprintln!("wrote {}", path.display());
    check_failures(
        table.failures,
        values * cfg.suites.len() * cfg.episodes_per_cell,
        cfg.max_runtime_failure_fraction,
    )
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Sweep(args) => {
            let cfg = args.config()?;
            let out = harness::run_sweep(&cfg)?;
            print!("{}", out.summary.render());
            eprintln!("wrote {} and {}", out.rows_path.display(), out.summary_path.display());
            check_failures(
                out.results.failures.len(),
                out.results.rows.len(),
                cfg.max_runtime_failure_fraction,
            )
        }
        Command::GridSigma { run, values } => {
            let cfg = run.config()?;
            let values = if values.is_empty() { SIGMA_GRID.to_vec() } else { values };
            prepare_output_dir(&cfg.output_dir)?;
            let table = harness::grid_search_sigma(&cfg, &values)?;
            write_grid(&cfg, &table, GRID_SIGMA_FILE, values.len())
        }
        Command::GridRho { run, values } => {
            let cfg = run.config()?;
            let values = if values.is_empty() { RHO_GRID.to_vec() } else { values };
            prepare_output_dir(&cfg.output_dir)?;
            let table = harness::grid_search_rho(&cfg, &values)?;
            write_grid(&cfg, &table, GRID_RHO_FILE, values.len())
        }
        Command::Summarize {
            rows,
            config,
            set,
            json,
        } => {
            let cfg = load(config.as_deref(), &set)?;
            let rows = read_rows_file(&rows)?;
            let summary = harness::emit_summary(&rows, &cfg.suite_weights())?;
            if json {
                let text = serde_json::to_string_pretty(&summary).map_err(|e| Failure::Config(e.to_string()))?;
                println!("{text}");
            } else {
                print!("{}", summary.render());
            }
            Ok(())
        }
        Command::Verify { run, full } => {
            let cfg = run.config()?;
            let level = if full { Level::Full } else { Level::Quick };
            let checks = verify::run_all(level, &cfg);
            for c in &checks {
                println!("{c}");
            }
            if checks.iter().all(|c| c.passed) {
                Ok(())
            } else {
                Err(Failure::Verify)
            }
        }
        Command::ShowConfig(args) => {
            print!("{}", args.config()?.to_toml_string());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Verify) => {
            eprintln!("verification failed");
            ExitCode::from(3)
        }
    }
}
