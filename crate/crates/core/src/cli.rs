//! Command-line front end: `pretrain`, `run <scenario> <controller>` and
//! `compare`.
//!
//! Exit status is 0 on success, 1 for usage, configuration and file errors,
//! and 2 when a simulation diverges or pretraining fails.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use log::{info, warn};
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};
use crate::hdp::HdpController;
use crate::mlp::Mlp;
use crate::sim::{
    self, write_metrics_row, write_trace, Controller, ControllerTag, Metrics, ScenarioSpec, METRICS_HEADER,
    SCENARIO_NAMES,
};

pub const CRITIC_FILE: &str = "critic.mlp";
pub const ACTION_FILE: &str = "action.mlp";
pub const RESIDUALS_FILE: &str = "pretrain_residuals.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const EFFECTIVE_CONFIG_FILE: &str = "effective_config.toml";

#[derive(Debug, Parser)]
#[command(name = "boost-hdp", version, about = "HDP neuro-control of a DC-DC boost converter")]
pub struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `output_dir`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Global seed (overrides `seed`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the critic on the PI excitation log and warm-start the action network.
    Pretrain,
    /// Run one scenario with one controller.
    Run {
        /// startup, load_change or input_change.
        scenario: String,
        /// PI, HDP or HDP-frozen.
        controller: String,
    },
    /// Run every configured scenario under PI and HDP and print a table.
    Compare,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Runtime(_) => 2,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

/// Parses `args` and runs the command. Returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let config = effective_config(cli)?;
    let out = config.output_dir.clone();
    fs::create_dir_all(&out).map_err(io_err(&out))?;
    let path = out.join(EFFECTIVE_CONFIG_FILE);
    fs::write(&path, config.to_toml()).map_err(io_err(&path))?;
    match &cli.command {
        Command::Pretrain => pretrain(&config).map(|_| ()),
        Command::Run { scenario, controller } => run(&config, scenario, controller),
        Command::Compare => compare(&config),
    }
}

/// Loads the config file (or defaults), applies the flag overrides and logs
/// every defaulted parameter.
pub fn effective_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let (mut config, defaulted) = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::parse("")?,
    };
    for (key, value) in defaulted {
        let overridden = (key == "seed" && cli.seed.is_some()) || (key == "output_dir" && cli.out.is_some());
        if !overridden {
            info!("default {key} = {value}");
        }
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.output_dir = out.clone();
    }
    Ok(config)
}

/// Runs the offline pipeline and writes the snapshots and residual history.
pub fn pretrain(config: &RunConfig) -> Result<HdpController, CliError> {
    let harness = config.harness();
    let pi = config.pi_controller()?;
    let report = sim::pretrain(&harness, &pi, &config.excitation, &config.pretrain, config.seed)
        .map_err(|e| CliError::Runtime(format!("pretraining failed: {e}")))?;
    let hist = &report.critic_history;
    info!(
        "critic: {} transitions, {} epochs, residual {:.3e} -> {:.3e}",
        report.log_len,
        hist.len() - 1,
        hist[0],
        hist[hist.len() - 1]
    );
    if let Some(mse) = report.warm_start_history.last() {
        info!("action warm start: mse {mse:.3e}");
    }

    let out = &config.output_dir;
    let mut csv = String::from("epoch,mean_squared_residual\n");
    for (epoch, r) in hist.iter().enumerate() {
        let _ = writeln!(csv, "{epoch},{r:e}");
    }
    let path = out.join(RESIDUALS_FILE);
    fs::write(&path, csv).map_err(io_err(&path))?;
    let path = out.join(CRITIC_FILE);
    fs::write(&path, report.controller.critic().save()).map_err(io_err(&path))?;
    let path = out.join(ACTION_FILE);
    fs::write(&path, report.controller.action().save()).map_err(io_err(&path))?;
    Ok(report.controller)
}

/// Reads the network snapshots from the output directory.
pub fn load_controller(config: &RunConfig) -> Result<HdpController, CliError> {
    let read = |name: &str| -> Result<Mlp, CliError> {
        let path = config.output_dir.join(name);
        if !path.exists() {
            return Err(CliError::Usage(format!(
                "{} not found; pretrain first (`boost-hdp pretrain`)",
                path.display()
            )));
        }
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        Mlp::load(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    };
    HdpController::from_networks(config.hdp.clone(), read(CRITIC_FILE)?, read(ACTION_FILE)?)
        .map_err(|e| CliError::Usage(format!("snapshots do not match [hdp]: {e}")))
}

fn parse_scenario(name: &str) -> Result<&'static str, CliError> {
    SCENARIO_NAMES.iter().copied().find(|s| *s == name).ok_or_else(|| {
        CliError::Usage(format!("unknown scenario `{name}`; expected one of {}", SCENARIO_NAMES.join(", ")))
    })
}

/// Runs one cell, writes `<scenario>_<controller>.csv` and appends to
/// `metrics.csv`.
fn run_cell(
    config: &RunConfig,
    scenario: &str,
    tag: ControllerTag,
    hdp: Option<&HdpController>,
) -> Result<Metrics, CliError> {
    let s = &config.scenarios;
    let spec = ScenarioSpec::named(scenario, tag, s.duration, s.t_step, &config.plant).map_err(CliError::Usage)?;
    let mut controller = match (tag, hdp) {
        (ControllerTag::Pi, _) => Controller::Pi(config.pi_controller()?),
        (_, Some(ctrl)) => Controller::Hdp { ctrl: ctrl.clone(), learn: tag == ControllerTag::Hdp },
        (_, None) => unreachable!("HDP cells are given a controller"),
    };
    let output = config
        .harness()
        .run_scenario(&spec, &mut controller)
        .map_err(|e| CliError::Runtime(format!("{scenario} / {tag}: {e}")))?;

    let out = &config.output_dir;
    let path = out.join(format!("{scenario}_{tag}.csv"));
    let file = File::create(&path).map_err(io_err(&path))?;
    write_trace(BufWriter::new(file), &output.trace).map_err(io_err(&path))?;

    let path = out.join(METRICS_FILE);
    let fresh = fs::metadata(&path).map(|m| m.len() == 0).unwrap_or(true);
    let mut file = OpenOptions::new().create(true).append(true).open(&path).map_err(io_err(&path))?;
    if fresh {
        writeln!(file, "{METRICS_HEADER}").map_err(io_err(&path))?;
    }
    write_metrics_row(&mut file, scenario, tag, &output.metrics).map_err(io_err(&path))?;
    Ok(output.metrics)
}

pub fn run(config: &RunConfig, scenario: &str, controller: &str) -> Result<(), CliError> {
    let scenario = parse_scenario(scenario)?;
    let tag: ControllerTag = controller.parse().map_err(CliError::Usage)?;
    let hdp = match tag {
        ControllerTag::Pi => None,
        _ => Some(load_controller(config)?),
    };
    let m = run_cell(config, scenario, tag, hdp.as_ref())?;
    println!("{}", table(&[(scenario.to_string(), tag, Some(m))]));
    Ok(())
}

/// Every configured scenario under PI and learning HDP. Pretrains first when
/// no snapshots exist. Failed cells are reported and the rest still run.
pub fn compare(config: &RunConfig) -> Result<(), CliError> {
    let hdp = match load_controller(config) {
        Ok(ctrl) => ctrl,
        Err(CliError::Usage(msg)) if msg.contains("pretrain first") => {
            info!("no snapshots in {}; pretraining", config.output_dir.display());
            pretrain(config)?
        }
        Err(e) => return Err(e),
    };
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for scenario in &config.scenarios.names {
        let scenario = parse_scenario(scenario)?;
        for tag in [ControllerTag::Pi, ControllerTag::Hdp] {
            match run_cell(config, scenario, tag, Some(&hdp)) {
                Ok(m) => rows.push((scenario.to_string(), tag, Some(m))),
                Err(e) => {
                    warn!("{e}");
                    rows.push((scenario.to_string(), tag, None));
                    failures.push(e);
                }
            }
        }
    }
    println!("{}", table(&rows));
    match failures.into_iter().next() {
        None => Ok(()),
        Some(first) => Err(first),
    }
}

/// Fixed-width comparison table; `None` marks a failed cell.
pub fn table(rows: &[(String, ControllerTag, Option<Metrics>)]) -> String {
    let mut s = format!(
        "{:<13} {:<10} {:>11} {:>13} {:>10} {:>10} {:>8}\n",
        "scenario", "controller", "settling_ms", "overshoot_pct", "iae_vs", "peak_v", "sse_v"
    );
    for (scenario, tag, m) in rows {
        let _ = match m {
            Some(m) => writeln!(
                s,
                "{:<13} {:<10} {:>11} {:>13.2} {:>10.4} {:>10.2} {:>8.2}",
                scenario,
                tag.name(),
                m.settling_time.map_or("unsettled".into(), |t| format!("{:.2}", t * 1e3)),
                m.overshoot,
                m.iae,
                m.peak_deviation,
                m.steady_state_error
            ),
            None => writeln!(s, "{:<13} {:<10} {:>11}", scenario, tag.name(), "failed"),
        };
    }
    s.pop();
    s
}
