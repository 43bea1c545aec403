use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use rydcav::estimation::{
    fit_atom_number, fit_entry_time, fit_power_dependence, fit_rabi_calibration, fit_spectroscopy, FitOptions,
    FitResult, RabiChannels, SpectroscopySetup,
};
use rydcav::experiments::{trueness::trueness_ledger, trueness::TruenessInputs, Experiment, SignalSetup};
use rydcav::io::{
    load_config, power_datasets_from_csv, rabi_data_from_csv, run_config, spectra_from_csv, traces_from_csv,
    write_json, CsvColumns, ScenarioConfig,
};
use rydcav::Error;

const EXIT_RUNTIME: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NOT_CONVERGED: u8 = 3;

#[derive(Parser)]
#[command(name = "rydcav", version, about = "Cavity-based Rydberg atom-number detection: simulation and fitting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario config (JSON) or a manifest from a previous run.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, env = "RYDCAV_OUT", default_value = "out")]
    out: PathBuf,
    /// Override the master seed of the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FitTask {
    Trace,
    Entry,
    Power,
    Rabi,
    Spectroscopy,
}

impl FitTask {
    fn name(self) -> &'static str {
        match self {
            FitTask::Trace => "trace",
            FitTask::Entry => "entry",
            FitTask::Power => "power",
            FitTask::Rabi => "rabi",
            FitTask::Spectroscopy => "spectroscopy",
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its data sets.
    Simulate(Common),
    /// Run a single-shot campaign.
    Campaign(Common),
    /// Fit a data file with the model described by the config.
    Fit {
        task: FitTask,
        /// CSV data file.
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Print and write the systematic-error budget.
    Trueness(Common),
}

/// Error with the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn config(error: impl Into<anyhow::Error>) -> Self {
        Failure {
            code: EXIT_CONFIG,
            error: error.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::InvalidParameter { .. }
            | Error::Config(_)
            | Error::Schema(_)
            | Error::Json(_)
            | Error::Csv(_)
            | Error::DispersiveValidity { .. } => EXIT_CONFIG,
            Error::RankDeficient(_) | Error::Unidentifiable(_) => EXIT_NOT_CONVERGED,
            _ => EXIT_RUNTIME,
        };
        Failure {
            code,
            error: e.into(),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Failure {
            code: EXIT_RUNTIME,
            error,
        }
    }
}

type CliResult = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> CliResult {
    let common = match &cli.command {
        Command::Simulate(c) | Command::Campaign(c) | Command::Trueness(c) => c,
        Command::Fit { common, .. } => common,
    };
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match &cli.command {
        Command::Simulate(c) => simulate(c, false),
        Command::Campaign(c) => simulate(c, true),
        Command::Fit { task, data, common } => fit(*task, data, common),
        Command::Trueness(c) => trueness(c),
    }
}

fn read_config(c: &Common) -> std::result::Result<ScenarioConfig, Failure> {
    let mut cfg = load_config(&c.config)
        .map_err(|e| Failure::config(anyhow!(e).context(format!("reading {}", c.config.display()))))?;
    if let Some(seed) = c.seed {
        cfg.master_seed = seed;
    }
    Ok(cfg)
}

fn simulate(c: &Common, campaign_only: bool) -> CliResult {
    let cfg = read_config(c)?;
    let scenario = cfg.to_scenario()?;
    if campaign_only && !matches!(scenario.experiment, Experiment::Campaign(_)) {
        return Err(Failure::config(anyhow!(
            "experiment.kind is '{}', the campaign command needs 'campaign'",
            scenario.experiment.kind()
        )));
    }
    let manifest = run_config(&cfg, &c.out)?;
    for f in &manifest.outputs {
        println!("{}", c.out.join(&f.file).display());
    }
    println!("{}", c.out.join("manifest.json").display());
    Ok(())
}

fn parameters(r: &FitResult) -> serde_json::Value {
    let map: serde_json::Map<String, serde_json::Value> = r
        .names
        .iter()
        .enumerate()
        .map(|(i, n)| {
            (
                n.clone(),
                json!({
                    "value": r.values[i],
                    "uncertainty": r.uncertainties[i],
                    "at_bound": r.at_bound[i],
                }),
            )
        })
        .collect();
    serde_json::Value::Object(map)
}

fn fit_report(r: &FitResult) -> serde_json::Value {
    json!({
        "converged": r.converged,
        "status": r.status,
        "iterations": r.iterations,
        "cost": r.cost,
        "reduced_chi_square": r.reduced_chi_square(),
        "parameters": parameters(r),
        "covariance": r.covariance,
    })
}

fn read_data(path: &Path) -> std::result::Result<CsvColumns, Failure> {
    let cols = CsvColumns::read(path)
        .map_err(|e| Failure::config(anyhow!(e).context(format!("reading {}", path.display()))))?;
    if cols.rows == 0 {
        return Err(Failure::config(anyhow!(Error::Schema(format!(
            "{} contains no data rows",
            path.display()
        )))));
    }
    Ok(cols)
}

fn fit(task: FitTask, data: &Path, c: &Common) -> CliResult {
    let cfg = read_config(c)?;
    let scenario = cfg.to_scenario()?;
    let cols = read_data(data)?;
    let options = FitOptions::default();
    let results: Vec<FitResult> = match task {
        FitTask::Trace | FitTask::Entry => {
            let traces = traces_from_csv(&cols)?;
            let extended = matches!(&scenario.experiment, Experiment::Flythrough(f) if f.extended_cloud);
            let model = SignalSetup::new(&scenario, extended)?.model;
            if matches!(task, FitTask::Trace) {
                vec![fit_atom_number(&traces, &model, &options)?]
            } else {
                traces
                    .iter()
                    .map(|t| fit_entry_time(t, &model, &options))
                    .collect::<rydcav::Result<Vec<_>>>()?
            }
        }
        FitTask::Power => {
            let sets = power_datasets_from_csv(&cols)?;
            vec![fit_power_dependence(&sets, scenario.cavity.kappa, &options)?]
        }
        FitTask::Rabi => {
            let d = rabi_data_from_csv(&cols)?;
            vec![fit_rabi_calibration(&d, scenario.mcp.decay_ratio(), RabiChannels::default(), &options)?]
        }
        FitTask::Spectroscopy => {
            let Experiment::Rabi(r) = &scenario.experiment else {
                return Err(Failure::config(anyhow!("spectroscopy fits need a rabi config with a spectroscopy section")));
            };
            let Some(sp) = &r.spectroscopy else {
                return Err(Failure::config(anyhow!("config has no experiment.spectroscopy section")));
            };
            let setup = SpectroscopySetup {
                dt_i: sp.dt_i,
                decay_interval: sp.decay_interval,
                tau_s: scenario.ensemble.tau_s,
                tau_p: scenario.ensemble.tau_p,
            };
            vec![fit_spectroscopy(&spectra_from_csv(&cols)?, &setup, &options)?]
        }
    };
    let converged = results.iter().all(|r| r.converged);
    let report = json!({
        "task": task.name(),
        "data": data.display().to_string(),
        "config_hash": cfg.hash(),
        "converged": converged,
        "fits": results.iter().map(fit_report).collect::<Vec<_>>(),
    });
    let path = c.out.join(format!("fit_{}.json", task.name()));
    write_json(&report, &path)?;
    for r in &results {
        for (i, n) in r.names.iter().enumerate() {
            println!("{n} = {:.6e} +- {:.3e}", r.values[i], r.uncertainties[i]);
        }
    }
    println!("{}", path.display());
    if !converged {
        return Err(Failure {
            code: EXIT_NOT_CONVERGED,
            error: anyhow!("fit did not converge (see {})", path.display()),
        });
    }
    Ok(())
}

fn trueness(c: &Common) -> CliResult {
    let text = fs::read_to_string(&c.config)
        .map_err(|e| Failure::config(anyhow!(e).context(format!("reading {}", c.config.display()))))?;
    let inputs: TruenessInputs = serde_json::from_str(&text).map_err(|e| Failure::config(Error::Json(e)))?;
    let report = trueness_ledger(&inputs)?;
    print!("{}", report.to_text());
    let path = c.out.join("trueness.json");
    write_json(&report, &path)?;
    println!("{}", path.display());
    Ok(())
}
