use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use mpo_sim::config::{self, RunConfig, RunMode};
use mpo_sim::dynamics::{self, DynamicsError, Liouvillian, PropagateOptions};
use mpo_sim::output::{self, RunWriter};
use mpo_sim::state::QuantumState;
use mpo_sim::trajectories::{
    self, EnsembleOptions, RunOptions, TrajectoryError, TrajectoryModel, UnravelingMode,
};
use mpo_sim::{par, verify};

/// Multi-photon optics simulator: master-equation and trajectory runs plus
/// the structural verification suite.
#[derive(Parser)]
#[command(name = "mpo-sim", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Execute the run described by a JSON config.
    Run {
        config: PathBuf,
        /// Dotted-path config overrides, e.g. --override run.t_final=5.0
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Output directory (defaults to the config's run.output_dir or ./out).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the verification suite for a config's model and print the report.
    Verify { config: PathBuf },
}

// Exit codes: 0 success, 2 config error, 3 numerical-guard abort, 4 check failure.
const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_CHECK: u8 = 4;

fn error_record(kind: &str, message: &str) {
    eprintln!(
        "{}",
        serde_json::json!({"error": {"kind": kind, "message": message}})
    );
}

fn main() -> ExitCode {
    par::init_thread_cap();
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Run { config, overrides, out } => run(&config, &overrides, out),
        Cmd::Verify { config } => verify_cmd(&config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(code) => ExitCode::from(code),
    }
}

fn load(path: &PathBuf, overrides: &[String]) -> Result<RunConfig, u8> {
    config::load_config(path, overrides).map_err(|e| {
        error_record("config", &e.to_string());
        EXIT_CONFIG
    })
}

fn run(path: &PathBuf, overrides: &[String], out: Option<PathBuf>) -> Result<(), u8> {
    let cfg = load(path, overrides)?;
    let out_dir = out
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let started = Instant::now();
    let mut writer = RunWriter::new(&out_dir).map_err(|e| {
        error_record("io", &e.to_string());
        EXIT_CONFIG
    })?;

    match cfg.mode {
        RunMode::Master => run_master(&cfg, &mut writer)?,
        RunMode::Jump | RunMode::Homodyne => run_trajectories(&cfg, &mut writer)?,
        RunMode::Verify => {
            let reports = run_verify(&cfg)?;
            writer
                .add("report.json", serde_json::to_string_pretty(&reports).unwrap())
                .map_err(|e| {
                    error_record("io", &e.to_string());
                    EXIT_NUMERICAL
                })?;
            if reports.iter().any(|r| !r.pass) {
                finish(writer, &cfg, started)?;
                error_record("check", "one or more verification checks failed");
                return Err(EXIT_CHECK);
            }
        }
    }
    finish(writer, &cfg, started)?;
    println!("run complete: artifacts in {}", out_dir.display());
    Ok(())
}

fn finish(writer: RunWriter, cfg: &RunConfig, started: Instant) -> Result<(), u8> {
    writer
        .finish(&cfg.echo, started.elapsed().as_secs_f64())
        .map_err(|e| {
            error_record("io", &e.to_string());
            EXIT_NUMERICAL
        })?;
    Ok(())
}

fn run_master(cfg: &RunConfig, writer: &mut RunWriter) -> Result<(), u8> {
    let liou = Liouvillian::from_model(&cfg.params, &cfg.layout).map_err(|e| {
        error_record("config", &e.to_string());
        EXIT_CONFIG
    })?;
    let rho0 = QuantumState::basis_state(&cfg.layout, &cfg.initial_occupations)
        .expect("occupations validated");
    let grid = cfg.time_grid();
    let obs_ops: Vec<_> = cfg.observables.iter().map(|(_, op)| op.clone()).collect();
    let opts = PropagateOptions {
        dt: cfg.dt,
        leak_tol: cfg.leak_tol,
        trace_tol: cfg.trace_tol,
        store_states: false,
    };
    let result = dynamics::propagate(&liou, &rho0, &grid, &obs_ops, &opts).map_err(|e| {
        let kind = match e {
            DynamicsError::LeakExceeded { .. } | DynamicsError::TraceDrift { .. } => "numerical",
            _ => "config",
        };
        error_record(kind, &e.to_string());
        if kind == "numerical" {
            EXIT_NUMERICAL
        } else {
            EXIT_CONFIG
        }
    })?;
    let names: Vec<String> = cfg.observables.iter().map(|(n, _)| n.clone()).collect();
    writer
        .add("timeseries.csv", output::timeseries_csv(&result, &names))
        .map_err(|e| {
            error_record("io", &e.to_string());
            EXIT_NUMERICAL
        })?;
    Ok(())
}

fn run_trajectories(cfg: &RunConfig, writer: &mut RunWriter) -> Result<(), u8> {
    let model =
        TrajectoryModel::from_model(&cfg.params, &cfg.layout, cfg.scheme.clone()).map_err(|e| {
            error_record("config", &e.to_string());
            EXIT_CONFIG
        })?;
    let psi0 = QuantumState::basis_state(&cfg.layout, &cfg.initial_occupations)
        .expect("occupations validated");
    let grid = cfg.time_grid();
    let obs_ops: Vec<_> = cfg.observables.iter().map(|(_, op)| op.clone()).collect();
    let mode = match cfg.mode {
        RunMode::Jump => UnravelingMode::Jump,
        _ => UnravelingMode::Homodyne,
    };
    let opts = EnsembleOptions {
        run: RunOptions { dt: cfg.dt, leak_tol: cfg.leak_tol },
        keep_records: true,
    };
    let stats = trajectories::ensemble_average(
        &model,
        &psi0,
        cfg.n_traj,
        &grid,
        &obs_ops,
        mode,
        cfg.seed.expect("seed validated"),
        &opts,
    )
    .map_err(|e| {
        let kind = match e {
            TrajectoryError::Model(_) | TrajectoryError::BadTimeGrid => "config",
            _ => "numerical",
        };
        error_record(kind, &e.to_string());
        if kind == "config" {
            EXIT_CONFIG
        } else {
            EXIT_NUMERICAL
        }
    })?;
    let names: Vec<String> = cfg.observables.iter().map(|(n, _)| n.clone()).collect();
    let io_err = |e: output::OutputError| {
        error_record("io", &e.to_string());
        EXIT_NUMERICAL
    };
    writer
        .add("records.jsonl", output::records_jsonl(&stats.records))
        .map_err(io_err)?;
    writer
        .add("ensemble_stats.csv", output::ensemble_csv(&stats, &names))
        .map_err(io_err)?;
    Ok(())
}

fn run_verify(cfg: &RunConfig) -> Result<Vec<verify::CheckReport>, u8> {
    verify::default_suite(&cfg.params, &cfg.layout).map_err(|e| {
        error_record("config", &e.to_string());
        EXIT_CONFIG
    })
}

fn verify_cmd(path: &PathBuf) -> Result<(), u8> {
    let cfg = load(path, &[])?;
    let reports = run_verify(&cfg)?;
    println!("{}", serde_json::to_string_pretty(&reports).unwrap());
    if reports.iter().any(|r| !r.pass) {
        error_record("check", "one or more verification checks failed");
        return Err(EXIT_CHECK);
    }
    Ok(())
}
