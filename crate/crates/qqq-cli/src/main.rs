//! `qqq`: derive spin-model parameters, run protocols and sweep them.
//!
//! Exit codes: 0 on success, 2 for configuration errors, 3 for numerical
//! failures.

mod manifest;

use clap::{Parser, Subcommand};
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use manifest::{ErrorRecord, RunManifest};
use qqq_core::analysis::{parse_grid, sweep, FidelityReport};
use qqq_core::circuit_model::{derive, CircuitParams};
use qqq_core::protocols::{CollapseRecord, ProtocolConfig, ProtocolKind};
use qqq_core::{CarrierMode, Error};

#[derive(Parser)]
#[command(name = "qqq", version, about = "Qubit-qutrit-qubit circuit simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Circuit parameters to spin-model parameters.
    Derive {
        input: PathBuf,
        /// Spin-model JSON; stdout when omitted.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Run one configured protocol.
    Simulate {
        input: PathBuf,
        /// Trajectory CSV.
        #[arg(long)]
        out: PathBuf,
        /// Fidelity report JSON.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, value_parser = parse_carrier)]
        carrier: Option<CarrierMode>,
        /// `default`, `none`, or `T1,T2` in microseconds.
        #[arg(long)]
        collapse: Option<String>,
    },
    /// Run a protocol over a grid of one parameter.
    Sweep {
        input: PathBuf,
        #[arg(long)]
        param: String,
        /// `start:stop:count`; `pi` expressions are accepted.
        #[arg(long)]
        grid: String,
        #[arg(long)]
        out: PathBuf,
        /// Observables to record; defaults to those in the config.
        #[arg(long = "observable")]
        observables: Vec<String>,
    },
}

fn parse_carrier(s: &str) -> Result<CarrierMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        3
    } else {
        2
    }
}

fn collapse_override(spec: &str) -> qqq_core::Result<Option<CollapseRecord>> {
    match spec {
        "default" => Ok(Some(CollapseRecord::default())),
        "none" => Ok(None),
        s => {
            let bad = || Error::Config(format!("--collapse expects default, none or T1,T2 in us; got `{s}`"));
            let (a, b) = s.split_once(',').ok_or_else(bad)?;
            let t1_us = a.trim().parse().map_err(|_| bad())?;
            let t2_us = b.trim().parse().map_err(|_| bad())?;
            let r = CollapseRecord { t1_us, t2_us };
            r.collapse()?;
            Ok(Some(r))
        }
    }
}

#[derive(Serialize)]
struct SimulationReport<'a> {
    kind: ProtocolKind,
    #[serde(flatten)]
    fidelity: &'a FidelityReport,
    metrics: &'a BTreeMap<String, f64>,
    warnings: &'a [String],
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> qqq_core::Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn run_derive(input: &Path, out: Option<&Path>, m: &mut RunManifest) -> qqq_core::Result<()> {
    let text = std::fs::read_to_string(input)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", input.display())))?;
    let cp: CircuitParams =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", input.display())))?;
    let d = derive(&cp)?;
    m.warnings = d.warnings.clone();
    for w in &d.warnings {
        eprintln!("warning: {w}");
    }
    let json = serde_json::to_string_pretty(&d.spin.record())? + "\n";
    match out {
        Some(p) => {
            std::fs::write(p, json)?;
            m.outputs.push(p.to_path_buf());
        }
        None => print!("{json}"),
    }
    Ok(())
}

fn run_simulate(
    input: &Path,
    out: &Path,
    report: Option<&Path>,
    carrier: Option<CarrierMode>,
    collapse: Option<&str>,
    m: &mut RunManifest,
) -> qqq_core::Result<()> {
    let mut cfg = ProtocolConfig::load(input)?;
    if let Some(c) = carrier {
        cfg.carrier_mode = Some(c);
    }
    if let Some(s) = collapse {
        cfg.collapse = Some(collapse_override(s)?);
    }
    m.integrator = Some(cfg.run_options()?.integrator);
    let outcome = qqq_core::run_protocol(&cfg)?;
    m.warnings = outcome.warnings.clone();
    outcome.trajectory.save_csv(out)?;
    m.outputs.push(out.to_path_buf());
    if let Some(r) = report {
        let body = SimulationReport {
            kind: outcome.kind,
            fidelity: &outcome.report,
            metrics: &outcome.metrics,
            warnings: &outcome.warnings,
        };
        write_json(r, &body)?;
        m.outputs.push(r.to_path_buf());
    }
    if let Some(f) = outcome.report.state_fidelity {
        eprintln!("state fidelity {f:.6}");
    }
    Ok(())
}

fn run_sweep(
    input: &Path,
    param: &str,
    grid: &str,
    out: &Path,
    observables: &[String],
    m: &mut RunManifest,
) -> qqq_core::Result<()> {
    let cfg = ProtocolConfig::load(input)?;
    m.integrator = Some(cfg.run_options()?.integrator);
    let grid = parse_grid(grid)?;
    let result = sweep(&cfg, param, &grid, observables)?;
    let file = std::fs::File::create(out)?;
    result.write_csv(std::io::BufWriter::new(file))?;
    m.outputs.push(out.to_path_buf());
    for row in result.rows.iter().filter(|r| r.error.is_some()) {
        m.warnings.push(format!("{} = {}: {}", row.param, row.value, row.error.as_deref().unwrap_or("")));
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (name, input, primary) = match &cli.command {
        Command::Derive { input, out } => ("derive", input, out.clone()),
        Command::Simulate { input, out, .. } => ("simulate", input, Some(out.clone())),
        Command::Sweep { input, out, .. } => ("sweep", input, Some(out.clone())),
    };
    let mut manifest = RunManifest::start(name, input);
    let result = match &cli.command {
        Command::Derive { input, out } => run_derive(input, out.as_deref(), &mut manifest),
        Command::Simulate {
            input,
            out,
            report,
            carrier,
            collapse,
        } => run_simulate(input, out, report.as_deref(), *carrier, collapse.as_deref(), &mut manifest),
        Command::Sweep {
            input,
            param,
            grid,
            out,
            observables,
        } => run_sweep(input, param, grid, out, observables, &mut manifest),
    };
    let code = match &result {
        Ok(()) => 0,
        Err(e) => {
            let code = exit_code(e);
            eprintln!("error: {e}");
            manifest.error = Some(ErrorRecord {
                exit_code: code,
                message: e.to_string(),
            });
            code
        }
    };
    if let Some(p) = primary {
        if let Err(e) = manifest.finish(&RunManifest::path_for(&p)) {
            eprintln!("error: cannot write manifest: {e}");
        }
    }
    ExitCode::from(code as u8)
}
