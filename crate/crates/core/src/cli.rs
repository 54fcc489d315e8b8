//! Command-line interface: `allocate`, `backtest`, `report` and `fetch`.
//!
//! Exit codes: 0 success, 2 input or validation error, 3 solver
//! non-convergence, 4 I/O or network error.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::allocate::{allocate, solve_erc, ErcSolverOptions, Method};
use crate::backtest::{run_backtests, ApyConvention, BacktestConfig, YieldPanel};
use crate::config::{Config, Defaults};
use crate::domain::Universe;
use crate::error::{Error, Result};
use crate::fetch::fetch_remote;
use crate::ingest::{load_fx, load_scores, load_yields, write_bundle};
use crate::output::{emit_outputs, read_ledgers, report_to_csv};
use crate::report::{monthly_report, render_tables, MonthlyReport};
use crate::risk::{build_risk_matrix, normalize, portfolio_risk_report, risk_contributions};

#[derive(Debug, Parser)]
#[command(name = "defi-parity", version, about = "Risk-parity allocation and backtests for scored DeFi protocols")]
pub struct Cli {
    /// Optional TOML config supplying defaults (and the fetch section).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute weights for one method over a scores file.
    Allocate(AllocateArgs),
    /// Run daily-rebalanced backtests and write ledgers, reports and plot data.
    Backtest(BacktestArgs),
    /// Print monthly tables for ledgers written by `backtest`.
    Report(ReportArgs),
    /// Fetch scores, yields and FX from a remote API into CSV files.
    Fetch(FetchArgs),
}

#[derive(Debug, Args)]
pub struct AllocateArgs {
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub method: Method,
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long = "max-iter")]
    pub max_iter: Option<usize>,
    /// Print JSON instead of a table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct BacktestArgs {
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub yields: PathBuf,
    #[arg(long)]
    pub fx: Option<PathBuf>,
    /// One or more of ew, tvl, erc, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub method: Vec<Method>,
    #[arg(long)]
    pub start: NaiveDate,
    #[arg(long)]
    pub end: NaiveDate,
    #[arg(long = "apy-convention")]
    pub apy_convention: Option<ApyConvention>,
    #[arg(long = "gap-fill")]
    pub gap_fill: Option<u32>,
    #[arg(long = "initial-value")]
    pub initial_value: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum ReportFormat {
    #[default]
    Table,
    Csv,
    Json,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directory containing `ledger_<method>.csv` files.
    #[arg(long)]
    pub ledger: PathBuf,
    #[arg(long, value_enum, default_value_t)]
    pub format: ReportFormat,
}

#[derive(Debug, Args)]
pub struct FetchArgs {
    #[arg(long)]
    pub out: PathBuf,
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    match path {
        Some(p) => Config::load(p),
        None => Ok(Config::default()),
    }
}

fn io_err(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Fetch(args) => {
            let path = cli.config.as_deref().ok_or_else(|| Error::InvalidConfig("fetch requires --config".into()))?;
            fetch(&Config::load(path)?, &args, out)
        }
        command => {
            let config = load_config(cli.config.as_deref())?;
            match command {
                Command::Allocate(args) => allocate_cmd(&config.defaults, &args, out),
                Command::Backtest(args) => backtest(&config.defaults, &args, out),
                Command::Report(args) => report(&args, out),
                Command::Fetch(_) => unreachable!(),
            }
        }
    }
}

#[derive(Serialize)]
struct AllocationJson<'a> {
    method: Method,
    weights: BTreeMap<&'a str, f64>,
    risk_contributions: BTreeMap<&'a str, f64>,
    portfolio_risk: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    objective: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    iterations: Option<usize>,
}

fn allocate_cmd(defaults: &Defaults, args: &AllocateArgs, out: &mut dyn Write) -> Result<()> {
    let universe = load_scores(&args.scores)?;
    let mut solver = defaults.solver();
    if let Some(t) = args.tolerance {
        solver.tolerance = t;
    }
    if let Some(n) = args.max_iter {
        solver.max_iterations = n;
    }
    let matrix = normalize(&build_risk_matrix(&universe))?;
    let (weights, objective, iterations) = match args.method {
        Method::Erc => {
            let sol = solve_erc(&matrix, &solver)?;
            (sol.weights, Some(sol.objective), Some(sol.iterations))
        }
        m => (allocate(&universe, m, &ErcSolverOptions::default())?, None, None),
    };
    let rc = risk_contributions(&weights, &matrix)?;
    let risk = portfolio_risk_report(&weights, &matrix)?;

    if args.json {
        let ids = weights.ids();
        let payload = AllocationJson {
            method: args.method,
            weights: weights.iter().collect(),
            risk_contributions: ids.iter().map(String::as_str).zip(rc.contributions.iter().copied()).collect(),
            portfolio_risk: risk,
            objective,
            iterations,
        };
        serde_json::to_writer_pretty(&mut *out, &payload).expect("allocation serializes");
        writeln!(out).map_err(io_err)?;
        return Ok(());
    }

    writeln!(out, "{:<20} {:>10} {:>12} {:>14}", "protocol", "score", "weight", "contribution").map_err(io_err)?;
    for ((p, w), c) in universe.protocols().iter().zip(weights.values()).zip(&rc.contributions) {
        writeln!(out, "{:<20} {:>10.4} {:>12.8} {:>14.6e}", p.id, p.score, w, c).map_err(io_err)?;
    }
    writeln!(out, "portfolio risk (weighted normalized score): {risk:.6}").map_err(io_err)?;
    if let (Some(f), Some(it)) = (objective, iterations) {
        writeln!(out, "objective {f:.3e} after {it} iterations").map_err(io_err)?;
    }
    Ok(())
}

fn load_inputs(args: &BacktestArgs) -> Result<(Universe, YieldPanel)> {
    let universe = load_scores(&args.scores)?;
    let panel = load_yields(&args.yields, &universe.ids())?;
    let fx = args.fx.as_deref().map(load_fx).transpose()?;
    Ok((universe, panel.with_fx(fx)?))
}

fn backtest(defaults: &Defaults, args: &BacktestArgs, out: &mut dyn Write) -> Result<()> {
    let (universe, panel) = load_inputs(args)?;
    let mut config = BacktestConfig::new(args.start, args.end, args.method[0]);
    config.apy_convention = args.apy_convention.unwrap_or(defaults.apy_convention);
    config.max_gap_fill_days = args.gap_fill.unwrap_or(defaults.gap_fill_days);
    config.initial_value = args.initial_value.unwrap_or(defaults.initial_value);
    config.solver = defaults.solver();

    let ledgers = run_backtests(&config, &args.method, &universe, &panel)?;
    let reports: Vec<MonthlyReport> = ledgers.iter().map(monthly_report).collect::<Result<_>>()?;
    let written = emit_outputs(&ledgers, &reports, &args.out)?;

    for l in &ledgers {
        let last = l.rows.last().expect("emit_outputs rejects empty ledgers");
        let usd = last.value_usd.map(|v| format!(", USD {v:.6}")).unwrap_or_default();
        writeln!(out, "{}: final value {:.6}{usd}", l.method.as_str().to_uppercase(), last.value_stable)
            .map_err(io_err)?;
    }
    writeln!(out).map_err(io_err)?;
    write!(out, "{}", render_tables(&reports)?).map_err(io_err)?;
    for p in written {
        writeln!(out, "wrote {}", p.display()).map_err(io_err)?;
    }
    Ok(())
}

fn report(args: &ReportArgs, out: &mut dyn Write) -> Result<()> {
    let ledgers = read_ledgers(&args.ledger)?;
    let reports: Vec<MonthlyReport> = ledgers.iter().map(monthly_report).collect::<Result<_>>()?;
    match args.format {
        ReportFormat::Table => write!(out, "{}", render_tables(&reports)?).map_err(io_err),
        ReportFormat::Csv => out.write_all(&report_to_csv(&reports)).map_err(io_err),
        ReportFormat::Json => {
            serde_json::to_writer_pretty(&mut *out, &reports).expect("report serializes");
            writeln!(out).map_err(io_err)
        }
    }
}

fn fetch(config: &Config, args: &FetchArgs, out: &mut dyn Write) -> Result<()> {
    let fetch = config
        .fetch
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("config has no [fetch] section".into()))?;
    let bundle = fetch_remote(&fetch.spec, &fetch.ids, fetch.range()?)?;
    for p in write_bundle(&bundle, &args.out)? {
        writeln!(out, "wrote {}", p.display()).map_err(io_err)?;
    }
    Ok(())
}
