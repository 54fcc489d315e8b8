//! Files written by a backtest run, and the reader for ledgers written earlier.
//!
//! `<out>/ledger_<method>.csv`, `<out>/comparison.csv`,
//! `<out>/monthly_report.csv` and `<out>/plot_data.json`. Floats are written
//! in shortest round-trip form, so identical inputs give identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::allocate::Method;
use crate::backtest::{compare_backtests, BacktestLedger, Comparison, LedgerRow};
use crate::domain::WeightVector;
use crate::error::{Error, Result};
use crate::report::MonthlyReport;

pub const COMPARISON_FILE: &str = "comparison.csv";
pub const REPORT_FILE: &str = "monthly_report.csv";
pub const PLOT_FILE: &str = "plot_data.json";

const LEDGER_HEADER: [&str; 7] = [
    "date",
    "active_ids",
    "weights",
    "daily_return",
    "value_stable",
    "value_usd",
    "portfolio_risk",
];

pub fn ledger_file_name(method: Method) -> String {
    format!("ledger_{method}.csv")
}

fn csv_error(path: &Path, err: csv::Error) -> Error {
    let line = err.position().map_or(0, |p| p.line());
    match err.into_kind() {
        csv::ErrorKind::Io(e) => Error::io(path, e),
        other => Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("{other:?}"),
        },
    }
}

fn finish(writer: csv::Writer<Vec<u8>>) -> Vec<u8> {
    writer.into_inner().expect("writing to memory cannot fail")
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(";")
}

pub fn ledger_to_csv(ledger: &BacktestLedger) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(LEDGER_HEADER).unwrap();
    for r in &ledger.rows {
        w.write_record([
            r.date.to_string(),
            r.active_ids().join(";"),
            join(r.weights.values()),
            r.daily_return.to_string(),
            r.value_stable.to_string(),
            opt(r.value_usd),
            r.portfolio_risk.to_string(),
        ])
        .unwrap();
    }
    finish(w)
}

#[derive(Debug, Deserialize)]
struct LedgerCsvRow {
    date: NaiveDate,
    active_ids: String,
    weights: String,
    daily_return: f64,
    value_stable: f64,
    value_usd: Option<f64>,
    portfolio_risk: f64,
}

/// Reads a ledger CSV written by [`ledger_to_csv`].
pub fn read_ledger(path: &Path, method: Method) -> Result<BacktestLedger> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut rows = Vec::new();
    for record in reader.deserialize::<LedgerCsvRow>() {
        let raw = record.map_err(|e| csv_error(path, e))?;
        let line = rows.len() as u64 + 2;
        let ids: Vec<String> = raw.active_ids.split(';').map(str::to_string).collect();
        let values: Vec<f64> = raw
            .weights
            .split(';')
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("weights: {e}"),
            })?;
        let weights = WeightVector::new(ids, values).map_err(|e| e.at_line(path, line))?;
        rows.push(LedgerRow {
            date: raw.date,
            weights,
            daily_return: raw.daily_return,
            value_stable: raw.value_stable,
            value_usd: raw.value_usd,
            portfolio_risk: raw.portfolio_risk,
        });
    }
    let first = rows.first().ok_or(Error::EmptyLedger)?;
    let initial_value = first.value_stable / (1.0 + first.daily_return);
    Ok(BacktestLedger {
        method,
        initial_value,
        rows,
    })
}

/// Loads every `ledger_<method>.csv` in `dir`, ordered by method.
pub fn read_ledgers(dir: &Path) -> Result<Vec<BacktestLedger>> {
    let mut ledgers = Vec::new();
    for method in Method::ALL {
        let path = dir.join(ledger_file_name(method));
        if path.is_file() {
            ledgers.push(read_ledger(&path, method)?);
        }
    }
    if ledgers.is_empty() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no ledger_<method>.csv files"),
        ));
    }
    Ok(ledgers)
}

pub fn comparison_to_csv(cmp: &Comparison) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["date".to_string()];
    for l in &cmp.labels {
        for col in ["value_stable", "value_usd", "risk", "value_diff", "risk_diff"] {
            header.push(format!("{col}_{l}"));
        }
    }
    w.write_record(&header).unwrap();
    for r in &cmp.rows {
        let mut rec = vec![r.date.to_string()];
        for k in 0..cmp.labels.len() {
            rec.push(r.values_stable[k].to_string());
            rec.push(opt(r.values_usd[k]));
            rec.push(r.risks[k].to_string());
            rec.push(r.value_diffs[k].to_string());
            rec.push(r.risk_diffs[k].to_string());
        }
        w.write_record(&rec).unwrap();
    }
    finish(w)
}

pub fn report_to_csv(reports: &[MonthlyReport]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["method", "month_end", "perf", "avg_risk", "ratio"]).unwrap();
    for rep in reports {
        for r in &rep.rows {
            w.write_record([
                rep.method.to_string(),
                r.month_end.to_string(),
                r.perf.to_string(),
                r.avg_risk.to_string(),
                r.ratio.to_string(),
            ])
            .unwrap();
        }
    }
    finish(w)
}

#[derive(Debug, Serialize)]
struct PlotSeries<'a> {
    dates: Vec<NaiveDate>,
    value_stable: Vec<f64>,
    value_usd: Vec<Option<f64>>,
    risk: Vec<f64>,
    weights: Vec<BTreeMap<&'a str, f64>>,
}

#[derive(Debug, Serialize)]
struct PlotData<'a> {
    methods: BTreeMap<&'static str, PlotSeries<'a>>,
    monthly: &'a [MonthlyReport],
}

pub fn plot_json(ledgers: &[BacktestLedger], reports: &[MonthlyReport]) -> Vec<u8> {
    let methods = ledgers
        .iter()
        .map(|l| {
            let series = PlotSeries {
                dates: l.dates().collect(),
                value_stable: l.rows.iter().map(|r| r.value_stable).collect(),
                value_usd: l.rows.iter().map(|r| r.value_usd).collect(),
                risk: l.rows.iter().map(|r| r.portfolio_risk).collect(),
                weights: l.rows.iter().map(|r| r.weights.iter().collect()).collect(),
            };
            (l.method.as_str(), series)
        })
        .collect();
    let mut bytes = serde_json::to_vec_pretty(&PlotData {
        methods,
        monthly: reports,
    })
    .expect("plot data serializes");
    bytes.push(b'\n');
    bytes
}

fn write(path: PathBuf, bytes: &[u8], written: &mut Vec<PathBuf>) -> Result<()> {
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(())
}

/// Writes ledgers, their comparison, the monthly report and plot data into
/// `out_dir`, returning the paths written.
pub fn emit_outputs(
    ledgers: &[BacktestLedger],
    reports: &[MonthlyReport],
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    if ledgers.is_empty() || reports.is_empty() || ledgers.iter().any(BacktestLedger::is_empty) {
        return Err(Error::EmptyLedger);
    }
    if reports.iter().any(|r| r.rows.is_empty()) {
        return Err(Error::EmptyLedger);
    }
    let comparison = compare_backtests(ledgers)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut written = Vec::new();
    for l in ledgers {
        write(out_dir.join(ledger_file_name(l.method)), &ledger_to_csv(l), &mut written)?;
    }
    write(out_dir.join(COMPARISON_FILE), &comparison_to_csv(&comparison), &mut written)?;
    write(out_dir.join(REPORT_FILE), &report_to_csv(reports), &mut written)?;
    write(out_dir.join(PLOT_FILE), &plot_json(ledgers, reports), &mut written)?;
    Ok(written)
}
