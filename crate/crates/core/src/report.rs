//! Monthly performance, average risk and performance-over-risk tables.

use std::fmt::Write as _;

use chrono::{Datelike, NaiveDate};
use serde::Serialize;

use crate::allocate::Method;
use crate::backtest::{BacktestLedger, LedgerRow};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonthlyRow {
    pub month_end: NaiveDate,
    pub perf: f64,
    pub avg_risk: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonthlyReport {
    pub method: Method,
    pub rows: Vec<MonthlyRow>,
}

/// Ledger rows grouped by UTC calendar month, in order.
fn months(ledger: &BacktestLedger) -> Result<Vec<&[LedgerRow]>> {
    if ledger.rows.is_empty() {
        return Err(Error::EmptyLedger);
    }
    Ok(ledger
        .rows
        .chunk_by(|a, b| (a.date.year(), a.date.month()) == (b.date.year(), b.date.month()))
        .collect())
}

fn month_end(rows: &[LedgerRow]) -> NaiveDate {
    rows.last().expect("chunks are nonempty").date
}

/// Compounded return of each month, keyed by the month's last ledger date.
pub fn monthly_performance(ledger: &BacktestLedger) -> Result<Vec<(NaiveDate, f64)>> {
    Ok(months(ledger)?
        .into_iter()
        .map(|rows| {
            let growth: f64 = rows.iter().map(|r| 1.0 + r.daily_return).product();
            (month_end(rows), growth - 1.0)
        })
        .collect())
}

/// Arithmetic mean of the daily portfolio risk of each month.
pub fn monthly_avg_risk(ledger: &BacktestLedger) -> Result<Vec<(NaiveDate, f64)>> {
    Ok(months(ledger)?
        .into_iter()
        .map(|rows| {
            let sum: f64 = rows.iter().map(|r| r.portfolio_risk).sum();
            (month_end(rows), sum / rows.len() as f64)
        })
        .collect())
}

pub fn perf_risk_ratio(
    perf_rows: &[(NaiveDate, f64)],
    risk_rows: &[(NaiveDate, f64)],
) -> Result<Vec<MonthlyRow>> {
    if perf_rows.len() != risk_rows.len() {
        return Err(Error::MonthMisalignment);
    }
    perf_rows
        .iter()
        .zip(risk_rows)
        .map(|(&(month_end, perf), &(risk_month, avg_risk))| {
            if month_end != risk_month {
                return Err(Error::MonthMisalignment);
            }
            if avg_risk == 0.0 {
                return Err(Error::ZeroRisk(month_end));
            }
            Ok(MonthlyRow {
                month_end,
                perf,
                avg_risk,
                ratio: perf / avg_risk,
            })
        })
        .collect()
}

pub fn monthly_report(ledger: &BacktestLedger) -> Result<MonthlyReport> {
    let rows = perf_risk_ratio(&monthly_performance(ledger)?, &monthly_avg_risk(ledger)?)?;
    Ok(MonthlyReport {
        method: ledger.method,
        rows,
    })
}

/// Renders the three monthly tables with one column per method: performance
/// in percent, average risk and performance over risk, all to 4 decimals.
pub fn render_tables(reports: &[MonthlyReport]) -> Result<String> {
    let first = reports.first().ok_or(Error::EmptyLedger)?;
    let dates: Vec<NaiveDate> = first.rows.iter().map(|r| r.month_end).collect();
    for r in reports {
        if !r.rows.iter().map(|x| x.month_end).eq(dates.iter().copied()) {
            return Err(Error::MonthMisalignment);
        }
    }

    type Cell = fn(&MonthlyRow) -> String;
    let tables: [(&str, Cell); 3] = [
        ("Monthly performance", |r| format!("{:.4}%", r.perf * 100.0)),
        ("Monthly average risk", |r| format!("{:.4}", r.avg_risk)),
        ("Monthly performance / risk", |r| format!("{:.4}", r.ratio)),
    ];

    let mut out = String::new();
    for (title, cell) in tables {
        writeln!(out, "{title}").unwrap();
        write!(out, "{:<12}", "month_end").unwrap();
        for r in reports {
            write!(out, " {:>10}", r.method.as_str().to_uppercase()).unwrap();
        }
        out.push('\n');
        for (k, date) in dates.iter().enumerate() {
            write!(out, "{:<12}", date.to_string()).unwrap();
            for r in reports {
                write!(out, " {:>10}", cell(&r.rows[k])).unwrap();
            }
            out.push('\n');
        }
        out.push('\n');
    }
    Ok(out)
}
