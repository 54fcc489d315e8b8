//! Day-by-day simulation of EW, TVL and ERC portfolios.
//!
//! Each day the active universe is determined at midnight UTC, weights are
//! recomputed over it, and the portfolio accrues the weighted daily rate of
//! the protocols' APYs. Rebalancing is frictionless.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::allocate::{allocate, ErcSolverOptions, Method};
use crate::domain::{DatedSeries, Universe, WeightVector};
use crate::error::{Error, Result};
use crate::risk::{build_risk_matrix, normalize, portfolio_risk_report};

/// How a quoted APY is turned into a daily rate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ApyConvention {
    /// `(1 + apy)^(1/365) - 1`
    #[default]
    #[serde(rename = "compound_365")]
    Compound365,
    /// `apy / 365`
    #[serde(rename = "simple_365")]
    Simple365,
}

impl ApyConvention {
    pub fn as_str(self) -> &'static str {
        match self {
            ApyConvention::Compound365 => "compound_365",
            ApyConvention::Simple365 => "simple_365",
        }
    }
}

impl fmt::Display for ApyConvention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ApyConvention {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "compound_365" => Ok(ApyConvention::Compound365),
            "simple_365" => Ok(ApyConvention::Simple365),
            other => Err(format!(
                "unknown APY convention `{other}` (expected compound_365 or simple_365)"
            )),
        }
    }
}

pub fn daily_rate(apy: f64, convention: ApyConvention) -> Result<f64> {
    if !(apy > -1.0 && apy.is_finite()) {
        return Err(Error::InvalidApy(apy));
    }
    Ok(match convention {
        ApyConvention::Compound365 => (apy.ln_1p() / 365.0).exp_m1(),
        ApyConvention::Simple365 => apy / 365.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestConfig {
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub method: Method,
    pub initial_value: f64,
    pub max_gap_fill_days: u32,
    pub apy_convention: ApyConvention,
    pub solver: ErcSolverOptions,
}

impl BacktestConfig {
    pub fn new(start: NaiveDate, end: NaiveDate, method: Method) -> Self {
        Self {
            start,
            end,
            method,
            initial_value: 1.0,
            max_gap_fill_days: 3,
            apy_convention: ApyConvention::default(),
            solver: ErcSolverOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.start > self.end {
            return Err(Error::InvalidConfig(format!(
                "start {} is after end {}",
                self.start, self.end
            )));
        }
        if !(self.initial_value > 0.0 && self.initial_value.is_finite()) {
            return Err(Error::InvalidConfig("initial value must be positive".into()));
        }
        Ok(())
    }

    pub fn days(&self) -> impl Iterator<Item = NaiveDate> {
        let end = self.end;
        self.start.iter_days().take_while(move |d| *d <= end)
    }
}

/// APY series per protocol (as fractions) and an optional USD-per-stablecoin
/// FX series.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct YieldPanel {
    series: BTreeMap<String, DatedSeries>,
    fx: Option<DatedSeries>,
}

impl YieldPanel {
    pub fn new(series: BTreeMap<String, DatedSeries>, fx: Option<DatedSeries>) -> Result<Self> {
        for s in series.values() {
            if let Some((_, apy)) = s.entries().iter().find(|(_, a)| !(*a > -1.0 && a.is_finite())) {
                return Err(Error::InvalidApy(*apy));
            }
        }
        if let Some(fx) = &fx {
            if let Some((_, r)) = fx.entries().iter().find(|(_, r)| !(*r > 0.0 && r.is_finite())) {
                return Err(Error::NonPositiveRate(*r));
            }
        }
        Ok(Self { series, fx })
    }

    pub fn series(&self) -> &BTreeMap<String, DatedSeries> {
        &self.series
    }

    pub fn fx(&self) -> Option<&DatedSeries> {
        self.fx.as_ref()
    }

    pub fn with_fx(mut self, fx: Option<DatedSeries>) -> Result<Self> {
        let series = std::mem::take(&mut self.series);
        Self::new(series, fx)
    }

    /// APY for `id` on `date`, forward-filled up to `max_gap_days`.
    pub fn apy(&self, id: &str, date: NaiveDate, max_gap_days: u32) -> Option<f64> {
        self.series.get(id)?.value_filled(date, max_gap_days)
    }
}

/// Protocols that have an APY observation on `date`, or one at most
/// `max_gap_days` days earlier.
pub fn active_universe(
    panel: &YieldPanel,
    universe: &Universe,
    date: NaiveDate,
    max_gap_days: u32,
) -> Result<Universe> {
    universe
        .filter(|p| panel.apy(&p.id, date, max_gap_days).is_some())
        .map_err(|_| Error::NoActiveProtocols(date))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub date: NaiveDate,
    pub weights: WeightVector,
    pub daily_return: f64,
    pub value_stable: f64,
    pub value_usd: Option<f64>,
    pub portfolio_risk: f64,
}

impl LedgerRow {
    pub fn active_ids(&self) -> &[String] {
        self.weights.ids()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestLedger {
    pub method: Method,
    pub initial_value: f64,
    pub rows: Vec<LedgerRow>,
}

impl BacktestLedger {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dates(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        self.rows.iter().map(|r| r.date)
    }

    pub fn final_value(&self) -> Option<f64> {
        self.rows.last().map(|r| r.value_stable)
    }
}

struct Allocation {
    ids: Vec<String>,
    weights: WeightVector,
    risk: f64,
}

fn allocate_day(universe: &Universe, config: &BacktestConfig) -> Result<Allocation> {
    let weights = allocate(universe, config.method, &config.solver)?;
    let matrix = normalize(&build_risk_matrix(universe))?;
    let risk = portfolio_risk_report(&weights, &matrix)?;
    Ok(Allocation {
        ids: universe.ids(),
        weights,
        risk,
    })
}

pub fn run_backtest(
    config: &BacktestConfig,
    universe: &Universe,
    panel: &YieldPanel,
) -> Result<BacktestLedger> {
    config.validate()?;
    let mut rows = Vec::new();
    let mut value = config.initial_value;
    let mut current: Option<Allocation> = None;

    for date in config.days() {
        let active = active_universe(panel, universe, date, config.max_gap_fill_days)?;
        let ids = active.ids();
        // scores are static, so weights only move when the active set does
        if current.as_ref().map_or(true, |a| a.ids != ids) {
            current = Some(allocate_day(&active, config)?);
        }
        let alloc = current.as_ref().expect("allocation set above");

        let mut daily_return = 0.0;
        for (id, w) in alloc.weights.iter() {
            let apy = panel
                .apy(id, date, config.max_gap_fill_days)
                .expect("active protocols have an APY");
            daily_return += w * daily_rate(apy, config.apy_convention)?;
        }
        value *= 1.0 + daily_return;

        let value_usd = match panel.fx() {
            Some(fx) => Some(
                value
                    * fx.value_filled(date, config.max_gap_fill_days)
                        .ok_or(Error::MissingFx(date))?,
            ),
            None => None,
        };

        rows.push(LedgerRow {
            date,
            weights: alloc.weights.clone(),
            daily_return,
            value_stable: value,
            value_usd,
            portfolio_risk: alloc.risk,
        });
    }

    Ok(BacktestLedger {
        method: config.method,
        initial_value: config.initial_value,
        rows,
    })
}

/// Runs `config` once per method in parallel; results are ordered by method.
pub fn run_backtests(
    config: &BacktestConfig,
    methods: &[Method],
    universe: &Universe,
    panel: &YieldPanel,
) -> Result<Vec<BacktestLedger>> {
    let mut methods = methods.to_vec();
    methods.sort();
    methods.dedup();
    methods
        .par_iter()
        .map(|m| {
            let cfg = BacktestConfig {
                method: *m,
                ..config.clone()
            };
            run_backtest(&cfg, universe, panel)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub date: NaiveDate,
    pub values_stable: Vec<f64>,
    pub values_usd: Vec<Option<f64>>,
    pub risks: Vec<f64>,
    /// `value_stable` of each ledger minus that of the first ledger.
    pub value_diffs: Vec<f64>,
    /// `portfolio_risk` of each ledger minus that of the first ledger.
    pub risk_diffs: Vec<f64>,
}

/// Per-day side-by-side view of several ledgers over the same dates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub labels: Vec<String>,
    pub rows: Vec<ComparisonRow>,
}

pub fn compare_backtests(ledgers: &[BacktestLedger]) -> Result<Comparison> {
    let first = ledgers.first().ok_or(Error::EmptyLedger)?;
    if first.is_empty() {
        return Err(Error::EmptyLedger);
    }
    for l in &ledgers[1..] {
        if !l.dates().eq(first.dates()) {
            return Err(Error::DateRangeMismatch);
        }
    }
    let rows = first
        .rows
        .iter()
        .enumerate()
        .map(|(k, base)| {
            let day: Vec<&LedgerRow> = ledgers.iter().map(|l| &l.rows[k]).collect();
            ComparisonRow {
                date: base.date,
                values_stable: day.iter().map(|r| r.value_stable).collect(),
                values_usd: day.iter().map(|r| r.value_usd).collect(),
                risks: day.iter().map(|r| r.portfolio_risk).collect(),
                value_diffs: day.iter().map(|r| r.value_stable - base.value_stable).collect(),
                risk_diffs: day.iter().map(|r| r.portfolio_risk - base.portfolio_risk).collect(),
            }
        })
        .collect();
    Ok(Comparison {
        labels: ledgers.iter().map(|l| l.method.to_string()).collect(),
        rows,
    })
}

/// `date + n` days.
#[cfg(test)]
pub(crate) fn add_days(date: NaiveDate, n: u64) -> NaiveDate {
    date.checked_add_days(chrono::Days::new(n)).expect("date in range")
}
