//! How the ERC portfolio responds when a new protocol starts quoting
//! mid-backtest: weights and risk step once, on the day of entry.
//!
//! ```text
//! cargo run --example dynamic_universe
//! ```

use std::collections::BTreeMap;

use chrono::{Days, NaiveDate};
use defi_parity::allocate::Method;
use defi_parity::backtest::{run_backtest, BacktestConfig, YieldPanel};
use defi_parity::domain::{validate_universe, DatedSeries, ProtocolRecord};

fn daily(start: NaiveDate, from: u64, to: u64, apy: f64) -> DatedSeries {
    DatedSeries::new((from..to).map(|k| (start + Days::new(k), apy)).collect()).unwrap()
}

fn main() -> defi_parity::Result<()> {
    let start: NaiveDate = "2022-01-01".parse().unwrap();
    let universe = validate_universe(vec![
        ProtocolRecord::new("lending", 0.3),
        ProtocolRecord::new("dex", 0.5),
        ProtocolRecord::new("farm", 0.9),
    ])?;
    let panel = YieldPanel::new(
        BTreeMap::from([
            ("lending".to_string(), daily(start, 0, 60, 0.03)),
            ("dex".to_string(), daily(start, 0, 60, 0.05)),
            ("farm".to_string(), daily(start, 30, 60, 0.12)),
        ]),
        None,
    )?;
    let config = BacktestConfig::new(start, start + Days::new(59), Method::Erc);
    let ledger = run_backtest(&config, &universe, &panel)?;

    let mut previous = None;
    for row in &ledger.rows {
        if previous != Some(row.portfolio_risk) {
            println!("{}  risk {:.4}  active {:?}  weights {:.4?}", row.date, row.portfolio_risk, row.active_ids(), row.weights.values());
            previous = Some(row.portfolio_risk);
        }
    }
    println!("final value {:.6}", ledger.final_value().unwrap());
    Ok(())
}
