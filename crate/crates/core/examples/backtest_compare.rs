//! Daily-rebalanced backtests of all three methods on the sample data, with
//! the USD value path and a side-by-side comparison.
//!
//! ```text
//! cargo run --example backtest_compare
//! ```

use std::path::Path;

use defi_parity::allocate::Method;
use defi_parity::backtest::{compare_backtests, run_backtests, BacktestConfig};
use defi_parity::ingest::load_bundle;

fn main() -> defi_parity::Result<()> {
    let data = load_bundle(&Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/data"))?;
    let start = "2021-12-01".parse().unwrap();
    let end = "2022-05-22".parse().unwrap();
    let config = BacktestConfig::new(start, end, Method::Ew);

    let ledgers = run_backtests(&config, &Method::ALL, &data.universe, &data.panel)?;
    for l in &ledgers {
        let last = l.rows.last().unwrap();
        println!(
            "{:<4} final {:.6} (USD {:.6}) over {} days",
            l.method.as_str(),
            last.value_stable,
            last.value_usd.unwrap_or(f64::NAN),
            l.rows.len()
        );
    }

    let cmp = compare_backtests(&ledgers)?;
    println!("\nvalue and risk relative to {}, every 30 days:", cmp.labels[0]);
    for row in cmp.rows.iter().step_by(30) {
        println!("  {}  value diffs {:?}  risk diffs {:?}", row.date, row.value_diffs, row.risk_diffs);
    }
    Ok(())
}
