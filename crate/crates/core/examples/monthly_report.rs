//! Monthly performance, average risk and performance-over-risk tables, then
//! every output file written to a temporary directory.
//!
//! ```text
//! cargo run --example monthly_report
//! ```

use std::path::Path;

use defi_parity::allocate::Method;
use defi_parity::backtest::{run_backtests, BacktestConfig};
use defi_parity::ingest::load_bundle;
use defi_parity::output::emit_outputs;
use defi_parity::report::{monthly_report, render_tables};

fn main() -> defi_parity::Result<()> {
    let data = load_bundle(&Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/data"))?;
    let config = BacktestConfig::new("2021-12-01".parse().unwrap(), "2022-05-22".parse().unwrap(), Method::Ew);
    let ledgers = run_backtests(&config, &[Method::Ew, Method::Erc], &data.universe, &data.panel)?;
    let reports = ledgers.iter().map(monthly_report).collect::<defi_parity::Result<Vec<_>>>()?;
    print!("{}", render_tables(&reports)?);

    let out = std::env::temp_dir().join("defi-parity-example");
    for path in emit_outputs(&ledgers, &reports, &out)? {
        println!("wrote {}", path.display());
    }
    Ok(())
}
