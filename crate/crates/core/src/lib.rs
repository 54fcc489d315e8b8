//! Equal-risk-contribution allocation across scored DeFi protocols, with
//! daily-rebalanced backtests and monthly performance reporting.
//!
//! The pipeline, module by module:
//!
//! - [`domain`]: protocol records, canonical universes, weight vectors, dated series
//! - [`risk`]: diagonal score matrix, normalization, risk contributions
//! - [`allocate`]: EW, TVL and ERC weights (projected gradient ERC solver)
//! - [`backtest`]: daily rebalancing with a dynamic universe and FX overlay
//! - [`report`] / [`output`]: monthly tables, ledger and plot-data files
//! - [`ingest`] / [`fetch`]: CSV loaders and a cached remote fetcher
//!
//! ```
//! use defi_parity::allocate::{allocate, ErcSolverOptions, Method};
//! use defi_parity::domain::{validate_universe, ProtocolRecord};
//!
//! let universe = validate_universe(vec![
//!     ProtocolRecord::new("a", 1.0),
//!     ProtocolRecord::new("b", 4.0),
//! ])?;
//! let w = allocate(&universe, Method::Erc, &ErcSolverOptions::default())?;
//! assert!((w.values()[0] - 2.0 / 3.0).abs() < 1e-8);
//! # Ok::<(), defi_parity::Error>(())
//! ```

pub mod allocate;
pub mod cli;
pub mod backtest;
pub mod config;
pub mod domain;
pub mod error;
pub mod fetch;
pub mod ingest;
pub mod output;
pub mod report;
pub mod risk;

pub use error::{Error, Result};
