//! Pairs-trading toolkit: cointegration scanning, OU spread calibration,
//! s-score signals, Black-Litterman blending, cost-constrained mean-variance
//! optimization, and an event-driven daily backtester.

pub mod backtest;
pub mod black_litterman;
pub mod cointegration;
pub mod error;
pub mod market_data;
pub mod optimizer;
pub mod signals;
pub mod synthetic;

pub use error::{Error, Result};
