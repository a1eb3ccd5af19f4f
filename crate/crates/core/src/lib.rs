//! Counterparty-risk credit valuation adjustment (CR-CVA) engine for
//! commodity forwards and swaps.
//!
//! The library combines a CIR++ stochastic default-intensity model
//! calibrated to CDS quotes with a shifted two-factor commodity spot model
//! calibrated to futures curves and ATM volatilities. The two models are
//! coupled through instantaneous correlation and priced by joint Monte
//! Carlo simulation, with closed-form cross-checks for the independence
//! case.
//!
//! Module map:
//!
//! - [`market_data`] — discount curve, CDS quotes, hazard bootstrap,
//!   forward-curve and ATM-vol quotes.
//! - [`oil_model`] — shifted two-factor spot model: exact transitions,
//!   forward prices, shift and volatility calibration, Gibson–Schwartz
//!   parameter map.
//! - [`credit_model`] — CIR++ intensity: closed-form bond price, shift fit
//!   to market survival, exact intensity simulation, default sampling.
//! - [`pricers`] — forwards, options on forwards, commodity swaps, fair
//!   strikes, and the independence-case CVA as an option strip.
//! - [`cva_engine`] — correlated joint simulation and the bucketed CR-CVA,
//!   scenario sweeps.
//! - [`config`] / [`report`] — market/config file IO and report rendering
//!   behind the `crcva` command-line tool.

pub mod config;
pub mod credit_model;
pub mod cva_engine;
pub mod error;
pub mod market_data;
pub mod math;
pub mod oil_model;
pub mod pricers;
pub mod report;

pub use error::{EngineError, Result};
