//! Edge inference market with a competitive single-price auction for
//! multi-exit DNN offloading.
//!
//! Users analyze their own edge demand ([`demand`]), the provider prices the
//! slot with [`auction::run_auction`], and [`simulator`] runs many slots
//! against the comparison mechanisms in [`baselines`]. [`oracle`] holds the
//! independent checks.

pub mod auction;
pub mod baselines;
pub mod cli;
pub mod demand;
pub mod error;
pub mod io;
pub mod latency;
pub mod oracle;
pub mod profiles;
pub mod simulator;

pub use error::{Error, Result};
