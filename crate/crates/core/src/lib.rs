//! Simulation and analysis toolkit for one-dimensional Glauber-Exclusion
//! dynamics: spin flips with local rates superposed on speeded-up stirring.

pub mod config;
pub mod error;
pub mod experiments;
pub mod oracle;
pub mod output;
pub mod pde;
pub mod poly;
pub mod rates;
pub mod rng;
pub mod sim;
pub mod stats;
pub mod walks;

pub use config::{Event, SpinConfig};
pub use error::{Error, Result};
pub use rates::{LocalRule, RuleSpec};
