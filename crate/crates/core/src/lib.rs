//! Throughput-optimal power scheduling for two energy-harvesting
//! transmitters on a Gaussian interference channel.

pub mod data_causality;
pub mod error;
pub mod experiment;
pub mod generate;
pub mod iterative;
pub mod model;
pub mod online;
pub mod oracle;
pub mod rates;
pub mod scenario_file;
pub mod single_user;

pub use error::{Error, Result};
