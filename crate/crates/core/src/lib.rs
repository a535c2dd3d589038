pub mod adversarial;
pub mod attack;
pub mod crosstest;
pub mod data;
pub mod error;
pub mod experiment;
pub mod fsutil;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod report;

pub use error::{Error, Result};
