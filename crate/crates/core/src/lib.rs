//! Closed-loop toolkit for studying falsified-BSM attacks on a
//! connected-vehicle adaptive signal controller.

pub mod attack;
pub mod audit;
pub mod config;
pub mod controller;
pub mod domain;
pub mod error;
pub mod features;
pub mod harness;
pub mod logfmt;
pub mod microsim;
pub mod surrogate;

pub use config::ScenarioConfig;
pub use error::{Error, Result};
