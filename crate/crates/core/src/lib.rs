//! IRT scale linking for mixed-format tests.

pub mod bank;
pub mod calibration;
pub mod config;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod linking;
pub mod model;
pub mod report;
pub mod simulation;

pub use error::{Error, Result};
