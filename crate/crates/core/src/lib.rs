//! Suffix and remaining-time prediction for business-process event logs.

pub mod event_log;
pub mod preprocess;
pub mod models;
pub mod training;
pub mod inference;
pub mod evaluation;
pub mod config;
pub mod synthetic;
pub mod diagnostics;
