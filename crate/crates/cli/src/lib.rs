//! Training, evaluation, comparison and export harness around the
//! two-stage slot aggregator.

pub mod checkpoint;
pub mod checks;
pub mod compare;
pub mod config;
pub mod error;
pub mod export;
pub mod log;
pub mod model;
pub mod optim;
pub mod runner;
pub mod train;
