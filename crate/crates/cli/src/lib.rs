//! Configuration, experiment dispatch and the acceptance suite behind `phi4lab`.

pub mod config;
pub mod output;
pub mod run;
pub mod suite;
