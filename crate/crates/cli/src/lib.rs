//! Command-line front end: scenario configuration, figure-data
//! reproduction, sweeps, and CSV emission for the energy-harvesting link
//! analysis toolkit.

pub mod commands;
pub mod config;
