//! Performance models for moving data between GPUs on heterogeneous nodes.

pub mod cli;
pub mod collectives;
pub mod config;
pub mod fitting;
pub mod io;
pub mod model;
pub mod topology;
