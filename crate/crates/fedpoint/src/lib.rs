//! IO, configuration, experiment recipes and the CLI for the federated
//! point-transformer engine in `fedpoint-core`.

pub mod checkpoint;
pub mod config;
pub mod dataset_io;
pub mod experiment;
pub mod gradsuite;
pub mod history;
pub mod sampledemo;
