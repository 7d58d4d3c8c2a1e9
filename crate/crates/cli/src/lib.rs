//! Standard-library companion to the core engine: file formats, experiment
//! configuration, checkpoints, reports, and the command-line driver.

pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod driver;
pub mod embeddings;
pub mod report;

pub use driver::run;
