//! Notebook reproducibility pipeline: corpus acquisition, dependency
//! inference, containerized re-execution, output comparison and reporting.

pub mod compare;
pub mod containerize;
pub mod corpus;
pub mod depinfer;
pub mod events;
pub mod executor;
pub mod ids;
pub mod notebook;
pub mod outcome;
pub mod pipeline;
pub mod process;
pub mod pysource;
pub mod report;
pub mod runtime;
pub mod store;

pub const PIPELINE_VERSION: &str = env!("CARGO_PKG_VERSION");
