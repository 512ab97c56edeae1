//! Dataset files, run configuration, traces and the command-line front end.

pub mod cli;
mod config;
mod dataset;
mod params;
mod trace;

pub use config::RunConfig;
pub use dataset::{load_node_dataset, load_tu_dataset, save_node_dataset, save_tu_dataset, NodeDataset};
pub use params::{load_params, save_params};
pub use trace::{format_sig6, read_trace, render_trace, write_trace, Report, TRACE_HEADER};
