pub mod augment;
pub mod encoder;
pub mod error;
pub mod graph;
pub mod io;
pub mod mixup;
pub mod numcore;
pub mod objective;
pub mod pipeline;

pub use error::{Error, Result};
