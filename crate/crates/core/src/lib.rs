pub mod adapters;
pub mod checkpoint;
pub mod encoder;
pub mod error;
pub mod evalcli;
pub mod exec;
pub mod numcore;
pub mod objectives;
pub mod synthlang;
pub mod training;

pub use error::{Error, Result};
