pub mod config;
pub mod data;
pub mod diffcore;
pub mod error;
pub mod evalsuite;
pub mod nets;
pub mod objectives;
pub mod trainer;

pub use error::{Error, ErrorKind, Result};
