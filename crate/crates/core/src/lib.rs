pub mod autodiff;
pub mod config;
pub mod diagnostics;
pub mod encoder;
pub mod env;
pub mod error;
pub mod harness;
pub mod pearl;
pub mod rbf;
pub mod sac;
pub mod tasks;

pub use error::{Error, Result};
