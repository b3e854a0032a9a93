pub mod env;
pub mod error;
pub mod experiment;
pub mod mappo;

pub use error::{Error, Result};
pub mod nn;
pub mod qmetrics;
pub mod qsim;
