pub mod benchmark;
pub mod config;
pub mod correction;
pub mod dataset;
pub mod env;
pub mod error;
pub mod evaluation;
pub mod nn;
pub mod parallel;
pub mod pi;
pub mod picnn;
pub mod reactor;
pub mod scenario;
pub mod trainers;

pub use error::{Error, Result};
