pub mod autodiff;
pub mod cli;
pub mod codes;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod gf2;
pub mod matching;
pub mod model;
pub mod mwpm;
pub mod noise;
pub mod plot;
pub mod report;
pub mod train;
mod wire;

pub use error::{Error, Result};
