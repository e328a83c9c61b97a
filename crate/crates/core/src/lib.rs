#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod assess;
pub mod cholesky;
pub mod engine;
pub mod exec;
pub mod error;
pub mod graph;
pub mod hyper;
pub mod likelihood;
pub mod process;
pub mod simulate;
pub mod sparse;

pub use error::{Error, Result};
