//! Master/worker runtime for coded distributed convolution and the
//! `coded-conv` command-line driver.

pub mod cli;
pub mod error;
pub mod master;
pub mod model;
pub mod wire;
pub mod worker;

pub use error::{Result, RuntimeError};
