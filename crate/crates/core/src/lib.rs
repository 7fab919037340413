pub mod bitplane;
pub mod cli;
pub mod codec;
pub mod container;
pub mod costmodel;
pub mod error;
pub mod float_format;
pub mod kv;
pub mod report;
pub mod synth;

pub use error::{Error, Result};
