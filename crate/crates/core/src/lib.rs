pub mod audio;
pub mod corpus;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod net;
pub mod pipeline;
pub mod power;
pub mod quant;

pub use error::{Error, Result};
