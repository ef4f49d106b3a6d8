pub mod collector;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod pipeline;
pub mod rng;
pub mod search;
pub mod vae;
pub mod vocab;

pub use error::{Error, Result};
