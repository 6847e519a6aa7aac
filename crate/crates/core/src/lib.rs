pub mod data;
pub mod error;
pub mod evaluation;
pub mod experiments;
pub mod localization;
pub mod model;
pub mod objectives;
pub mod rng;
pub mod stats;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
