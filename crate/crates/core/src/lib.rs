pub mod autograd;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod experiments;
pub mod network;
pub mod popularity;
pub mod rng;
pub mod stats;
pub mod training;

pub use error::{Error, Result};
