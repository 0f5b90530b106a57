pub mod cli;
pub mod corpus;
pub mod descriptors;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod numerics;
pub mod synthetic;
pub mod verify;

pub use error::{Error, Result};
