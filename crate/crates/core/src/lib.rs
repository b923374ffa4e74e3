pub mod cli;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod losses;
pub mod models;
pub mod nn;
pub mod training;

pub use error::{Error, Result};
