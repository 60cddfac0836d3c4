pub mod analysis;
pub mod config;
pub mod controllers;
pub mod error;
pub mod linalg;
pub mod output;
pub mod plants;
pub mod predictors;
pub mod signals;
pub mod simulation;
pub mod validation;

pub use error::{Error, Result};
