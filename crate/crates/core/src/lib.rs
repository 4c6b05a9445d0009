pub mod cli;
pub mod error;
pub mod io;
pub mod landscape;
pub mod methods;
pub mod metrics;
pub mod model;
pub mod numcore;
pub mod sam;
pub mod tasks;

pub use error::{Error, Result};
