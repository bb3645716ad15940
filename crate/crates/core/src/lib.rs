pub mod autodiff;
pub mod dsp;
pub mod error;
pub mod experiment;
pub mod io;
pub mod manifest;
pub mod model;
pub mod pipeline;
pub mod tfr;
pub mod train;

pub use error::{Error, Result};
