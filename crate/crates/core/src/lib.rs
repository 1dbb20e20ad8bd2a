pub mod acoustics;
pub mod array;
pub mod autodiff;
pub mod dsp;
pub mod error;
pub mod models;
pub mod runtime;

pub use error::{Error, Result};
pub mod ssl;
