pub mod beta;
pub mod diagnostics;
pub mod diff;
pub mod emulator;
pub mod error;
pub mod ks;
pub mod spectral;
pub mod training;
pub mod trajectory;

pub use error::{Error, Result};
