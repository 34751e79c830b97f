pub mod certify;
pub mod constructions;
pub mod error;
pub mod group;
pub mod net;
pub mod spectra;
pub mod tasks;
pub mod trainer;

pub use error::{Error, Result};
