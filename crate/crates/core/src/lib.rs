pub mod assembly;
pub mod cutgeom;
pub mod error;
pub mod harness;
pub mod projection;
pub mod quadrature;
pub mod splines;
pub mod stabilization;

pub use error::{Error, Result};
