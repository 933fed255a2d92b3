pub mod bubble;
pub mod constants;
pub mod domain;
pub mod energy;
pub mod error;
pub mod expansion;
pub mod fft3;
pub mod fit;
pub mod flow;
pub mod green;
pub mod grid;
pub mod poisson;
pub mod projection;
pub mod quadrature;
pub mod reduce;

pub use error::{Error, Result};
