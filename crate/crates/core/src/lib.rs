//! Numerical lab for the thin obstacle problem with fully nonlinear
//! uniformly elliptic operators.

pub mod barriers;
pub mod elliptic;
pub mod error;
pub mod experiment;
pub mod exponents;
pub mod fb;
pub mod grid;
pub mod linalg;
pub mod scheme;
pub mod solver;

pub use elliptic::{Ellipticity, Extremal, SymMatrix};
pub use error::{Error, Result};
pub use grid::{Grid, GridFunction};
