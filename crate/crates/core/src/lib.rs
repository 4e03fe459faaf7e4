//! Numerical study of gradient blow-up for the insulated p-Laplacian between
//! two nearly touching m-convex inclusions.

pub mod barriers;
pub mod error;
pub mod geometry;
pub mod inequalities;
pub mod linalg;
pub mod rates;
pub mod solver;
pub mod weighted;

pub use error::{Error, Result};
