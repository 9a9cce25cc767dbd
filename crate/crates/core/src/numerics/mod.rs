//! Special functions, root finding and quadrature.

pub mod quad;
pub mod roots;
pub mod special;

pub use quad::{integrate, integrate_to_inf};
pub use roots::{bisect, brent, first_crossing_after_departure, Crossing};
pub use special::{gamma, ln_gamma, regularized_upper_gamma, upper_incomplete_gamma};
