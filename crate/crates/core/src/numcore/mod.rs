//! Dense linear algebra, seeded randomness and parameter flattening.

mod linalg;
mod params;
mod rng;

pub use linalg::{least_squares_apply, LeastSquares, Matrix};
pub use params::{dot, flatten, gram_schmidt_pair, norm, unflatten, Layout, LayoutEntry, NamedArray, ParamVector};
pub use rng::RngStream;
