//! Dense linear algebra, seeded random streams and the standard-normal
//! quantile. Everything above this layer works on plain `f64` slices.

mod linalg;
mod quantile;
mod rng;

pub use linalg::{axpy, dist, dot, norm, scale, solve_spd, sub, Mat};
pub use quantile::{normal_cdf, normal_quantile};
pub use rng::{sample_std_normal, SeededRng};
