//! Minimal dense linear algebra, deterministic random streams, and the
//! statistics shared by all other modules.

mod eigen;
mod matrix;
mod params;
mod rng;

pub use eigen::{symmetric_eigen, MAX_EIGEN_DIM};
pub use matrix::Matrix;
pub use params::{coordinate_median, linear_combine, Layout, ParamVector, TensorSpec};
pub use rng::{compose_stream, RngStream};
