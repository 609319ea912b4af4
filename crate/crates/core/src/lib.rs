//! Class-probability estimation on the simplex with a graph-volume regularizer.
//!
//! The estimator is `f = softmax(h)` with `h^j(x) = Σ_i a_ij exp(−‖x − x_i‖²/c)`.
//! Training runs an explicit gradient flow on the coefficients that trades an
//! empirical loss against the volume of the graph `{(x, f(x))}`.

mod error;
pub mod estimator;
pub mod geometry;
pub mod gradcheck;
pub mod harness;
pub mod losses;
pub mod numeric;
pub mod trainer;

pub use error::{Error, Result};
pub use estimator::RbfModel;
pub use trainer::{train, TrainConfig};
