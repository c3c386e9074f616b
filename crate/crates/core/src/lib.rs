//! Multi-chart autoencoder atlases on sampled manifolds.
//!
//! Each chart of a cover gets its own encoder/decoder pair. The Jacobians of
//! the learned transition maps define a rank-`d` vector bundle whose
//! determinant signs form a `Z/2` Čech cocycle; the manifold is orientable
//! exactly when that cocycle is a coboundary.

pub mod bundle;
pub mod cohomology;
pub mod cover;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod linalg;
pub mod net;
pub mod oracle;
pub mod rng;
pub mod stability;
pub mod train;

pub use error::{AtlasError, Result};
