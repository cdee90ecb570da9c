//! Energetic graph neural networks: sparse graph convolution with
//! Dirichlet-energy control, plus the diagnostics that check the energy
//! bounds layer by layer.

pub mod checkpoint;
pub mod diagnostics;
pub mod energy;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod model;
pub mod operators;
pub mod presets;
pub mod sparse;
pub mod spectral;
pub mod train;

pub use error::{Error, Result};
pub use graph::{Graph, Split};
pub use operators::{build_operators, PropagationOperators};
pub use sparse::CsrMatrix;
