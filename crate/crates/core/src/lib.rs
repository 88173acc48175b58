//! Terahertz time-domain computed tomography.
//!
//! The crate covers the full desk-scale pipeline: procedural phantoms
//! ([`phantom`]), synthetic THz scans ([`sim`]), Radon transform and filtered
//! backprojection ([`radon`]), the amplitude and polynomial-regression
//! baselines ([`baselines`]), the convolutional sinogram-row model
//! ([`dlct`]), input-gradient saliency ([`saliency`]) and image metrics
//! ([`metrics`]).

pub mod baselines;
pub mod dlct;
pub mod error;
pub mod metrics;
pub mod phantom;
pub mod radon;
pub mod saliency;
pub mod sim;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{DType, Tensor};
