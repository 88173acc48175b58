//! Pipeline orchestration behind the `thzct` binary: dataset generation,
//! simulation, training, reconstruction, evaluation and saliency export.

pub mod cli;
pub mod exit;
pub mod manifest;
pub mod pgm;
pub mod pipeline;
pub mod store;
pub mod study;
