//! Stochastic compound mixing for open compound domain adaptation, at desk
//! scale: deterministic tensors and streams, synthetic compound benchmarks,
//! the two-stage mixing augmentation with single-target baselines, a
//! mean-teacher self-training loop over a linear per-pixel model, and a
//! proxy estimator for the source-to-joint-subdomain discrepancy terms.

pub mod discrepancy;
pub mod error;
pub mod features;
pub mod io;
pub mod masking;
pub mod mixing;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use rng::{Purpose, RngStream, StreamKey};
pub use tensor::{ImageTensor, LabelMap, OneHotLabel, ProbMap, WeightMap, IGNORE};
