//! Sequence-to-sequence training engine with in-sample curriculum learning:
//! suffix-prediction (sequence completion) losses with a shrinking prefix,
//! the token-wise and sample-wise baselines to compare against, and the
//! metrics, decoding, and experiment tooling to run it all at desk scale.

pub mod config;
pub mod curriculum;
pub mod data;
pub mod decode;
pub mod error;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod presets;
pub mod ranking;
pub mod report;
pub mod seeding;
pub mod tape;
pub mod tensor;
pub mod trainer;

pub use error::{IclError, Result};
