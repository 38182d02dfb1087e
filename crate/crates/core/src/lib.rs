//! Visual distillation of a black-box classifier's prediction vectors.
//!
//! A teacher's per-row class-probability vectors are compressed into a 2-D
//! embedding together with a small Student's-t naive Bayes classifier that
//! reproduces the teacher's predictions from the embedded points. The crate
//! also provides a closed-form rank-2 variant, density-based confidence
//! scores with rejection curves, fidelity metrics, contour extraction and a
//! JSON run artifact consumed by the companion viewer.

pub mod artifact;
pub mod cli;
pub mod confidence;
pub mod contour;
pub mod error;
pub mod fidelity;
pub mod io;
pub mod model;
pub mod objective;
pub mod special;
pub mod svd;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
pub use model::{
    apply_subset_mask, apply_temperature, predictive_entropy, student_posterior, t_log_density,
    EmbeddingTable, InitMode, PredictionTable, Spd2, StudentParams, SubsetMask, TrainConfig,
    TrainMode,
};
