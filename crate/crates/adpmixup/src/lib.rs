//! Per-sample mixing of clean and adversarial adapter weights over a frozen
//! text-classifier backbone.
//!
//! The crate trains a small feed-forward classifier once, then fine-tunes
//! bottleneck adapters on clean and attack-generated data. At inference time
//! the prediction entropy of each adapter mode is normalized against
//! calibration statistics and turned into a per-sample mixing coefficient, so
//! the effective model slides between the clean and adversarial adapters
//! depending on how suspicious the input looks. Baseline predictors
//! (CleanOnly, AdvOnly, AdvTrain, ModelSoup, AdapterSoup), black-box attack
//! generators, and a CLI experiment harness live alongside.

pub mod attack;
pub mod baselines;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod harness;
pub mod mat;
pub mod mixing;
pub mod model;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use model::{
    forward, tokenize, AdapterDelta, BackboneParams, ModelDims, Predictor, ProbDist, TokenSeq,
};
