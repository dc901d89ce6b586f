//! Self-supervised pretraining and artifact classification for PPG pulses.
//!
//! The pipeline runs from synthetic signal generation through filtering,
//! segmentation and statistical labelling, to SSL pretraining of MLP, FCNN
//! and Transformer encoders and fine-tuning on small annotated fractions.

pub mod annotate;
pub mod cli;
pub mod diffcore;
pub mod dsp;
pub mod error;
pub mod nets;
pub mod ssl;
pub mod trainer;
pub mod synthgen;

pub use error::{Error, Result};
