//! Dysarthria recognition from short speech recordings.
//!
//! The pipeline: a WAV clip becomes a 3-channel feature image (log-Mel or
//! MFCC base, with its first and second local time derivatives), the image
//! goes through an AlexNet-style backbone to a 768-d feature vector, and a
//! hypernetwork turns a condition vector into the weights of the final
//! linear classifier. Fusion baselines (gated unit over two tasks, flat
//! concatenation over eight) and a repeated stratified cross-validation
//! harness round out the experiment surface.

pub mod autodiff;
pub mod error;

pub use error::{Error, Result};
