//! Privacy-preserving biometric authentication: faces are translated into a
//! visually unrelated domain by an unpaired GAN, per-user classifiers are
//! trained on the translated images, and inversion attacks are evaluated.

pub mod attack;
pub mod authclass;
pub mod data;
pub mod error;
pub mod gan_core;
pub mod seeds;
pub mod similarity;
pub mod trainers;
pub mod translate;

pub use error::{Error, Result};
