//! Vision-and-language navigation agent that pairs a fast per-step policy
//! with slow reflective reasoning over a shared experience library.

pub mod env;
pub mod error;
pub mod explib;
pub mod fusion;
pub mod policy;
pub mod reflect;
pub mod styleconv;
pub mod tokens;
pub mod trainer;

pub use error::{Error, Result};
