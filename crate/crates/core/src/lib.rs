//! Models, training and evaluation for the asymmetric f8/f16 video codec.

pub mod costmodel;
pub mod datametrics;
mod error;
pub mod lbg;
pub mod vae;

pub use error::{CoreError, Result};
