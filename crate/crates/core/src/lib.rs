//! Numerical core for asymptotic key rates of discrete-modulated continuous-variable QKD
//! with trusted or untrusted detector imperfections.

pub mod channel;
pub mod detector;
pub mod error;
pub mod fock;
pub mod keyrate;
pub mod quadrature;
pub mod sdp;
pub mod special;
pub mod wigner;

pub use error::{Error, Result};
