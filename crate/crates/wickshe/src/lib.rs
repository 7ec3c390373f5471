//! Numerical toolkit for the 1-D Wick stochastic heat equation with
//! space-only white noise,
//!
//!   ∂ₜu = ½ ∂ₓₓu + u ⋄ Ẇ(x),   u(0, ·) = u₀,
//!
//! in three equivalent representations: Hermite chaos coefficients, multiple
//! Wiener kernels, and a Feynman-Kac average over Brownian local time. The
//! chaos expansion of ∂ₓu and moment-level Hölder exponent estimates sit on
//! top of these.

// `!(x > 0.0)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basis;
pub mod chaos;
pub mod cli;
pub mod csv;
pub mod error;
pub mod feynman_kac;
pub mod kernels;
pub mod par;
pub mod quad;
pub mod regularity;
pub mod rng;

pub use error::{Error, Result};
