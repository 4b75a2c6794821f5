//! Core library for a radar-only 3D detection pipeline built around dense
//! range–azimuth–doppler–elevation tensors.
//!
//! The crate covers the full desk-scale loop: synthesizing 4D tensors with
//! known targets, collapsing them to stacked range–azimuth projections, an
//! attention-gated encoder–decoder network with center-point heads, decoding
//! and rotated-box suppression, the three-part training loss with analytic
//! gradients, and average-precision evaluation.
//!
//! Heavy loops are data-parallel by default via the `parallel` feature and
//! produce bitwise-identical results at any thread count; [`exec::sequential`]
//! forces the single-threaded path for comparison.

pub mod boxes;
pub mod error;
pub mod eval;
pub mod exec;
pub mod io;
pub mod losses;
pub mod network;
pub mod tensor;

pub use error::{Error, Result};
