//! Byzantine-resilient vector consensus with decaying Gaussian noise.
//!
//! Normal agents broadcast noisy copies of their states, compute a
//! depth-certified centerpoint of what they receive, and step towards it.
//! The crate provides the geometry, time-varying network, protocol engine,
//! privacy accounting and ensemble analysis around that loop.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod engine;
pub mod geometry;
pub mod network;
pub mod presets;
pub mod privacy;
pub mod stream;
