//! Beam training for extremely large antenna arrays whose users sit inside
//! the radiating near field, where wavefront curvature makes classic
//! angle-only beam search misfire.
//!
//! The crate models the spherical-wavefront channel ([`array`]), builds
//! polar-domain and hierarchical codebooks over angle and distance
//! ([`codebook`]), implements training engines from exhaustive search down to
//! logarithmic-overhead hierarchical search ([`engines`]), and benchmarks
//! them under a common pilot and noise budget ([`experiments`]).

pub mod array;
pub mod codebook;
pub mod engines;
pub mod error;
pub mod experiments;

pub use error::{Error, Result};
