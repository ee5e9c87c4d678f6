//! Floquet–Bloch band structures of periodic semiclassical operators
//! `A0(hD) + εB(x, hD)`, resonance analysis of the plane-wave basis, gauge
//! block-diagonalization and a constructive search for an isolated band
//! value covering a neighborhood of a fixed energy.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod lattice;
pub mod linalg;
pub mod symbols;
pub mod floquet;
pub mod resonance;
pub mod gauge;
pub mod xisearch;
pub mod manifest;

pub use error::{Error, ErrorClass, Result};
