//! Capacity of near-field line-of-sight MIMO links between square arrays,
//! computed in a truncated Hermite–Gaussian beamspace.
//!
//! The crate builds the antenna-domain Friis channel between two facing
//! arrays ([`native_channel`]), samples and re-orthonormalizes
//! Hermite–Gaussian modes over the apertures ([`hg_beams`], [`beamspace`]),
//! compresses or sounds the channel in that mode space, and grows the mode
//! set until the water-filling capacity settles ([`capacity`]).
//! [`experiments`] wires everything to [`config`] files and CSV output.

pub mod array_geometry;
pub mod beamspace;
pub mod capacity;
pub mod config;
pub mod error;
pub mod experiments;
pub mod hg_beams;
pub mod native_channel;
mod quadrature;

pub use error::{Error, Result};
