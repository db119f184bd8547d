//! Monte Carlo simulation of MeV proton hyperchanneling through thin crystals.
//!
//! The crate builds an axial channel from atomic strings, evaluates the
//! thermally smeared continuum potential and electron density, integrates
//! proton trajectories with energy loss, electronic multiple scattering and
//! binary collisions, accumulates flux maps over deterministic parallel
//! ensembles, and analyses the resulting super-focusing and rainbow
//! structure. A laser-dressed (Kramers-Henneberger) impurity potential can be
//! superimposed on the channel field.

pub mod analysis;
pub mod bessel;
pub mod config;
pub mod constants;
pub mod crystal;
pub mod error;
pub mod histogram;
pub mod laser_kh;
pub mod medium;
pub mod montecarlo;
pub mod pipeline;
pub mod potentials;
pub mod quad;
pub mod tables;
pub mod transport;
pub mod vec2;

pub use error::{Error, Result};
