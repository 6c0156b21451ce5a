//! Modelling and fitting toolkit for pulsed ESR on rare-earth-doped crystals
//! coupled to a superconducting resonator.

pub mod budget;
pub mod cavity;
pub mod constants;
pub mod error;
pub mod fieldmap;
pub mod fitkit;
pub mod io;
pub mod presets;
pub mod sdmodel;
pub mod spinham;
pub mod synth;
pub mod thermal;

pub use error::{Error, Result};
