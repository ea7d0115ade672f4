//! Simulator of gated-mode APD single-photon detectors and a plug-and-play
//! phase-encoded BB84 link, including the detector-control attack that
//! exploits the avalanche transition region, and the monitors that try to
//! catch it.

pub mod attack;
pub mod calibration;
pub mod countermeasures;
pub mod detector;
pub mod error;
pub mod manifest;
pub mod numeric;
pub mod profiles;
pub mod protocol;
pub mod surface;

pub use error::{Error, Result};
