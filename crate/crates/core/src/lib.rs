//! Proximity risk estimation from BLE signal strength: a simulated radio
//! channel, a rotating-signature exposure protocol, windowed RSS features,
//! four classifiers and the evaluation harness around them.

pub mod classify;
pub mod cli;
pub mod error;
pub mod features;
pub mod protocol;
pub mod radio;
pub mod sim;

pub use error::{Error, Result};
