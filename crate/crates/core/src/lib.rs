//! Closed-loop toolkit for quantum-dot farm characterisation: synthesise
//! charge-stability maps from known parameters, extract parameters back
//! with an image-processing pipeline, model the rf readout chain and the
//! multiplexed scan, and run the population statistics.

pub mod error;
pub mod extract;
pub mod imaging;
pub mod io;
pub mod layout;
pub mod map;
pub mod mux;
pub mod report;
pub mod rfchain;
pub mod sim;
pub mod stats;

pub use error::{Error, Result};
pub use extract::DeviceClass;
pub use map::{Axis, ChargeStabilityMap, MapMode};
pub use sim::DotParameters;

/// Elementary charge in coulombs.
pub const ELEMENTARY_CHARGE: f64 = 1.602176634e-19;
