//! Shoulder-suit tendon sensing: geometric suit simulator, sensor nonlinearity
//! models, synthetic motion corpora, LSTM joint-angle estimators and a
//! real-time teleoperation pipeline.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod fsio;
pub mod motion;
pub mod nn;
pub mod nonlin;
pub mod orient;
pub mod par;
pub mod suitsim;
pub mod teleop;
pub mod verify;

pub use error::{Error, Result};
pub use orient::JointAngles;
pub use suitsim::SensorFrame;
