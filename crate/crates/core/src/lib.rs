//! Steam-temperature control lab for a superheater/desuperheater pair.
//!
//! The plant is a two-state lumped thermal model driven by a PI-plus-feedforward
//! spray law. Three gain policies share that law: fixed gains, an offline LSTM
//! scheduler and an online physics-informed tuner. Scenarios run the closed
//! loop and the metrics module scores the traces.

pub mod config;
pub mod control;
pub mod error;
pub mod gradcheck;
pub mod lstm_tuner;
pub mod metrics;
pub mod nelder_mead;
pub mod neural;
pub mod pinn;
pub mod plant;
pub mod report;
pub mod scenario;
pub mod seed;

pub use error::{Error, Result};
