//! Deterministic, trace-driven simulator of vibration-powered battery-free
//! sensor nodes.
//!
//! A simulation couples a harvested-power trace, a storage capacitor behind a
//! regulator, one of three power-management solutions (UVLO, PID, APC) and an
//! intermittent runtime executing a workload of atomic operations.
//!
//! The trace, power-chain and sizing math is generic over [`Scalar`]
//! (`f32` or `f64`); the stepping engine is fixed to `f64`.

pub mod controller;
pub mod engine;
pub mod error;
pub mod powerchain;
pub mod runtime;
pub mod scalar;
pub mod scenario;
pub mod sizing;
pub mod trace;
pub mod workload;

pub use error::{Result, SimError};
pub use scalar::Scalar;

pub type PowerTraceF32 = trace::PowerTrace<f32>;
pub type PowerTraceF64 = trace::PowerTrace<f64>;
pub type CapacitorF32 = powerchain::Capacitor<f32>;
pub type CapacitorF64 = powerchain::Capacitor<f64>;
pub type RegulatorModelF32 = powerchain::RegulatorModel<f32>;
pub type RegulatorModelF64 = powerchain::RegulatorModel<f64>;
