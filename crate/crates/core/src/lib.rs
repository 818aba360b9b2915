//! Bistatic mmWave radio SLAM with Doppler.
//!
//! The crate covers the whole chain from geometry to evaluation:
//!
//! - [`geometry`]: channel parameters (pseudo-range, AOA, AOD, Doppler) of a
//!   BS -> landmark -> UE path, plus the inverse map used to spawn landmarks;
//! - [`jacobians`]: analytic derivatives of that map, checked against
//!   central differences;
//! - [`dynamics`]: constant turn-rate UE motion;
//! - [`sensing`]: noisy scans with misdetections and clutter;
//! - [`pcrb`]: recursive posterior information and error bounds, with the
//!   Doppler share of the information split out;
//! - [`assignment`]: optimal and k-best linear assignment;
//! - [`pmb_filter`]: the extended-Kalman Poisson multi-Bernoulli SLAM filter;
//! - [`metrics`]: GOSPA and RMSE;
//! - [`harness`]: configuration, Monte-Carlo runs and report files.
//!
//! The geometric and bound code is generic over the scalar type ([`Real`]);
//! the aliases below fix it to `f64` (and `f32` where it is useful).

// `!(x > 0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assignment;
pub mod dynamics;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod jacobians;
pub mod metrics;
pub mod pcrb;
pub mod pmb_filter;
pub mod scalar;
pub mod sensing;

pub use error::{Error, Result};
pub use geometry::LandmarkKind;
pub use scalar::Real;

pub type UeState = geometry::UeState<f64>;
pub type Landmark = geometry::Landmark<f64>;
pub type Scenario = geometry::Scenario<f64>;
pub type Measurement = geometry::Measurement<f64>;
pub type MotionConfig = dynamics::MotionConfig<f64>;
pub type MeasurementNoise = sensing::MeasurementNoise<f64>;
pub type JointInfoMatrix = pcrb::JointInfoMatrix<f64>;
pub type BoundsReport = pcrb::BoundsReport<f64>;
pub type BoundSetup = pcrb::BoundSetup<f64>;
pub type CostMatrix = assignment::CostMatrix<f64>;
pub type Assignment = assignment::Assignment<f64>;
pub type GospaParams = metrics::GospaParams<f64>;

pub type UeStateF32 = geometry::UeState<f32>;
pub type LandmarkF32 = geometry::Landmark<f32>;
pub type ScenarioF32 = geometry::Scenario<f32>;
pub type BoundSetupF32 = pcrb::BoundSetup<f32>;
