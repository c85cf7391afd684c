//! Contraction-metric tracking control for a 3-DOF control moment gyroscope.
//!
//! The crate covers the rigid-body model ([`dynamics`]), its two reduced
//! operating modes ([`reduced`]), LPV and NPV embeddings ([`embedding`]),
//! grid-based LMI synthesis of a constant dual metric and scheduled gains
//! ([`lmi`], [`synthesis`]), the three controller realizations
//! ([`controllers`]) and a closed-loop simulation harness ([`sim`]).
//! [`pipeline`] ties them together for config-driven runs.
//!
//! Model, embedding, controller and simulation code is generic over the
//! scalar (`f32` or `f64`). Synthesis works in `f64` only.

pub mod checks;
pub mod controllers;
pub mod dynamics;
pub mod embedding;
pub mod error;
pub mod grid;
pub mod io;
pub mod lmi;
pub mod params;
pub mod pipeline;
pub mod reduced;
pub mod reference;
pub mod scalar;
pub mod sim;
pub mod synthesis;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Params = params::CmgParams<f64>;
pub type ParamsF32 = params::CmgParams<f32>;
pub type Model = reduced::ReducedModel<f64>;
pub type ModelF32 = reduced::ReducedModel<f32>;
pub type Gains = synthesis::GainTable<f64>;
pub type GainsF32 = synthesis::GainTable<f32>;
pub type TrackingController = controllers::Controller<f64>;
pub type TrackingControllerF32 = controllers::Controller<f32>;
