//! Data-driven online control of unknown linear systems.
//!
//! A noise-free trajectory (or an estimate of one) stands in for the system
//! model through its Hankel matrices. On top of that representation the
//! crate reconstructs accumulated disturbances from live data, learns a
//! disturbance-action controller by online gradient descent, and measures
//! policy regret against the best fixed controller in hindsight.
//!
//! Every numeric type is generic over [`Real`]; the aliases below fix it to
//! `f64`, which is what the pipeline and CLI use.

pub mod behavior;
pub mod config;
pub mod controller;
pub mod env;
pub mod error;
pub mod experiment;
pub mod explore;
pub mod io;
pub mod learner;
pub mod linalg;
pub mod lti;
pub mod pipeline;
pub mod scalar;
pub mod verify;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Matrix = nalgebra::DMatrix<f64>;
pub type Vector = nalgebra::DVector<f64>;
pub type System = lti::LtiSystem<f64>;
pub type Hankel = behavior::HankelPair<f64>;
pub type Params = controller::AdacParams<f64>;
