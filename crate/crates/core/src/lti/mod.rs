//! Ground-truth linear systems: simulation, bounded disturbances, convex
//! cost sequences, and model-aware oracles.

pub mod cost;
pub mod disturbance;
pub mod oracle;
pub mod system;
pub mod trajectory;

pub use cost::{CostKind, CostOracle, CostSpec, QuadStep, ReachableBox};
pub use disturbance::{DisturbanceGen, DisturbanceKind, DisturbanceSpec};
pub use oracle::{accumulated_disturbance_oracle, accumulated_disturbances, observed_disturbances, toeplitz_phi};
pub use system::{certify_stability, controllability_matrix, default_k_check, step, LtiSystem, SystemMatrices};
pub use trajectory::{simulate, Trajectory};
