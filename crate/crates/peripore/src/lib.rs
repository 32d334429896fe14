//! Coupled periporomechanics: a nonlocal (peridynamic state-based) simulator for
//! solid-skeleton deformation and pore-water pressure in variably saturated
//! porous media.
//!
//! Every material point carries displacement and pore-water pressure degrees of
//! freedom. Constitutive models (modified Cam-Clay plasticity, van Genuchten
//! retention, generalized Darcy flow) are evaluated per point on nonlocal
//! deformation and pressure gradients built from the peridynamic shape tensor,
//! and the coupled balance equations are integrated implicitly in time with a
//! full Newton solve on the assembled sparse tangent.
//!
//! Sign conventions used throughout: stress is tension-positive, pore-water
//! pressure is compression-positive (matric suction is `-p_w`).

pub mod analytic;
pub mod assembly;
pub mod bc;
pub mod camclay;
pub mod cloud;
pub mod error;
pub mod family;
pub mod flow;
pub mod force_state;
pub mod kinematics;
pub mod linsolve;
pub mod math;
pub mod retention;
pub mod scenario;
pub mod shape;
pub mod snapshot;
pub mod solver;
pub mod state;
pub mod validation;

pub use assembly::{Assembler, DofMap, SparseSystem};
pub use bc::{BcKind, BoundaryCondition, InitialState, Region, Schedule};
pub use camclay::{FlowParams, MaterialParams, ReturnMapResult};
pub use cloud::{Label, LatticeSpec, PointCloud};
pub use error::{Error, Result};
pub use family::{InfluenceFunction, NeighborFamily};
pub use kinematics::{DofVector, NonlocalGradient};
pub use retention::{RetentionModel, Saturation, SwrcParams};
pub use scenario::{Preset, Scenario};
pub use shape::ShapeTensors;
pub use snapshot::Snapshot;
pub use solver::{LinearSolverKind, SolverConfig, StepReport, Trajectory};
pub use state::PointState;
